//! Tokenizer + pre-norm transformer encoder, lightweight decoder, shared
//! mask embedding and a linear classification head, all over one
//! [`ParamStore`].

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::params::{ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::tokenizer::{tokenize_graph, uniform, TokenizerConfig, TokenizerParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub layers: usize,
    pub d_model: usize,
    pub heads: usize,
    /// Feed-forward width as a multiple of `d_model`.
    pub ff_mult: usize,
    pub dropout: f64,
    pub decoder_layers: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            layers: 6,
            d_model: 256,
            heads: 8,
            ff_mult: 4,
            dropout: 0.5,
            decoder_layers: 2,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::InvalidArgument(format!(
                "d_model {} must be a positive multiple of heads {}",
                self.d_model, self.heads
            )));
        }
        if self.layers == 0 || self.ff_mult == 0 {
            return Err(Error::InvalidArgument("encoder needs >= 1 layer and ff_mult >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidArgument(format!("dropout {} not in [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// Everything needed to rebuild a model's parameter layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub n_channels: usize,
    /// Trial length the positional table is sized for.
    pub n_samples: usize,
    pub tokenizer: TokenizerConfig,
    pub encoder: EncoderConfig,
    /// Head output names, in logit order.
    pub classes: Vec<String>,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.tokenizer.validate()?;
        self.encoder.validate()?;
        if self.tokenizer.d_model != self.encoder.d_model {
            return Err(Error::InvalidArgument(format!(
                "tokenizer d_model {} differs from encoder d_model {}",
                self.tokenizer.d_model, self.encoder.d_model
            )));
        }
        if self.classes.len() < 2 {
            return Err(Error::InvalidArgument("classification head needs >= 2 classes".into()));
        }
        self.tokenizer.check_len(self.n_samples)
    }

    /// Positional capacity, `H'` for `n_samples`.
    pub fn max_tokens(&self) -> usize {
        self.tokenizer.n_tokens(self.n_samples)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Linear {
    /// `in x out`
    pub w: ParamId,
    /// `1 x out`
    pub b: ParamId,
}

impl Linear {
    fn register(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        Linear {
            w: store.add(format!("{name}/w"), uniform(rng, (fan_in, fan_out), bound)),
            b: store.add(format!("{name}/b"), Array2::zeros((1, fan_out))),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let w = g.param(self.w);
        let b = g.param(self.b);
        let y = g.matmul(x, w);
        g.add_row(y, b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Norm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl Norm {
    fn register(store: &mut ParamStore, name: &str, d: usize) -> Self {
        Norm {
            gamma: store.add(format!("{name}/gamma"), Array2::ones((1, d))),
            beta: store.add(format!("{name}/beta"), Array2::zeros((1, d))),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let gamma = g.param(self.gamma);
        let beta = g.param(self.beta);
        g.layer_norm(x, gamma, beta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Block {
    pub ln1: Norm,
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub ln2: Norm,
    pub ff1: Linear,
    pub ff2: Linear,
}

impl Block {
    fn register(store: &mut ParamStore, name: &str, cfg: &EncoderConfig, rng: &mut ChaCha8Rng) -> Self {
        let d = cfg.d_model;
        let h = d * cfg.ff_mult;
        Block {
            ln1: Norm::register(store, &format!("{name}/ln1"), d),
            wq: Linear::register(store, &format!("{name}/attn/wq"), d, d, rng),
            wk: Linear::register(store, &format!("{name}/attn/wk"), d, d, rng),
            wv: Linear::register(store, &format!("{name}/attn/wv"), d, d, rng),
            wo: Linear::register(store, &format!("{name}/attn/wo"), d, d, rng),
            ln2: Norm::register(store, &format!("{name}/ln2"), d),
            ff1: Linear::register(store, &format!("{name}/ff1"), d, h, rng),
            ff2: Linear::register(store, &format!("{name}/ff2"), h, d, rng),
        }
    }
}

/// Dropout source for a forward pass; `None` means evaluation mode.
pub struct Dropout<'r> {
    rate: f64,
    rng: Option<&'r mut ChaCha8Rng>,
}

impl<'r> Dropout<'r> {
    pub fn eval() -> Self {
        Dropout { rate: 0.0, rng: None }
    }

    pub fn train(rate: f64, rng: &'r mut ChaCha8Rng) -> Self {
        Dropout { rate, rng: Some(rng) }
    }

    /// Inverted dropout: survivors are scaled by `1/(1-rate)`.
    pub fn apply(&mut self, g: &mut Graph, x: Var) -> Var {
        let Some(rng) = self.rng.as_deref_mut() else { return x };
        if self.rate <= 0.0 {
            return x;
        }
        let keep = 1.0 - self.rate;
        let scale = 1.0 / keep;
        let mask = Array2::from_shape_fn(g.value(x).dim(), |_| {
            if rng.random::<f64>() < keep { scale } else { 0.0 }
        });
        g.mul_const(x, mask)
    }
}

/// Parameter handles for the whole network.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub tokenizer: TokenizerParams,
    /// `max_tokens x D`
    pub positional: ParamId,
    /// `1 x D`
    pub mask_embedding: ParamId,
    pub encoder: Vec<Block>,
    pub encoder_norm: Norm,
    pub decoder: Vec<Block>,
    pub decoder_norm: Norm,
    pub decoder_out: Linear,
    pub head: Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub layout: Layout,
}

fn normal(rng: &mut ChaCha8Rng, shape: (usize, usize), std: f64) -> Array2<f64> {
    let dist = Normal::new(0.0, std).expect("positive std");
    Array2::from_shape_fn(shape, |_| dist.sample(rng))
}

impl ModelState {
    /// Fresh parameters, fully determined by `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::default();
        let d = config.encoder.d_model;
        let tokenizer = TokenizerParams::register(&mut store, config.tokenizer, config.n_channels, &mut rng)?;
        let positional = store.add("positional", normal(&mut rng, (config.max_tokens(), d), 0.02));
        let mask_embedding = store.add("mask_embedding", normal(&mut rng, (1, d), 0.02));
        let encoder = (0..config.encoder.layers)
            .map(|i| Block::register(&mut store, &format!("encoder/{i}"), &config.encoder, &mut rng))
            .collect();
        let encoder_norm = Norm::register(&mut store, "encoder/norm", d);
        let decoder = (0..config.encoder.decoder_layers)
            .map(|i| Block::register(&mut store, &format!("decoder/{i}"), &config.encoder, &mut rng))
            .collect();
        let decoder_norm = Norm::register(&mut store, "decoder/norm", d);
        let decoder_out = Linear::register(&mut store, "decoder/out", d, d, &mut rng);
        let head = Linear::register(&mut store, "head", d, config.classes.len(), &mut rng);
        Ok(ModelState {
            config,
            params: store,
            layout: Layout {
                tokenizer,
                positional,
                mask_embedding,
                encoder,
                encoder_norm,
                decoder,
                decoder_norm,
                decoder_out,
                head,
            },
        })
    }

    pub fn classes(&self) -> &[String] {
        &self.config.classes
    }

    pub fn n_classes(&self) -> usize {
        self.config.classes.len()
    }

    /// Replaces the head with a freshly initialized `D -> classes.len()` map;
    /// every other parameter is kept.
    pub fn reset_head(&mut self, classes: Vec<String>, seed: u64) -> Result<()> {
        if classes.len() < 2 {
            return Err(Error::InvalidArgument("classification head needs >= 2 classes".into()));
        }
        let d = self.config.encoder.d_model;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (d as f64).sqrt();
        self.params.set(self.layout.head.w, uniform(&mut rng, (d, classes.len()), bound));
        self.params.set(self.layout.head.b, Array2::zeros((1, classes.len())));
        self.config.classes = classes;
        Ok(())
    }

    /// Zeroes the decoder's final projection, so every reconstruction is 0.
    pub fn zero_decoder_output(&mut self) {
        let (w, b) = (self.layout.decoder_out.w, self.layout.decoder_out.b);
        self.params.value_mut(w).fill(0.0);
        self.params.value_mut(b).fill(0.0);
    }

    pub fn tokens(&self, g: &mut Graph, x: &Array2<f64>) -> Result<Var> {
        tokenize_graph(g, x, &self.layout.tokenizer)
    }

    /// Rows listed in `mask` replaced by the shared mask embedding.
    pub fn mask_apply(&self, g: &mut Graph, z: Var, mask: &[usize]) -> Result<Var> {
        let h = g.value(z).nrows();
        if let Some(&bad) = mask.iter().find(|&&i| i >= h) {
            return Err(Error::InvalidArgument(format!("mask index {bad} out of range for {h} tokens")));
        }
        if mask.is_empty() {
            return Ok(z);
        }
        let m = g.param(self.layout.mask_embedding);
        Ok(g.replace_rows(z, m, mask))
    }

    fn block(&self, g: &mut Graph, b: &Block, x: Var, drop: &mut Dropout, attn: &mut Vec<Var>) -> Var {
        let cfg = &self.config.encoder;
        let dh = cfg.d_model / cfg.heads;
        let h = b.ln1.forward(g, x);
        let q = b.wq.forward(g, h);
        let k = b.wk.forward(g, h);
        let v = b.wv.forward(g, h);
        let mut heads = Vec::with_capacity(cfg.heads);
        for i in 0..cfg.heads {
            let qi = g.slice_cols(q, i * dh, dh);
            let ki = g.slice_cols(k, i * dh, dh);
            let vi = g.slice_cols(v, i * dh, dh);
            let scores = g.matmul_t(qi, ki);
            let scores = g.scale(scores, 1.0 / (dh as f64).sqrt());
            let a = g.softmax_rows(scores);
            attn.push(a);
            heads.push(g.matmul(a, vi));
        }
        let cat = if heads.len() == 1 { heads[0] } else { g.concat_cols(&heads) };
        let o = b.wo.forward(g, cat);
        let o = drop.apply(g, o);
        let x = g.add(x, o);
        let h = b.ln2.forward(g, x);
        let f = b.ff1.forward(g, h);
        let f = g.gelu(f);
        let f = b.ff2.forward(g, f);
        let f = drop.apply(g, f);
        g.add(x, f)
    }

    /// Encoder over `H' x D` tokens; also returns every attention map.
    pub fn encode_traced(&self, g: &mut Graph, z: Var, drop: &mut Dropout) -> Result<(Var, Vec<Var>)> {
        let h = g.value(z).nrows();
        let cap = self.config.max_tokens();
        if h > cap {
            return Err(Error::ShapeMismatch(format!("{h} tokens exceed positional capacity {cap}")));
        }
        let pos = g.param(self.layout.positional);
        let pos = g.slice_rows(pos, 0, h);
        let mut x = g.add(z, pos);
        let mut attn = Vec::new();
        for b in &self.layout.encoder {
            x = self.block(g, b, x, drop, &mut attn);
        }
        Ok((self.layout.encoder_norm.forward(g, x), attn))
    }

    pub fn encode(&self, g: &mut Graph, z: Var, drop: &mut Dropout) -> Result<Var> {
        Ok(self.encode_traced(g, z, drop)?.0)
    }

    /// One reconstruction per position.
    pub fn decode(&self, g: &mut Graph, c: Var, drop: &mut Dropout) -> Result<Var> {
        let d = self.config.encoder.d_model;
        if g.value(c).ncols() != d {
            return Err(Error::ShapeMismatch(format!("decoder input width {} != {d}", g.value(c).ncols())));
        }
        let mut x = c;
        let mut attn = Vec::new();
        for b in &self.layout.decoder {
            x = self.block(g, b, x, drop, &mut attn);
        }
        let x = self.layout.decoder_norm.forward(g, x);
        Ok(self.layout.decoder_out.forward(g, x))
    }

    /// Mean over tokens, then the head: `1 x classes` logits.
    pub fn classify(&self, g: &mut Graph, c: Var) -> Var {
        let v = g.mean_rows(c);
        self.layout.head.forward(g, v)
    }

    /// Evaluation-mode logits for one trial.
    pub fn logits(&self, x: &Array2<f64>) -> Result<Vec<f64>> {
        let mut g = Graph::new(&self.params);
        let z = self.tokens(&mut g, x)?;
        let c = self.encode(&mut g, z, &mut Dropout::eval())?;
        let s = self.classify(&mut g, c);
        Ok(g.value(s).row(0).to_vec())
    }

    pub fn predict(&self, x: &Array2<f64>) -> Result<usize> {
        Ok(argmax(&self.logits(x)?))
    }
}

/// Index of the largest value; the first one wins ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Graph nodes of one pretraining step.
pub struct LossNodes {
    pub total: Var,
    pub rec: Option<Var>,
    pub cls: Var,
}

/// Joint objective on one trial: masked branch (skipped when `mask` is
/// `None`) → decoder → reconstruction of the masked tokens, plus the unmasked
/// branch → pooled logits → cross-entropy. Reconstruction targets are the
/// tokenizer's output held fixed (no gradient through the target).
pub fn pretrain_loss(
    model: &ModelState,
    g: &mut Graph,
    x: &Array2<f64>,
    label: usize,
    mask: Option<&[usize]>,
    drop: &mut Dropout,
) -> Result<LossNodes> {
    if label >= model.n_classes() {
        return Err(Error::InvalidArgument(format!(
            "label {label} outside a {}-class head",
            model.n_classes()
        )));
    }
    let z = model.tokens(g, x)?;
    let rec = match mask {
        Some(rows) => {
            let target = g.value(z).clone();
            let masked = model.mask_apply(g, z, rows)?;
            let c = model.encode(g, masked, drop)?;
            let z_hat = model.decode(g, c, drop)?;
            Some(g.masked_mse(z_hat, target, rows))
        }
        None => None,
    };
    let c = model.encode(g, z, drop)?;
    let logits = model.classify(g, c);
    let cls = g.cross_entropy(logits, label);
    let total = match rec {
        Some(r) => g.add(r, cls),
        None => cls,
    };
    Ok(LossNodes { total, rec, cls })
}

/// Supervised-only objective used downstream.
pub fn classification_loss(
    model: &ModelState,
    g: &mut Graph,
    x: &Array2<f64>,
    label: usize,
    drop: &mut Dropout,
) -> Result<Var> {
    Ok(pretrain_loss(model, g, x, label, None, drop)?.cls)
}

/// Value-level losses, for callers outside a graph.
pub mod loss {
    use super::*;

    /// `(1/|M|) sum_{i in M} ||z_hat_i - z_i||^2`, 0 for an empty mask.
    pub fn rec_loss(z_hat: &Array2<f64>, z: &Array2<f64>, mask: &[usize]) -> Result<f64> {
        if z_hat.dim() != z.dim() {
            return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", z_hat.dim(), z.dim())));
        }
        if let Some(&bad) = mask.iter().find(|&&i| i >= z.nrows()) {
            return Err(Error::InvalidArgument(format!("mask index {bad} out of range")));
        }
        let store = ParamStore::default();
        let mut g = Graph::new(&store);
        let p = g.constant(z_hat.clone());
        let l = g.masked_mse(p, z.clone(), mask);
        Ok(g.scalar(l))
    }

    /// `-log softmax(logits)[y]`.
    pub fn ce_loss(logits: &[f64], y: usize) -> Result<f64> {
        if y >= logits.len() {
            return Err(Error::InvalidArgument(format!("label {y} outside {} logits", logits.len())));
        }
        let store = ParamStore::default();
        let mut g = Graph::new(&store);
        let s = g.constant(Array2::from_shape_vec((1, logits.len()), logits.to_vec()).expect("row"));
        let l = g.cross_entropy(s, y);
        Ok(g.scalar(l))
    }

    pub fn joint_loss(rec: f64, cls: f64) -> f64 {
        rec + cls
    }

    /// Mean of the rows of `c`.
    pub fn pool_tokens(c: &Array2<f64>) -> Result<Vec<f64>> {
        if c.nrows() == 0 {
            return Err(Error::ShapeMismatch("cannot pool an empty sequence".into()));
        }
        let store = ParamStore::default();
        let mut g = Graph::new(&store);
        let v = g.constant(c.clone());
        let m = g.mean_rows(v);
        Ok(g.value(m).row(0).to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::loss::*;
    use super::*;
    use crate::nn::params::Gradients;
    use ndarray::array;

    pub(crate) fn micro_config() -> ModelConfig {
        ModelConfig {
            n_channels: 3,
            n_samples: 40,
            tokenizer: TokenizerConfig { k_t: 5, s_t: 5, features: 2, pool: 2, d_model: 8 },
            encoder: EncoderConfig { layers: 1, d_model: 8, heads: 2, ff_mult: 4, dropout: 0.0, decoder_layers: 1 },
            classes: vec!["left_hand".into(), "right_hand".into(), "feet".into()],
        }
    }

    fn input(seed: u64, c: usize, t: usize) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((c, t), |_| rng.random_range(-1.0..1.0))
    }

    fn loss_and_grads(m: &ModelState, x: &Array2<f64>, mask: Option<&[usize]>) -> (f64, f64, f64, Gradients) {
        let mut g = Graph::new(&m.params);
        let n = pretrain_loss(m, &mut g, x, 1, mask, &mut Dropout::eval()).unwrap();
        let rec = n.rec.map(|r| g.scalar(r)).unwrap_or(0.0);
        (g.scalar(n.total), rec, g.scalar(n.cls), g.backward(n.total))
    }

    /// Loss with the reconstruction target frozen at `target`.
    fn frozen_loss(m: &ModelState, x: &Array2<f64>, mask: &[usize], target: &Array2<f64>) -> f64 {
        let mut g = Graph::new(&m.params);
        let z = m.tokens(&mut g, x).unwrap();
        let masked = m.mask_apply(&mut g, z, mask).unwrap();
        let mut d = Dropout::eval();
        let c = m.encode(&mut g, masked, &mut d).unwrap();
        let zh = m.decode(&mut g, c, &mut d).unwrap();
        let rec = g.masked_mse(zh, target.clone(), mask);
        let c2 = m.encode(&mut g, z, &mut d).unwrap();
        let s = m.classify(&mut g, c2);
        let cls = g.cross_entropy(s, 1);
        g.scalar(rec) + g.scalar(cls)
    }

    #[test]
    fn micro_model_gradients_match_finite_differences() {
        let mut m = ModelState::new(micro_config(), 3).unwrap();
        assert_eq!(m.config.max_tokens(), 4);
        let x = input(1, 3, 40);
        let mask = [0usize, 2];
        let (_, _, _, analytic) = loss_and_grads(&m, &x, Some(&mask));
        let target = {
            let mut g = Graph::new(&m.params);
            let z = m.tokens(&mut g, &x).unwrap();
            g.value(z).clone()
        };
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for id in m.params.ids().collect::<Vec<_>>() {
            let shape = m.params.value(id).dim();
            for i in 0..shape.0 {
                for j in 0..shape.1 {
                    let orig = m.params.value(id)[[i, j]];
                    m.params.value_mut(id)[[i, j]] = orig + h;
                    let up = frozen_loss(&m, &x, &mask, &target);
                    m.params.value_mut(id)[[i, j]] = orig - h;
                    let down = frozen_loss(&m, &x, &mask, &target);
                    m.params.value_mut(id)[[i, j]] = orig;
                    let num = (up - down) / (2.0 * h);
                    let ana = analytic.get(id)[[i, j]];
                    let err = (num - ana).abs() / num.abs().max(ana.abs()).max(1e-6);
                    assert!(err < 1e-4, "{}[{i},{j}]: analytic {ana} numeric {num}", m.params.name(id));
                    worst = worst.max(err);
                }
            }
        }
        assert!(worst < 1e-4);
    }

    #[test]
    fn joint_loss_is_exact_sum_and_gradients_split() {
        let m = ModelState::new(micro_config(), 4).unwrap();
        let x = input(2, 3, 40);
        let (total, rec, cls, g_joint) = loss_and_grads(&m, &x, Some(&[1, 3]));
        assert_eq!(total, rec + cls);
        assert_eq!(joint_loss(rec, cls), total);
        let (cls_only, _, _, g_cls) = loss_and_grads(&m, &x, None);
        assert_eq!(cls_only, cls);
        // head gets nothing from reconstruction; decoder gets nothing from cls
        assert_eq!(g_joint.get(m.layout.head.w), g_cls.get(m.layout.head.w));
        assert!(g_cls.get(m.layout.decoder_out.w).iter().all(|&v| v == 0.0));
        assert!(g_joint.get(m.layout.decoder_out.w).iter().any(|&v| v != 0.0));
    }

    #[test]
    fn loss_values() {
        assert!((ce_loss(&[0.0; 4], 2).unwrap() - 4f64.ln()).abs() < 1e-9);
        assert!((ce_loss(&[1.0, 0.0], 0).unwrap() - 0.313_261_687_518_222_8).abs() < 1e-12);
        let shifted = ce_loss(&[101.0, 100.0], 0).unwrap();
        assert!((shifted - ce_loss(&[1.0, 0.0], 0).unwrap()).abs() < 1e-12);
        assert!(ce_loss(&[1000.0, -1000.0], 1).unwrap().is_finite());

        let z = array![[1.0, 2.0], [0.0, 0.0]];
        assert_eq!(rec_loss(&z, &z, &[0, 1]).unwrap(), 0.0);
        let zh = array![[4.0, 6.0], [0.0, 0.0]];
        assert_eq!(rec_loss(&zh, &z, &[0]).unwrap(), 25.0);
        let zh2 = array![[7.0, 10.0], [0.0, 0.0]];
        assert_eq!(rec_loss(&zh2, &z, &[0]).unwrap(), 100.0);
        assert_eq!(rec_loss(&zh, &z, &[]).unwrap(), 0.0);
        assert!(rec_loss(&zh, &z, &[2]).is_err());

        assert_eq!(joint_loss(0.0, 0.7), 0.7);
        assert_eq!(joint_loss(0.5, 1.0), 1.5);

        assert_eq!(pool_tokens(&array![[1.0, 0.0], [0.0, 1.0]]).unwrap(), vec![0.5, 0.5]);
        assert_eq!(pool_tokens(&array![[3.0, -1.0], [3.0, -1.0]]).unwrap(), vec![3.0, -1.0]);
        assert!(pool_tokens(&Array2::zeros((0, 2))).is_err());
    }

    #[test]
    fn perfect_reconstruction_gives_zero_rec_gradient() {
        let mut m = ModelState::new(micro_config(), 5).unwrap();
        m.zero_decoder_output();
        // zero input and zero biases -> zero tokens -> zero decoder output matches
        let x = Array2::zeros((3, 40));
        let mut g = Graph::new(&m.params);
        let z = m.tokens(&mut g, &x).unwrap();
        let target = g.value(z).clone();
        let masked = m.mask_apply(&mut g, z, &[1]).unwrap();
        let c = m.encode(&mut g, masked, &mut Dropout::eval()).unwrap();
        let zh = m.decode(&mut g, c, &mut Dropout::eval()).unwrap();
        let rec = g.masked_mse(zh, target, &[1]);
        assert_eq!(g.scalar(rec), 0.0);
        let grads = g.backward(rec);
        assert!(grads.iter().all(|a| a.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn mask_apply_contract() {
        let m = ModelState::new(micro_config(), 6).unwrap();
        let mut g = Graph::new(&m.params);
        let z = g.constant(Array2::from_shape_fn((4, 8), |(i, j)| (i * 8 + j) as f64));
        assert_eq!(m.mask_apply(&mut g, z, &[]).unwrap(), z);
        let out = m.mask_apply(&mut g, z, &[0, 3]).unwrap();
        let emb = m.params.value(m.layout.mask_embedding).row(0).to_owned();
        assert_eq!(g.value(out).row(0), emb);
        assert_eq!(g.value(out).row(3), emb);
        assert_eq!(g.value(out).row(1), g.value(z).row(1));
        assert!(m.mask_apply(&mut g, z, &[4]).is_err());
    }

    #[test]
    fn zero_decoder_projection_outputs_zero() {
        let mut m = ModelState::new(micro_config(), 7).unwrap();
        m.zero_decoder_output();
        let mut g = Graph::new(&m.params);
        let c = g.constant(input(3, 4, 8));
        let out = m.decode(&mut g, c, &mut Dropout::eval()).unwrap();
        assert_eq!(g.value(out).dim(), (4, 8));
        assert!(g.value(out).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn attention_rows_sum_to_one_and_eval_is_pure() {
        let m = ModelState::new(micro_config(), 8).unwrap();
        let x = input(4, 3, 40);
        let mut g = Graph::new(&m.params);
        let z = m.tokens(&mut g, &x).unwrap();
        let (c1, attn) = m.encode_traced(&mut g, z, &mut Dropout::eval()).unwrap();
        assert_eq!(attn.len(), 2);
        for a in attn {
            for row in g.value(a).rows() {
                assert!((row.sum() - 1.0).abs() < 1e-6);
            }
        }
        let c2 = m.encode(&mut g, z, &mut Dropout::eval()).unwrap();
        assert_eq!(g.value(c1), g.value(c2));
        assert_eq!(m.logits(&x).unwrap(), m.logits(&x).unwrap());
    }

    #[test]
    fn permutation_equivariance() {
        let mut m = ModelState::new(micro_config(), 9).unwrap();
        let tokens = input(5, 4, 8);
        let perm = [2usize, 0, 3, 1];
        let run = |m: &ModelState, t: &Array2<f64>| {
            let mut g = Graph::new(&m.params);
            let z = g.constant(t.clone());
            let c = m.encode(&mut g, z, &mut Dropout::eval()).unwrap();
            g.value(c).clone()
        };
        let base = run(&m, &tokens);
        let permute = |a: &Array2<f64>| Array2::from_shape_fn(a.dim(), |(i, j)| a[[perm[i], j]]);
        let pos = m.params.value(m.layout.positional).clone();
        m.params.set(m.layout.positional, permute(&pos));
        let out = run(&m, &permute(&tokens));
        let expect = permute(&base);
        assert!((&out - &expect).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn capacity_is_enforced() {
        let m = ModelState::new(micro_config(), 10).unwrap();
        let mut g = Graph::new(&m.params);
        let z = g.constant(Array2::zeros((5, 8)));
        assert!(m.encode(&mut g, z, &mut Dropout::eval()).is_err());
    }

    #[test]
    fn dropout_is_inverted_and_unbiased() {
        let store = ParamStore::default();
        let rate = 0.5;
        let draws = 1000;
        let mut sum = 0.0;
        for s in 0..draws {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let mut g = Graph::new(&store);
            let x = g.constant(Array2::ones((1, 1)));
            let y = Dropout::train(rate, &mut rng).apply(&mut g, x);
            let v = g.scalar(y);
            assert!(v == 0.0 || v == 2.0);
            sum += v;
        }
        let mean = sum / draws as f64;
        // each draw is 2*Bernoulli(0.5): sd 1, so sd of the mean is 1/sqrt(n)
        let sigma = (rate / (1.0 - rate)).sqrt() / (draws as f64).sqrt();
        assert!((mean - 1.0).abs() < 3.0 * sigma, "{mean}");
    }

    #[test]
    fn head_swap_keeps_body() {
        let mut m = ModelState::new(micro_config(), 11).unwrap();
        let body = m.params.value(m.layout.encoder[0].wq.w).clone();
        m.reset_head(vec!["a".into(), "b".into()], 1).unwrap();
        assert_eq!(m.params.value(m.layout.head.w).dim(), (8, 2));
        assert_eq!(m.params.value(m.layout.encoder[0].wq.w), &body);
        assert_eq!(m.logits(&input(6, 3, 40)).unwrap().len(), 2);
    }

    #[test]
    fn config_validation() {
        let mut c = micro_config();
        c.encoder.heads = 3;
        assert!(ModelState::new(c, 0).is_err());
        let mut c = micro_config();
        c.encoder.dropout = 1.0;
        assert!(c.validate().is_err());
        let mut c = micro_config();
        c.tokenizer.d_model = 16;
        assert!(c.validate().is_err());
    }

    #[test]
    fn argmax_first_wins() {
        assert_eq!(argmax(&[0.1, 0.5, 0.5]), 1);
        assert_eq!(argmax(&[3.0]), 0);
    }
}
