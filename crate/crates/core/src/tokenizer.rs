//! Temporal–spatial convolutional tokenizer.
//!
//! `C x T` trial → grouped temporal convolution (kernels shared by every
//! channel, "same" padding, stride `s_t`) → full-height spatial convolution →
//! temporal average pooling → 1x1 projection to `D` features. Every stage is
//! linear, so with zero biases the whole map is linear in the input.
//!
//! Stages are graph operations so the same code serves inference and
//! training. Layouts inside the graph:
//! * temporal output `U`: `F x (C*W)`, column `c*W + w`
//! * rearranged `U'`: `(C*F) x W`, row `c*F + f`
//! * spatial output `S`: `F x W'` with `W' = W`
//! * tokens `Z`: `H' x D`

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Trial;
use crate::error::{Error, Result};
use crate::nn::graph::{Graph, Var};
use crate::nn::params::{ParamId, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TokenizerConfig {
    pub k_t: usize,
    pub s_t: usize,
    pub features: usize,
    pub pool: usize,
    pub d_model: usize,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        TokenizerConfig {
            k_t: 25,
            s_t: 5,
            features: 8,
            pool: 8,
            d_model: 256,
        }
    }
}

impl TokenizerConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("k_t", self.k_t),
            ("s_t", self.s_t),
            ("features", self.features),
            ("pool", self.pool),
            ("d_model", self.d_model),
        ] {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("tokenizer {name} must be >= 1")));
            }
        }
        Ok(())
    }

    /// `W = ceil(T / s_t)`.
    pub fn conv_len(&self, t: usize) -> usize {
        t.div_ceil(self.s_t)
    }

    /// `H' = floor(W / p)`.
    pub fn n_tokens(&self, t: usize) -> usize {
        self.conv_len(t) / self.pool
    }

    /// Checks that a `T`-sample trial yields at least one token.
    pub fn check_len(&self, t: usize) -> Result<()> {
        if t < self.k_t {
            return Err(Error::ShapeMismatch(format!(
                "trial has {t} samples, shorter than the temporal kernel ({})",
                self.k_t
            )));
        }
        let w = self.conv_len(t);
        if w < self.pool {
            return Err(Error::ShapeMismatch(format!(
                "{w} temporal positions cannot fill one pooling window of {}",
                self.pool
            )));
        }
        Ok(())
    }
}

/// `H' x D` token matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    pub tokens: Array2<f64>,
}

impl TokenSequence {
    pub fn new(tokens: Array2<f64>) -> Result<Self> {
        if tokens.nrows() == 0 {
            return Err(Error::ShapeMismatch("empty token sequence".into()));
        }
        if tokens.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite token".into()));
        }
        Ok(TokenSequence { tokens })
    }

    pub fn h_prime(&self) -> usize {
        self.tokens.nrows()
    }

    pub fn dim(&self) -> usize {
        self.tokens.ncols()
    }
}

/// Handles to the tokenizer's parameters inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TokenizerParams {
    pub config: TokenizerConfig,
    pub n_channels: usize,
    /// `F x k_t`, shared across channels
    pub temporal_w: ParamId,
    /// `F x 1`
    pub temporal_b: ParamId,
    /// `F x (C*F)`, columns indexed `c*F + f`
    pub spatial_w: ParamId,
    /// `F x 1`
    pub spatial_b: ParamId,
    /// `F x D`
    pub proj_w: ParamId,
    /// `1 x D`
    pub proj_b: ParamId,
}

pub(crate) fn uniform(rng: &mut impl Rng, shape: (usize, usize), bound: f64) -> Array2<f64> {
    Array2::from_shape_fn(shape, |_| rng.random_range(-bound..bound))
}

impl TokenizerParams {
    /// Registers freshly initialized parameters under `tokenizer/`. Weights
    /// are uniform in `±1/sqrt(fan_in)`, biases zero.
    pub fn register(
        store: &mut ParamStore,
        config: TokenizerConfig,
        n_channels: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        config.validate()?;
        if n_channels == 0 {
            return Err(Error::InvalidArgument("tokenizer needs at least one channel".into()));
        }
        let (f, k, d, c) = (config.features, config.k_t, config.d_model, n_channels);
        let tw = uniform(rng, (f, k), 1.0 / (k as f64).sqrt());
        let sw = uniform(rng, (f, c * f), 1.0 / ((c * f) as f64).sqrt());
        let pw = uniform(rng, (f, d), 1.0 / (f as f64).sqrt());
        Ok(TokenizerParams {
            config,
            n_channels,
            temporal_w: store.add("tokenizer/temporal/w", tw),
            temporal_b: store.add("tokenizer/temporal/b", Array2::zeros((f, 1))),
            spatial_w: store.add("tokenizer/spatial/w", sw),
            spatial_b: store.add("tokenizer/spatial/b", Array2::zeros((f, 1))),
            proj_w: store.add("tokenizer/proj/w", pw),
            proj_b: store.add("tokenizer/proj/b", Array2::zeros((1, d))),
        })
    }
}

/// Zero-padded patch matrix `k x (C*W)` for a "same" strided convolution:
/// entry `(j, c*W + w)` is `x[c, w*s - pad + j]`, with
/// `pad = floor(max((W-1)*s + k - T, 0) / 2)`.
pub fn conv_patches(x: &Array2<f64>, k: usize, s: usize) -> Array2<f64> {
    let (c, t) = x.dim();
    let w = t.div_ceil(s);
    let pad_total = ((w - 1) * s + k).saturating_sub(t);
    let pad = pad_total / 2;
    let mut out = Array2::zeros((k, c * w));
    for ch in 0..c {
        let row = x.row(ch);
        for pos in 0..w {
            let start = (pos * s) as isize - pad as isize;
            for j in 0..k {
                let idx = start + j as isize;
                if idx >= 0 && (idx as usize) < t {
                    out[[j, ch * w + pos]] = row[idx as usize];
                }
            }
        }
    }
    out
}

/// Grouped temporal convolution. Returns `U` as `F x (C*W)`.
pub fn temporal_embed(g: &mut Graph, x: &Array2<f64>, p: &TokenizerParams) -> Result<Var> {
    let (c, t) = x.dim();
    if c != p.n_channels {
        return Err(Error::ShapeMismatch(format!(
            "trial has {c} channels, tokenizer expects {}",
            p.n_channels
        )));
    }
    if t < p.config.k_t {
        return Err(Error::ShapeMismatch(format!(
            "trial has {t} samples, shorter than the temporal kernel ({})",
            p.config.k_t
        )));
    }
    let patches = g.constant(conv_patches(x, p.config.k_t, p.config.s_t));
    let w = g.param(p.temporal_w);
    let b = g.param(p.temporal_b);
    let u = g.matmul(w, patches);
    Ok(g.add_col(u, b))
}

/// `F x (C*W)` → `(C*F) x W`: each time step sees every (channel, map) pair.
pub fn rearrange(g: &mut Graph, u: Var, n_channels: usize) -> Result<Var> {
    let (f, cw) = g.value(u).dim();
    if n_channels == 0 || cw % n_channels != 0 {
        return Err(Error::ShapeMismatch(format!(
            "{cw} columns do not split into {n_channels} channels"
        )));
    }
    let w = cw / n_channels;
    let mut map = Vec::with_capacity(f * cw);
    for c in 0..n_channels {
        for fi in 0..f {
            for pos in 0..w {
                map.push(fi * cw + c * w + pos);
            }
        }
    }
    Ok(g.gather(u, map, (n_channels * f, w)))
}

/// Full-height spatial convolution, stride 1: `S = W_s U' + b_s`, `F x W`.
pub fn spatial_compress(g: &mut Graph, u_rearranged: Var, p: &TokenizerParams) -> Result<Var> {
    let rows = g.value(u_rearranged).nrows();
    let expected = p.n_channels * p.config.features;
    if rows != expected {
        return Err(Error::ShapeMismatch(format!(
            "spatial input has {rows} rows, expected {expected}"
        )));
    }
    let w = g.param(p.spatial_w);
    let b = g.param(p.spatial_b);
    let s = g.matmul(w, u_rearranged);
    Ok(g.add_col(s, b))
}

/// Average pooling (window = stride = p) then a 1x1 projection to D.
pub fn pool_project(g: &mut Graph, s: Var, p: &TokenizerParams) -> Result<Var> {
    let (f, w) = g.value(s).dim();
    if f != p.config.features {
        return Err(Error::ShapeMismatch(format!("{f} feature maps, expected {}", p.config.features)));
    }
    if w < p.config.pool {
        return Err(Error::ShapeMismatch(format!(
            "{w} temporal positions cannot fill one pooling window of {}",
            p.config.pool
        )));
    }
    let pooled = g.avg_pool_cols(s, p.config.pool);
    let pooled_t = g.transpose(pooled);
    let pw = g.param(p.proj_w);
    let pb = g.param(p.proj_b);
    let z = g.matmul(pooled_t, pw);
    Ok(g.add_row(z, pb))
}

/// Full tokenizer on a `C x T` matrix; returns the `H' x D` token node.
pub fn tokenize_graph(g: &mut Graph, x: &Array2<f64>, p: &TokenizerParams) -> Result<Var> {
    let u = temporal_embed(g, x, p)?;
    let u2 = rearrange(g, u, p.n_channels)?;
    let s = spatial_compress(g, u2, p)?;
    pool_project(g, s, p)
}

/// Tokens for a trial under the given parameter values.
pub fn tokenize(trial: &Trial, store: &ParamStore, p: &TokenizerParams) -> Result<TokenSequence> {
    let mut g = Graph::new(store);
    let z = tokenize_graph(&mut g, &trial.data, p)?;
    TokenSequence::new(g.value(z).clone())
}
