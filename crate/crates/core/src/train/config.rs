use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::EncoderConfig;
use crate::tokenizer::TokenizerConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    /// Reconstruction + classification pretraining, then fine-tuning.
    Full,
    /// Classification-only pretraining.
    NoSelfsup,
    /// Fine-tuning from random initialization.
    NoPretrain,
}

impl Ablation {
    pub const ALL: [Ablation; 3] = [Ablation::NoPretrain, Ablation::NoSelfsup, Ablation::Full];

    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoSelfsup => "no_selfsup",
            Ablation::NoPretrain => "no_pretrain",
        }
    }

    /// Row label in ablation tables.
    pub fn table_label(self) -> &'static str {
        match self {
            Ablation::Full => "MIRepNet",
            Ablation::NoSelfsup => "w/o Self-supervised",
            Ablation::NoPretrain => "w/o Pre-training",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Ablation::Full),
            "no_selfsup" => Ok(Ablation::NoSelfsup),
            "no_pretrain" => Ok(Ablation::NoPretrain),
            _ => Err(Error::InvalidArgument(format!(
                "unknown ablation {s:?} (full, no_selfsup, no_pretrain)"
            ))),
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub alpha: f64,
    pub lr: f64,
    pub batch: usize,
    /// Mini-batch size for fine-tuning; calibration sets are small.
    pub finetune_batch: usize,
    pub epochs_pretrain: usize,
    pub epochs_finetune: usize,
    /// Epoch whose test accuracy is the headline number.
    pub report_epoch: usize,
    pub seeds: Vec<u64>,
    pub ablation: Ablation,
    pub finetune_fraction: f64,
    /// Fine-tune the head only.
    pub freeze_body: bool,
    pub tokenizer: TokenizerConfig,
    pub encoder: EncoderConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 0.5,
            lr: 1e-3,
            batch: 64,
            finetune_batch: 64,
            epochs_pretrain: 100,
            epochs_finetune: 20,
            report_epoch: 10,
            seeds: vec![0, 1, 2],
            ablation: Ablation::Full,
            finetune_fraction: 0.3,
            freeze_body: false,
            tokenizer: TokenizerConfig::default(),
            encoder: EncoderConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Small model and short schedules sized for a single CPU core. The
    /// tokenizer strides 20 samples and pools pairs, so 4 s at 250 Hz still
    /// gives 25 tokens while average pooling passes most of the 8-13 Hz band.
    pub fn desk() -> Self {
        TrainConfig {
            batch: 32,
            finetune_batch: 8,
            epochs_pretrain: 30,
            epochs_finetune: 10,
            tokenizer: TokenizerConfig {
                s_t: 20,
                pool: 2,
                d_model: 32,
                ..TokenizerConfig::default()
            },
            encoder: EncoderConfig {
                layers: 2,
                d_model: 32,
                heads: 4,
                ff_mult: 2,
                dropout: 0.1,
                decoder_layers: 1,
            },
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidArgument(format!("alpha {} not in (0, 1)", self.alpha)));
        }
        if !(self.finetune_fraction > 0.0 && self.finetune_fraction < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "finetune_fraction {} not in (0, 1)",
                self.finetune_fraction
            )));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("lr {} must be finite and >= 0", self.lr)));
        }
        if self.batch == 0 || self.finetune_batch == 0 {
            return Err(Error::InvalidArgument("batch sizes must be >= 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidArgument("at least one seed is required".into()));
        }
        if self.report_epoch == 0 {
            return Err(Error::InvalidArgument("report_epoch must be >= 1".into()));
        }
        self.tokenizer.validate()?;
        self.encoder.validate()?;
        if self.tokenizer.d_model != self.encoder.d_model {
            return Err(Error::InvalidArgument(format!(
                "tokenizer d_model {} differs from encoder d_model {}",
                self.tokenizer.d_model, self.encoder.d_model
            )));
        }
        Ok(())
    }
}
