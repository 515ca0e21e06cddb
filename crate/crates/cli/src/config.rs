//! Run configuration: preset, then config file, then command-line flags.
//!
//! Config file (JSON, every key optional, unknown keys rejected):
//!
//! ```json
//! {
//!   "preset": "desk",
//!   "template": "standard",
//!   "harmonize": { "filter": { "order": 4, "low_hz": 4.0, "high_hz": 40.0 } },
//!   "train": { "alpha": 0.25, "seeds": [0, 1, 2] },
//!   "pretrain_data": ["runs/pre"],
//!   "downstream_data": ["runs/down"]
//! }
//! ```

use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use clap::{Args, ValueEnum};
use mirepnet::pipeline::HarmonizeConfig;
use mirepnet::train::{Ablation, TrainConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Full-size model and schedules.
    Standard,
    /// Small model and short schedules for a single CPU core.
    Desk,
}

impl Preset {
    fn base(self) -> TrainConfig {
        match self {
            Preset::Standard => TrainConfig::default(),
            Preset::Desk => TrainConfig::desk(),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Standard => "standard",
            Preset::Desk => "desk",
        })
    }
}

/// Electrode template names accepted in configs.
pub const TEMPLATES: [&str; 1] = ["standard"];

/// Config file as written by users; `train` is a partial overlay on the preset.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    preset: Option<Preset>,
    template: Option<String>,
    harmonize: Option<HarmonizeConfig>,
    train: Option<Value>,
    pretrain_data: Option<Vec<PathBuf>>,
    downstream_data: Option<Vec<PathBuf>>,
}

/// Fully resolved run configuration, echoed into every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedConfig {
    pub preset: Preset,
    pub template: String,
    pub harmonize: HarmonizeConfig,
    pub train: TrainConfig,
    pub pretrain_data: Vec<PathBuf>,
    pub downstream_data: Vec<PathBuf>,
}

/// Flags shared by every training command. Unset flags fall back to the
/// config file, then to the preset.
#[derive(Debug, Clone, Default, Args)]
pub struct TrainArgs {
    /// JSON config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Base hyperparameters [default: standard, or the config file's preset].
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Single seed; shorthand for --seed-list N [default: 0,1,2 from the preset].
    #[arg(long, conflicts_with = "seed_list")]
    pub seed: Option<u64>,
    /// Comma-separated seeds; results are aggregated over them [default: 0,1,2].
    #[arg(long, value_delimiter = ',')]
    pub seed_list: Option<Vec<u64>>,
    /// Mask ratio in (0, 1) [default: 0.5].
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Adam learning rate [default: 0.001].
    #[arg(long)]
    pub lr: Option<f64>,
    /// Pretraining mini-batch size [default: 64 standard, 32 desk].
    #[arg(long)]
    pub batch: Option<usize>,
    /// Fine-tuning mini-batch size [default: 64 standard, 8 desk].
    #[arg(long)]
    pub finetune_batch: Option<usize>,
    /// Pretraining epochs [default: 100 standard, 30 desk].
    #[arg(long)]
    pub epochs_pretrain: Option<usize>,
    /// Fine-tuning epochs [default: 20 standard, 10 desk].
    #[arg(long)]
    pub epochs_finetune: Option<usize>,
    /// Fine-tuning epoch whose accuracy is reported [default: 10].
    #[arg(long)]
    pub report_epoch: Option<usize>,
    /// Leading fraction of each downstream subject used for calibration [default: 0.3].
    #[arg(long)]
    pub finetune_fraction: Option<f64>,
    /// Variant: full, no_selfsup or no_pretrain [default: full].
    #[arg(long)]
    pub variant: Option<String>,
    /// Fine-tune only the classification head [default: off].
    #[arg(long)]
    pub freeze_body: bool,
    /// Harmonized pretraining dataset directory; repeatable [default: from config file].
    #[arg(long = "pretrain-data")]
    pub pretrain_data: Vec<PathBuf>,
    /// Downstream dataset directory in template space; repeatable [default: from config file].
    #[arg(long = "downstream")]
    pub downstream_data: Vec<PathBuf>,
}

/// Error in the configuration itself (exit code 2) as opposed to a failure
/// while running it.
#[derive(Debug)]
pub struct ConfigError(pub anyhow::Error);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.0)
    }
}

impl std::error::Error for ConfigError {}

fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

fn read_file(path: &Path) -> anyhow::Result<ConfigFile> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
}

fn resolve_inner(args: &TrainArgs) -> anyhow::Result<ResolvedConfig> {
    let file = match &args.config {
        Some(p) => read_file(p)?,
        None => ConfigFile::default(),
    };
    let preset = args.preset.or(file.preset).unwrap_or(Preset::Standard);
    let template = file.template.unwrap_or_else(|| TEMPLATES[0].to_string());
    if !TEMPLATES.contains(&template.as_str()) {
        bail!("unknown template {template:?} (known: {})", TEMPLATES.join(", "));
    }

    let mut train_value = serde_json::to_value(preset.base())?;
    if let Some(overlay) = file.train {
        if !overlay.is_object() {
            bail!("config key \"train\" must be an object");
        }
        merge(&mut train_value, overlay);
    }
    let mut train: TrainConfig = serde_json::from_value(train_value).context("config key \"train\"")?;

    if let Some(s) = args.seed {
        train.seeds = vec![s];
    }
    if let Some(s) = &args.seed_list {
        train.seeds = s.clone();
    }
    macro_rules! flag {
        ($($f:ident),*) => {$(
            if let Some(v) = args.$f {
                train.$f = v;
            }
        )*};
    }
    flag!(alpha, lr, batch, finetune_batch, epochs_pretrain, epochs_finetune, report_epoch, finetune_fraction);
    if let Some(v) = &args.variant {
        train.ablation = Ablation::parse(v).map_err(|e| anyhow!(e))?;
    }
    if args.freeze_body {
        train.freeze_body = true;
    }
    train.validate().map_err(|e| anyhow!(e))?;

    let pick = |flags: &[PathBuf], file: Option<Vec<PathBuf>>| {
        if flags.is_empty() {
            file.unwrap_or_default()
        } else {
            flags.to_vec()
        }
    };
    Ok(ResolvedConfig {
        preset,
        template,
        harmonize: file.harmonize.unwrap_or_default(),
        train,
        pretrain_data: pick(&args.pretrain_data, file.pretrain_data),
        downstream_data: pick(&args.downstream_data, file.downstream_data),
    })
}

pub fn resolve(args: &TrainArgs) -> Result<ResolvedConfig, ConfigError> {
    resolve_inner(args).map_err(ConfigError)
}

/// Harmonization settings from an optional config file (other keys are
/// validated but unused).
pub fn harmonize_from(path: Option<&Path>) -> Result<(HarmonizeConfig, String), ConfigError> {
    let file = match path {
        Some(p) => read_file(p).map_err(ConfigError)?,
        None => ConfigFile::default(),
    };
    let template = file.template.unwrap_or_else(|| TEMPLATES[0].to_string());
    if !TEMPLATES.contains(&template.as_str()) {
        return Err(ConfigError(anyhow!("unknown template {template:?}")));
    }
    Ok((file.harmonize.unwrap_or_default(), template))
}
