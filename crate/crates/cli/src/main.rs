//! `mirepnet`: synthesize, harmonize, pretrain, fine-tune and evaluate
//! motor-imagery EEG models from the command line.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{ConfigError, TrainArgs};

#[derive(Debug, Parser)]
#[command(name = "mirepnet", version, about = "Motor-imagery EEG harmonization and pretraining pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic two-class motor-imagery dataset.
    Synth(SynthArgs),
    /// Band-pass, resample, map onto the electrode template, screen and align a dataset.
    Preprocess(PreprocessArgs),
    /// Pretrain one model per seed on harmonized datasets.
    Pretrain(PretrainArgs),
    /// Fine-tune a pretrained checkpoint on each downstream subject.
    Finetune(FinetuneArgs),
    /// Score a checkpoint on downstream test trials without writing anything.
    Eval(EvalArgs),
    /// Pretrain and fine-tune the full model at several mask ratios.
    Sweep(SweepArgs),
    /// Compare the full model with its two ablations.
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Number of subjects.
    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u64).range(1..))]
    pub subjects: u64,
    /// Trials per class and subject.
    #[arg(long, default_value_t = 50, value_parser = clap::value_parser!(u64).range(1..))]
    pub trials_per_class: u64,
    /// Sampling rate in Hz.
    #[arg(long, default_value_t = 250.0)]
    pub fs: f64,
    /// Trial length in seconds.
    #[arg(long, default_value_t = 4.0)]
    pub duration: f64,
    /// Generator seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Dataset name recorded in the manifest.
    #[arg(long, default_value = "synth")]
    pub name: String,
    /// Prefix of generated subject ids.
    #[arg(long, default_value = "S")]
    pub prefix: String,
    /// Comma-separated electrode names [default: the 23-electrode template].
    #[arg(long, value_delimiter = ',')]
    pub channels: Option<Vec<String>>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    /// Raw dataset directory (holding manifest.json).
    #[arg(long)]
    pub input: PathBuf,
    /// Output directory for the harmonized dataset.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON config file; only its "harmonize" and "template" keys are used.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Prepare downstream data: template space only, no screening, no alignment.
    #[arg(long)]
    pub downstream: bool,
    /// Keep every subject [default: screening on].
    #[arg(long)]
    pub no_screening: bool,
    /// Minimum cross-validated CSP+LDA accuracy to keep a subject [default: 0.6].
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Cross-validation folds for screening [default: 5].
    #[arg(long)]
    pub folds: Option<usize>,
    /// Comma-separated class list labels are mapped into [default: the input's classes in unified order].
    #[arg(long, value_delimiter = ',')]
    pub classes: Option<Vec<String>>,
    /// Worker threads for per-trial preprocessing.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[command(flatten)]
    pub train: TrainArgs,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    #[command(flatten)]
    pub train: TrainArgs,
    /// Pretrained checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint to score.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Downstream dataset directory in template space.
    #[arg(long = "downstream")]
    pub downstream: PathBuf,
    /// Only this subject [default: all].
    #[arg(long)]
    pub subject: Option<String>,
    /// Calibration fraction; alignment is fit on it and the rest is scored.
    #[arg(long, default_value_t = 0.3)]
    pub finetune_fraction: f64,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub train: TrainArgs,
    /// Comma-separated mask ratios.
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.25,0.5,0.75,0.9")]
    pub alphas: Vec<f64>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub train: TrainArgs,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Preprocess(a) => commands::preprocess(a),
        Command::Pretrain(a) => commands::pretrain(a),
        Command::Finetune(a) => commands::finetune(a),
        Command::Eval(a) => commands::eval(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::Ablate(a) => commands::ablate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            if e.is::<ConfigError>() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

/// The error chain joined with ": ", skipping causes their parent already
/// prints.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if !out.contains(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
    }
    out
}
