//! Pretrain → fine-tune grids (ablations, mask-ratio sweep) and their reports.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{Ablation, TrainConfig};
use super::loops::{finetune, prepare_downstream, pretrain, FinetuneEpoch, PretrainReport};
use crate::error::{Error, Result};
use crate::nn::checkpoint::{encode_checkpoint, save_checkpoint};
use crate::nn::ModelState;
use crate::pipeline::HarmonizedDataset;

/// Mask ratios of the robustness sweep.
pub const SWEEP_ALPHAS: [f64; 5] = [0.1, 0.25, 0.5, 0.75, 0.9];

pub const SPLIT_REPORT: &str = "report_epoch";
pub const SPLIT_BEST: &str = "best_epoch";

/// Pretraining datasets (aligned per session) and downstream datasets (in
/// template space, not yet aligned).
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub pretrain: Vec<HarmonizedDataset>,
    pub downstream: Vec<HarmonizedDataset>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub dataset: String,
    pub subject: String,
    pub seed: u64,
    pub variant: Ablation,
    pub alpha: f64,
    pub split: String,
    /// Percent.
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub dataset: String,
    pub variant: Ablation,
    pub label: String,
    pub alpha: f64,
    pub split: String,
    /// Per-seed mean over subjects, in seed order.
    pub per_seed: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneCurve {
    pub dataset: String,
    pub subject: String,
    pub seed: u64,
    pub variant: Ablation,
    pub alpha: f64,
    pub epochs: Vec<FinetuneEpoch>,
}

/// Hash of the calibration/test membership of one subject under one run;
/// identical across variants by construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRecord {
    pub dataset: String,
    pub subject: String,
    pub variant: Ablation,
    pub seed: u64,
    pub n_calibration: usize,
    pub n_test: usize,
    pub hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRecord {
    pub variant: Ablation,
    pub alpha: f64,
    pub seed: u64,
    pub sha256: String,
}

/// Everything a grid run produced. Contains no timestamps, so two runs with
/// the same inputs serialize identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: TrainConfig,
    /// Retained pretraining subjects per dataset.
    pub retained: BTreeMap<String, Vec<String>>,
    pub rows: Vec<ResultRow>,
    pub summary: Vec<SummaryRow>,
    pub pretrain_curves: Vec<PretrainReport>,
    pub finetune_curves: Vec<FinetuneCurve>,
    pub splits: Vec<SplitRecord>,
    pub checkpoints: Vec<CheckpointRecord>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn split_hash(calib: &[crate::data::Trial], test: &[crate::data::Trial]) -> String {
    let mut h = Sha256::new();
    for (tag, set) in [(b'c', calib), (b't', test)] {
        for t in set {
            h.update([tag]);
            h.update(t.subject_id.as_bytes());
            h.update(t.session_id.as_bytes());
            for v in t.data.iter() {
                h.update(v.to_le_bytes());
            }
        }
    }
    hex(&h.finalize())
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, 0.0);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Mean ± sample std over seeds of each seed's subject-averaged accuracy.
pub fn summarize(rows: &[ResultRow]) -> Vec<SummaryRow> {
    type Key = (String, Ablation, u64, String);
    let mut groups: BTreeMap<Key, BTreeMap<u64, Vec<f64>>> = BTreeMap::new();
    for r in rows {
        groups
            .entry((r.dataset.clone(), r.variant, r.alpha.to_bits(), r.split.clone()))
            .or_default()
            .entry(r.seed)
            .or_default()
            .push(r.accuracy);
    }
    groups
        .into_iter()
        .map(|((dataset, variant, alpha, split), seeds)| {
            let per_seed: Vec<f64> = seeds.values().map(|v| v.iter().sum::<f64>() / v.len() as f64).collect();
            let (mean, std) = mean_std(&per_seed);
            SummaryRow {
                dataset,
                variant,
                label: variant.table_label().to_string(),
                alpha: f64::from_bits(alpha),
                split,
                per_seed,
                mean,
                std,
            }
        })
        .collect()
}

impl RunReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Flat CSV: `dataset,subject,seed,variant,alpha,split,accuracy`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["dataset", "subject", "seed", "variant", "alpha", "split", "accuracy"])
            .map_err(csv_err)?;
        for r in &self.rows {
            w.write_record([
                r.dataset.clone(),
                r.subject.clone(),
                r.seed.to_string(),
                r.variant.to_string(),
                r.alpha.to_string(),
                r.split.clone(),
                format!("{:.4}", r.accuracy),
            ])
            .map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }

    /// Summary for one (dataset, variant, alpha, split), if present.
    pub fn mean_of(&self, dataset: &str, variant: Ablation, alpha: f64, split: &str) -> Option<&SummaryRow> {
        self.summary
            .iter()
            .find(|s| s.dataset == dataset && s.variant == variant && s.alpha == alpha && s.split == split)
    }

    /// Mean over downstream datasets of the summary means.
    pub fn overall_mean(&self, variant: Ablation, alpha: f64, split: &str) -> Option<f64> {
        let v: Vec<f64> = self
            .summary
            .iter()
            .filter(|s| s.variant == variant && s.alpha == alpha && s.split == split)
            .map(|s| s.mean)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::InvalidArgument(format!("csv: {e}"))
}

fn empty_report(cfg: &TrainConfig, retained: BTreeMap<String, Vec<String>>) -> RunReport {
    RunReport {
        config: cfg.clone(),
        retained,
        rows: Vec::new(),
        summary: Vec::new(),
        pretrain_curves: Vec::new(),
        finetune_curves: Vec::new(),
        splits: Vec::new(),
        checkpoints: Vec::new(),
    }
}

/// Fine-tunes a copy of `model` on every downstream subject with one seed,
/// labelling rows with `cfg.ablation` and `cfg.alpha`. Fine-tuned models are
/// saved to `save_dir` when given.
fn finetune_seed(
    model: &ModelState,
    downstream: &[HarmonizedDataset],
    cfg: &TrainConfig,
    seed: u64,
    report: &mut RunReport,
    save_dir: Option<&Path>,
) -> Result<()> {
    let (variant, alpha) = (cfg.ablation, cfg.alpha);
    for ds in downstream {
        for subject in &ds.subjects {
            let split = prepare_downstream(subject, cfg.finetune_fraction)?;
            report.splits.push(SplitRecord {
                dataset: ds.name.clone(),
                subject: subject.subject_id.clone(),
                variant,
                seed,
                n_calibration: split.calibration.len(),
                n_test: split.test.len(),
                hash: split_hash(&split.calibration, &split.test),
            });
            let out = finetune(model.clone(), &split.calibration, &split.test, &ds.classes, cfg, seed)?;
            log::info!(
                "{variant} alpha {alpha} seed {seed} {}/{}: {:.2}% at report epoch, best {:.2}% (epoch {})",
                ds.name,
                subject.subject_id,
                out.report_accuracy,
                out.best_accuracy,
                out.best_epoch
            );
            for (split_name, acc) in [(SPLIT_REPORT, out.report_accuracy), (SPLIT_BEST, out.best_accuracy)] {
                report.rows.push(ResultRow {
                    dataset: ds.name.clone(),
                    subject: subject.subject_id.clone(),
                    seed,
                    variant,
                    alpha,
                    split: split_name.to_string(),
                    accuracy: acc,
                });
            }
            if let Some(dir) = save_dir {
                std::fs::create_dir_all(dir)?;
                let bytes = encode_checkpoint(&out.model)?;
                std::fs::write(dir.join(format!("finetuned_{}_{}_s{seed}.mirm", ds.name, subject.subject_id)), &bytes)?;
                report.checkpoints.push(CheckpointRecord {
                    variant,
                    alpha,
                    seed,
                    sha256: hex(&Sha256::digest(&bytes)),
                });
            }
            report.finetune_curves.push(FinetuneCurve {
                dataset: ds.name.clone(),
                subject: subject.subject_id.clone(),
                seed,
                variant,
                alpha,
                epochs: out.epochs,
            });
        }
    }
    Ok(())
}

/// Fine-tunes one pretrained model on every downstream subject for every
/// seed in `cfg.seeds`.
pub fn finetune_downstream(
    model: &ModelState,
    downstream: &[HarmonizedDataset],
    cfg: &TrainConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<RunReport> {
    cfg.validate()?;
    if downstream.is_empty() {
        return Err(Error::InvalidArgument("no downstream datasets".into()));
    }
    let mut report = empty_report(cfg, BTreeMap::new());
    for &seed in &cfg.seeds {
        finetune_seed(model, downstream, cfg, seed, &mut report, checkpoint_dir)?;
    }
    report.summary = summarize(&report.rows);
    Ok(report)
}

/// Runs every `(variant, alpha)` cell for every seed in `cfg.seeds`. One
/// pretrained model per cell and seed is fine-tuned separately on each
/// downstream subject. Checkpoints go to `checkpoint_dir` when given.
pub fn run_grid(
    corpus: &Corpus,
    cfg: &TrainConfig,
    cells: &[(Ablation, f64)],
    checkpoint_dir: Option<&Path>,
) -> Result<RunReport> {
    cfg.validate()?;
    if corpus.downstream.is_empty() {
        return Err(Error::InvalidArgument("no downstream datasets".into()));
    }
    let mut report = empty_report(
        cfg,
        corpus.pretrain.iter().map(|d| (d.name.clone(), d.retained())).collect(),
    );
    for &(variant, alpha) in cells {
        let cell_cfg = TrainConfig {
            ablation: variant,
            alpha,
            ..cfg.clone()
        };
        for &seed in &cfg.seeds {
            let (model, curve) = pretrain(&corpus.pretrain, &cell_cfg, seed)?;
            let bytes = encode_checkpoint(&model)?;
            report.checkpoints.push(CheckpointRecord {
                variant,
                alpha,
                seed,
                sha256: hex(&Sha256::digest(&bytes)),
            });
            if let Some(dir) = checkpoint_dir {
                std::fs::create_dir_all(dir)?;
                save_checkpoint(&model, dir.join(format!("pretrained_{variant}_a{alpha}_s{seed}.mirm")))?;
            }
            report.pretrain_curves.push(curve);
            finetune_seed(&model, &corpus.downstream, &cell_cfg, seed, &mut report, None)?;
        }
    }
    report.summary = summarize(&report.rows);
    Ok(report)
}

/// `no_pretrain`, `no_selfsup` and `full` at `cfg.alpha`, same seeds and splits.
pub fn ablation_suite(corpus: &Corpus, cfg: &TrainConfig, checkpoint_dir: Option<&Path>) -> Result<RunReport> {
    let cells: Vec<(Ablation, f64)> = Ablation::ALL.iter().map(|&a| (a, cfg.alpha)).collect();
    run_grid(corpus, cfg, &cells, checkpoint_dir)
}

/// Full pipeline at each mask ratio.
pub fn mask_sweep(corpus: &Corpus, cfg: &TrainConfig, alphas: &[f64], checkpoint_dir: Option<&Path>) -> Result<RunReport> {
    let cells: Vec<(Ablation, f64)> = alphas.iter().map(|&a| (Ablation::Full, a)).collect();
    run_grid(corpus, cfg, &cells, checkpoint_dir)
}
