//! Pretraining, fine-tuning and evaluation loops.

use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::config::{Ablation, TrainConfig};
use super::mask::{derive_rng, sample_mask_set};
use crate::data::{split_calibration, Trial};
use crate::error::{Error, Result};
use crate::nn::model::argmax;
use crate::nn::{classification_loss, pretrain_loss, Adam, Dropout, Gradients, Graph, ModelConfig, ModelState};
use crate::pipeline::{HarmonizedDataset, HarmonizedSubject};
use crate::spatial::{ea_reference, ea_whiten};

// random stream tags
const INIT: u64 = 1;
const ORDER: u64 = 2;
const MASK: u64 = 3;
const DROPOUT: u64 = 4;
const HEAD: u64 = 5;
const FT_ORDER: u64 = 6;
const FT_DROPOUT: u64 = 7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    /// Absent when the reconstruction branch is disabled.
    pub rec: Option<f64>,
    pub cls: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    pub ablation: Ablation,
    pub alpha: f64,
    pub seed: u64,
    pub n_trials: usize,
    pub classes: Vec<String>,
    pub epochs: Vec<EpochLoss>,
}

struct Sample<'a> {
    data: &'a Array2<f64>,
    label: usize,
}

fn labelled(trials: &[Trial], n_classes: usize) -> Result<Vec<Sample<'_>>> {
    trials
        .iter()
        .map(|t| {
            let label = t
                .label
                .ok_or_else(|| Error::InvalidArgument("training needs labelled trials".into()))?
                as usize;
            if label >= n_classes {
                return Err(Error::InvalidArgument(format!(
                    "label {label} outside the {n_classes}-class vocabulary"
                )));
            }
            Ok(Sample { data: &t.data, label })
        })
        .collect()
}

/// Epoch order with classes interleaved and minority classes cycled up to
/// the size of the largest, so every stretch of the order is class-balanced.
fn balanced_order(labels: &[usize], n_classes: usize, rng: &mut impl rand::Rng) -> Vec<usize> {
    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, &y) in labels.iter().enumerate() {
        per_class[y].push(i);
    }
    per_class.retain(|v| !v.is_empty());
    for v in &mut per_class {
        v.shuffle(rng);
    }
    let longest = per_class.iter().map(Vec::len).max().unwrap_or(0);
    let mut order = Vec::with_capacity(longest * per_class.len());
    for k in 0..longest {
        for v in &per_class {
            order.push(v[k % v.len()]);
        }
    }
    order
}

pub fn model_config(cfg: &TrainConfig, n_channels: usize, n_samples: usize, classes: Vec<String>) -> ModelConfig {
    ModelConfig {
        n_channels,
        n_samples,
        tokenizer: cfg.tokenizer,
        encoder: cfg.encoder,
        classes,
    }
}

/// Joint pretraining over the union of harmonized datasets. `no_pretrain`
/// returns the seeded initialization untouched.
pub fn pretrain(datasets: &[HarmonizedDataset], cfg: &TrainConfig, seed: u64) -> Result<(ModelState, PretrainReport)> {
    cfg.validate()?;
    let first = datasets
        .first()
        .ok_or_else(|| Error::InvalidArgument("no pretraining datasets".into()))?;
    let classes = first.classes.clone();
    if let Some(d) = datasets.iter().find(|d| d.classes != classes) {
        return Err(Error::InvalidArgument(format!(
            "dataset {} uses classes {:?}, expected {:?}",
            d.name, d.classes, classes
        )));
    }
    let trials: Vec<&Trial> = datasets
        .iter()
        .flat_map(|d| d.subjects.iter().flat_map(|s| s.trials.iter()))
        .collect();
    let shape = trials
        .first()
        .ok_or_else(|| Error::InvalidArgument("pretraining corpus is empty".into()))?
        .data
        .dim();
    if let Some(t) = trials.iter().find(|t| t.data.dim() != shape) {
        return Err(Error::ShapeMismatch(format!(
            "trial of {} is {:?}, corpus uses {:?}",
            t.subject_id,
            t.data.dim(),
            shape
        )));
    }
    let owned: Vec<Trial> = trials.into_iter().cloned().collect();
    let samples = labelled(&owned, classes.len())?;

    let mc = model_config(cfg, shape.0, shape.1, classes.clone());
    let mut init_rng = derive_rng(seed, &[INIT]);
    let mut model = ModelState::new(mc, rand::Rng::random(&mut init_rng))?;
    let mut report = PretrainReport {
        ablation: cfg.ablation,
        alpha: cfg.alpha,
        seed,
        n_trials: samples.len(),
        classes,
        epochs: Vec::new(),
    };
    if cfg.ablation == Ablation::NoPretrain {
        return Ok((model, report));
    }
    let use_rec = cfg.ablation == Ablation::Full;
    let h_prime = model.config.max_tokens();
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    let mut adam = Adam::new(&model.params, cfg.lr);

    for epoch in 0..cfg.epochs_pretrain {
        let mut order_rng = derive_rng(seed, &[ORDER, epoch as u64]);
        let order = balanced_order(&labels, model.n_classes(), &mut order_rng);
        let (mut rec_sum, mut cls_sum, mut n) = (0.0, 0.0, 0usize);
        for (step, batch) in order.chunks(cfg.batch).enumerate() {
            let mut grads = Gradients::zeros_like(&model.params);
            for (i, &idx) in batch.iter().enumerate() {
                let tag = [epoch as u64, step as u64, i as u64];
                let mask = if use_rec {
                    let mut r = derive_rng(seed, &[MASK, tag[0], tag[1], tag[2]]);
                    Some(sample_mask_set(h_prime, cfg.alpha, &mut r)?)
                } else {
                    None
                };
                let mut drop_rng = derive_rng(seed, &[DROPOUT, tag[0], tag[1], tag[2]]);
                let mut drop = Dropout::train(cfg.encoder.dropout, &mut drop_rng);
                let mut g = Graph::new(&model.params);
                let s = &samples[idx];
                let nodes = pretrain_loss(&model, &mut g, s.data, s.label, mask.as_deref(), &mut drop)?;
                rec_sum += nodes.rec.map(|r| g.scalar(r)).unwrap_or(0.0);
                cls_sum += g.scalar(nodes.cls);
                n += 1;
                grads.add_assign(&g.backward(nodes.total));
            }
            grads.scale(1.0 / batch.len() as f64);
            adam.step(&mut model.params, &grads)?;
        }
        let rec = use_rec.then(|| rec_sum / n as f64);
        let cls = cls_sum / n as f64;
        let total = rec.unwrap_or(0.0) + cls;
        log::info!(
            "pretrain seed {seed} epoch {}: rec {:?} cls {cls:.4} total {total:.4}",
            epoch + 1,
            rec
        );
        report.epochs.push(EpochLoss {
            epoch: epoch + 1,
            rec,
            cls,
            total,
        });
    }
    Ok((model, report))
}

/// Percentage of rows whose argmax equals the label.
pub fn accuracy_from_logits(logits: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    if logits.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} logit rows for {} labels",
            logits.len(),
            labels.len()
        )));
    }
    if logits.is_empty() {
        return Err(Error::InvalidArgument("no trials to score".into()));
    }
    let correct = logits.iter().zip(labels).filter(|(l, &y)| argmax(l) == y).count();
    Ok(100.0 * correct as f64 / labels.len() as f64)
}

/// Test accuracy in percent; dropout off.
pub fn evaluate(model: &ModelState, trials: &[Trial]) -> Result<f64> {
    let samples = labelled(trials, model.n_classes())?;
    let logits: Vec<Vec<f64>> = samples.iter().map(|s| model.logits(s.data)).collect::<Result<_>>()?;
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    accuracy_from_logits(&logits, &labels)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneEpoch {
    pub epoch: usize,
    pub loss: f64,
    pub test_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneOutcome {
    pub model: ModelState,
    /// Test accuracy before any update.
    pub initial_accuracy: f64,
    pub epochs: Vec<FinetuneEpoch>,
    /// Accuracy at `report_epoch` (or the last epoch if fewer ran).
    pub report_accuracy: f64,
    pub best_accuracy: f64,
    pub best_epoch: usize,
}

/// Supervised fine-tuning on calibration trials, scored on test trials after
/// every epoch. A new head is drawn when `classes` differs from the model's.
pub fn finetune(
    mut model: ModelState,
    calibration: &[Trial],
    test: &[Trial],
    classes: &[String],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<FinetuneOutcome> {
    cfg.validate()?;
    if model.classes() != classes {
        let mut r = derive_rng(seed, &[HEAD]);
        model.reset_head(classes.to_vec(), rand::Rng::random(&mut r))?;
    }
    let samples = labelled(calibration, classes.len())?;
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    for (k, name) in classes.iter().enumerate() {
        if !labels.contains(&k) {
            return Err(Error::InvalidArgument(format!(
                "calibration set has no trial of class {name}"
            )));
        }
    }
    let head = [model.layout.head.w, model.layout.head.b];
    let mut adam = Adam::new(&model.params, cfg.lr);
    let initial_accuracy = evaluate(&model, test)?;
    let mut epochs = Vec::with_capacity(cfg.epochs_finetune);
    for epoch in 0..cfg.epochs_finetune {
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut derive_rng(seed, &[FT_ORDER, epoch as u64]));
        let mut loss_sum = 0.0;
        for (step, batch) in order.chunks(cfg.finetune_batch).enumerate() {
            let mut grads = Gradients::zeros_like(&model.params);
            for (i, &idx) in batch.iter().enumerate() {
                let mut r = derive_rng(seed, &[FT_DROPOUT, epoch as u64, step as u64, i as u64]);
                let mut drop = Dropout::train(cfg.encoder.dropout, &mut r);
                let mut g = Graph::new(&model.params);
                let loss = classification_loss(&model, &mut g, samples[idx].data, samples[idx].label, &mut drop)?;
                loss_sum += g.scalar(loss);
                let mut gi = g.backward(loss);
                if cfg.freeze_body {
                    gi.retain_only(&head);
                }
                grads.add_assign(&gi);
            }
            grads.scale(1.0 / batch.len() as f64);
            adam.step(&mut model.params, &grads)?;
        }
        let test_accuracy = evaluate(&model, test)?;
        log::debug!("finetune seed {seed} epoch {}: acc {test_accuracy:.2}", epoch + 1);
        epochs.push(FinetuneEpoch {
            epoch: epoch + 1,
            loss: loss_sum / samples.len() as f64,
            test_accuracy,
        });
    }
    let report_accuracy = epochs
        .iter()
        .find(|e| e.epoch == cfg.report_epoch)
        .or(epochs.last())
        .map(|e| e.test_accuracy)
        .unwrap_or(initial_accuracy);
    let (best_epoch, best_accuracy) = epochs
        .iter()
        .fold((0, initial_accuracy), |(be, ba), e| {
            if e.test_accuracy > ba { (e.epoch, e.test_accuracy) } else { (be, ba) }
        });
    Ok(FinetuneOutcome {
        model,
        initial_accuracy,
        epochs,
        report_accuracy,
        best_accuracy,
        best_epoch,
    })
}

/// Calibration / test split of a downstream subject in template space, with
/// the alignment reference fit on calibration trials only.
#[derive(Debug, Clone, PartialEq)]
pub struct DownstreamSplit {
    pub calibration: Vec<Trial>,
    pub test: Vec<Trial>,
    pub n_calibration: usize,
}

pub fn prepare_downstream(subject: &HarmonizedSubject, fraction: f64) -> Result<DownstreamSplit> {
    let (calib, test) = split_calibration(&subject.trials, fraction)?;
    let reference = ea_reference(&calib)?;
    let calibration = calib.iter().map(|t| ea_whiten(t, &reference)).collect::<Result<Vec<_>>>()?;
    let test = test.iter().map(|t| ea_whiten(t, &reference)).collect::<Result<Vec<_>>>()?;
    Ok(DownstreamSplit {
        n_calibration: calibration.len(),
        calibration,
        test,
    })
}
