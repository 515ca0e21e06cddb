//! Within-subject screening: subjects whose cross-validated CSP+LDA accuracy
//! falls below a threshold are dropped.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::csp::csp_lda_fit;
use crate::data::Trial;
use crate::error::{Error, Result};

pub const DEFAULT_FOLDS: usize = 5;
pub const DEFAULT_THRESHOLD: f64 = 0.6;
pub const DEFAULT_CSP_PAIRS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreeningResult {
    /// Cross-validated accuracy per subject, in [0, 1].
    pub accuracy: BTreeMap<String, f64>,
    pub retained: Vec<String>,
    pub excluded: Vec<String>,
    pub threshold: f64,
    pub folds: usize,
}

/// Stratified k-fold CSP+LDA accuracy. Within each class, trials keep their
/// order and are dealt round-robin into folds.
pub fn cross_val_accuracy(trials: &[Trial], folds: usize, m: usize) -> Result<f64> {
    if folds < 2 {
        return Err(Error::InvalidArgument("need at least two folds".into()));
    }
    let mut per_class: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, t) in trials.iter().enumerate() {
        let y = t
            .label
            .ok_or_else(|| Error::InvalidArgument("screening needs labelled trials".into()))?;
        per_class.entry(y).or_default().push(i);
    }
    if per_class.len() < 2 {
        return Err(Error::InvalidArgument("screening needs at least two classes".into()));
    }
    for (class, idx) in &per_class {
        if idx.len() < 2 * folds {
            return Err(Error::InvalidArgument(format!(
                "class {class} has {} trials; {folds}-fold screening needs at least {}",
                idx.len(),
                2 * folds
            )));
        }
    }
    let mut fold_of = vec![0usize; trials.len()];
    for idx in per_class.values() {
        for (j, &i) in idx.iter().enumerate() {
            fold_of[i] = j % folds;
        }
    }
    let mut correct = 0usize;
    for k in 0..folds {
        let train: Vec<Trial> = trials
            .iter()
            .zip(&fold_of)
            .filter(|(_, &f)| f != k)
            .map(|(t, _)| t.clone())
            .collect();
        let model = csp_lda_fit(&train, m)?;
        for (t, _) in trials.iter().zip(&fold_of).filter(|(_, &f)| f == k) {
            if Some(model.predict(t)?) == t.label {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / trials.len() as f64)
}

/// Screens each `(subject id, trials)` entry; retained iff accuracy >= threshold.
pub fn screen_subjects(
    subjects: &[(String, Vec<Trial>)],
    threshold: f64,
    folds: usize,
) -> Result<ScreeningResult> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::InvalidArgument(format!("threshold {threshold} not in [0, 1]")));
    }
    let mut result = ScreeningResult {
        accuracy: BTreeMap::new(),
        retained: Vec::new(),
        excluded: Vec::new(),
        threshold,
        folds,
    };
    for (id, trials) in subjects {
        let acc = cross_val_accuracy(trials, folds, DEFAULT_CSP_PAIRS)?;
        result.accuracy.insert(id.clone(), acc);
        if acc >= threshold {
            result.retained.push(id.clone());
        } else {
            result.excluded.push(id.clone());
        }
    }
    Ok(result)
}
