//! Euclidean alignment: whiten a subject's trials by the inverse square root
//! of their mean spatial covariance so that the aligned set has identity mean
//! covariance.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::linalg::{sym_eigen, sym_inv_sqrt};
use crate::data::Trial;
use crate::error::{Error, Result};

/// Ridge relative to the average eigenvalue. It is added only when the
/// smallest eigenvalue of the mean covariance falls below it.
pub const RIDGE_REL: f64 = 1e-8;
/// Eigenvalues below this fraction of the largest are floored.
pub const EIGEN_FLOOR_REL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignReference {
    #[serde(with = "crate::matrix_rows")]
    pub r_bar: Array2<f64>,
    #[serde(with = "crate::matrix_rows")]
    pub r_inv_sqrt: Array2<f64>,
    pub n: usize,
    pub epsilon: f64,
}

impl AlignReference {
    pub fn dim(&self) -> usize {
        self.r_bar.nrows()
    }
}

/// `(1/n) * sum_i X_i X_i^T`, no ridge.
pub fn mean_covariance(trials: &[Trial]) -> Result<Array2<f64>> {
    let first = trials
        .first()
        .ok_or_else(|| Error::InvalidArgument("no trials to average".into()))?;
    let c = first.n_channels();
    let mut acc = Array2::<f64>::zeros((c, c));
    for (i, t) in trials.iter().enumerate() {
        if t.n_channels() != c {
            return Err(Error::ShapeMismatch(format!(
                "trial {i} has {} channels, expected {c}",
                t.n_channels()
            )));
        }
        acc += &t.data.dot(&t.data.t());
    }
    Ok(acc / trials.len() as f64)
}

/// Fits the alignment reference on a set of trials sharing a channel layout.
pub fn ea_reference(trials: &[Trial]) -> Result<AlignReference> {
    let mut r_bar = mean_covariance(trials)?;
    let c = r_bar.nrows();
    let trace: f64 = r_bar.diag().sum();
    let ridge = RIDGE_REL * trace / c as f64;
    let lambda_min = if trace > 0.0 { sym_eigen(&r_bar)?.0[0] } else { 0.0 };
    let epsilon = if lambda_min < ridge { ridge } else { 0.0 };
    for i in 0..c {
        r_bar[[i, i]] += epsilon;
    }
    let r_inv_sqrt = if trace > 0.0 {
        sym_inv_sqrt(&r_bar, EIGEN_FLOOR_REL)?
    } else {
        // all-zero input: nothing to whiten
        Array2::eye(c)
    };
    Ok(AlignReference {
        r_bar,
        r_inv_sqrt,
        n: trials.len(),
        epsilon,
    })
}

/// `X~ = R^{-1/2} X'`.
pub fn ea_whiten(trial: &Trial, reference: &AlignReference) -> Result<Trial> {
    if trial.n_channels() != reference.dim() {
        return Err(Error::ShapeMismatch(format!(
            "trial has {} channels, reference is {}x{}",
            trial.n_channels(),
            reference.dim(),
            reference.dim()
        )));
    }
    let data = reference.r_inv_sqrt.dot(&trial.data);
    Ok(trial.with_data(data, trial.channels.clone()))
}
