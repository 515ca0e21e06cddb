//! Common spatial patterns with a linear discriminant on log-variance features.
//!
//! Two classes use the classic generalized eigenproblem
//! `S1 w = lambda (S1 + S2) w`; more classes stack one-versus-rest filter
//! banks. The discriminant is Gaussian with a pooled covariance, so with two
//! classes it reduces to Fisher's LDA.

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use super::linalg::{sym_eigen, sym_inv_sqrt};
use crate::data::Trial;
use crate::error::{Error, Result};

const COV_RIDGE: f64 = 1e-10;
const LDA_SHRINK: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CspLdaModel {
    /// One spatial filter per row.
    #[serde(with = "crate::matrix_rows")]
    pub csp_filters: Array2<f64>,
    pub eigenvalues: Vec<f64>,
    pub classes: Vec<u32>,
    /// One discriminant per class (rows), over the log-variance features.
    #[serde(with = "crate::matrix_rows")]
    pub lda_weights: Array2<f64>,
    pub lda_bias: Vec<f64>,
}

fn normalized_cov(x: &Array2<f64>) -> Array2<f64> {
    let c = x.dot(&x.t());
    let tr = c.diag().sum();
    if tr > 0.0 {
        c / tr
    } else {
        c
    }
}

fn class_cov(trials: &[&Trial]) -> Result<Array2<f64>> {
    let c = trials
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty class".into()))?
        .n_channels();
    let mut acc = Array2::zeros((c, c));
    for t in trials {
        if t.n_channels() != c {
            return Err(Error::ShapeMismatch("trials disagree on channel count".into()));
        }
        acc += &normalized_cov(&t.data);
    }
    Ok(acc / trials.len() as f64)
}

/// Solves `a w = lambda (a + b) w`. Returns eigenvalues in descending order and
/// the matching filters as rows.
pub fn generalized_eigen(a: &Array2<f64>, b: &Array2<f64>) -> Result<(Vec<f64>, Array2<f64>)> {
    let mut composite = a + b;
    let c = composite.nrows();
    let tr = composite.diag().sum();
    if !(tr > 0.0) {
        return Err(Error::Numerical("class covariances are zero".into()));
    }
    for i in 0..c {
        composite[[i, i]] += COV_RIDGE * tr / c as f64;
    }
    let (values, _) = sym_eigen(&composite)?;
    if values[0] <= 1e-14 * values[c - 1] {
        return Err(Error::Numerical(
            "composite covariance is rank deficient beyond ridge repair".into(),
        ));
    }
    let whiten = sym_inv_sqrt(&composite, 0.0)?;
    let s = whiten.dot(a).dot(&whiten);
    let (lambda, vecs) = sym_eigen(&s)?;
    let filters = whiten.dot(&vecs); // columns
    let order: Vec<usize> = (0..c).rev().collect();
    let values = order.iter().map(|&k| lambda[k]).collect();
    let rows = Array2::from_shape_fn((c, c), |(i, j)| filters[[j, order[i]]]);
    Ok((values, rows))
}

fn pick_extremes(values: &[f64], filters: &Array2<f64>, m: usize) -> (Vec<f64>, Array2<f64>) {
    let c = values.len();
    let m = m.min(c / 2).max(1);
    let idx: Vec<usize> = (0..m).chain(c - m..c).collect();
    let vals = idx.iter().map(|&i| values[i]).collect();
    let rows = filters.select(Axis(0), &idx);
    (vals, rows)
}

/// Two-class CSP filters: `m` largest- and `m` smallest-eigenvalue filters.
pub fn csp_fit(class_a: &[Trial], class_b: &[Trial], m: usize) -> Result<(Vec<f64>, Array2<f64>)> {
    if class_a.is_empty() || class_b.is_empty() {
        return Err(Error::InvalidArgument("both classes need trials".into()));
    }
    let sa = class_cov(&class_a.iter().collect::<Vec<_>>())?;
    let sb = class_cov(&class_b.iter().collect::<Vec<_>>())?;
    let (values, filters) = generalized_eigen(&sa, &sb)?;
    Ok(pick_extremes(&values, &filters, m))
}

impl CspLdaModel {
    pub fn features(&self, trial: &Trial) -> Result<Array1<f64>> {
        if trial.n_channels() != self.csp_filters.ncols() {
            return Err(Error::ShapeMismatch(format!(
                "trial has {} channels, filters expect {}",
                trial.n_channels(),
                self.csp_filters.ncols()
            )));
        }
        Ok(log_var_features(&self.csp_filters, &trial.data))
    }

    pub fn decision(&self, trial: &Trial) -> Result<Array1<f64>> {
        let f = self.features(trial)?;
        Ok(self.lda_weights.dot(&f) + Array1::from(self.lda_bias.clone()))
    }

    pub fn predict(&self, trial: &Trial) -> Result<u32> {
        let d = self.decision(trial)?;
        let best = d
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0);
        Ok(self.classes[best])
    }

    /// Fraction of labelled trials predicted correctly, in [0, 1].
    pub fn accuracy(&self, trials: &[Trial]) -> Result<f64> {
        if trials.is_empty() {
            return Err(Error::InvalidArgument("no trials to score".into()));
        }
        let mut correct = 0usize;
        for t in trials {
            if Some(self.predict(t)?) == t.label {
                correct += 1;
            }
        }
        Ok(correct as f64 / trials.len() as f64)
    }
}

fn log_var_features(filters: &Array2<f64>, x: &Array2<f64>) -> Array1<f64> {
    let y = filters.dot(x);
    let var: Array1<f64> = y.map_axis(Axis(1), |r| r.iter().map(|v| v * v).sum::<f64>() / r.len() as f64);
    let total = var.sum().max(f64::MIN_POSITIVE);
    var.mapv(|v| (v / total).max(1e-300).ln())
}

/// Gaussian discriminant with pooled, lightly shrunk covariance.
fn lda_fit(features: &[Array1<f64>], labels: &[usize], n_classes: usize) -> Result<(Array2<f64>, Vec<f64>)> {
    let d = features[0].len();
    let mut means = Array2::<f64>::zeros((n_classes, d));
    let mut counts = vec![0usize; n_classes];
    for (f, &y) in features.iter().zip(labels) {
        let mut row = means.row_mut(y);
        row += f;
        counts[y] += 1;
    }
    for (k, &n) in counts.iter().enumerate() {
        if n == 0 {
            return Err(Error::InvalidArgument(format!("class index {k} has no trials")));
        }
        let mut row = means.row_mut(k);
        row /= n as f64;
    }
    let mut pooled = Array2::<f64>::zeros((d, d));
    for (f, &y) in features.iter().zip(labels) {
        let r = f - &means.row(y);
        for i in 0..d {
            for j in 0..d {
                pooled[[i, j]] += r[i] * r[j];
            }
        }
    }
    let dof = (features.len().saturating_sub(n_classes)).max(1) as f64;
    pooled /= dof;
    let mu = pooled.diag().sum() / d as f64;
    let shrink = LDA_SHRINK * mu.max(1e-12);
    for i in 0..d {
        pooled[[i, i]] += shrink;
    }
    let (vals, vecs) = sym_eigen(&pooled)?;
    let inv = Array2::from_shape_fn((d, d), |(i, j)| {
        (0..d).map(|k| vecs[[i, k]] * vecs[[j, k]] / vals[k]).sum::<f64>()
    });
    let n = features.len() as f64;
    let mut weights = Array2::zeros((n_classes, d));
    let mut bias = Vec::with_capacity(n_classes);
    for k in 0..n_classes {
        let w = inv.dot(&means.row(k));
        bias.push(-0.5 * w.dot(&means.row(k)) + (counts[k] as f64 / n).ln());
        weights.row_mut(k).assign(&w);
    }
    Ok((weights, bias))
}

/// Fits CSP (one-versus-rest beyond two classes) and LDA on labelled trials.
pub fn csp_lda_fit(trials: &[Trial], m: usize) -> Result<CspLdaModel> {
    let mut classes: Vec<u32> = trials
        .iter()
        .map(|t| t.label.ok_or_else(|| Error::InvalidArgument("unlabelled trial".into())))
        .collect::<Result<_>>()?;
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::InvalidArgument("CSP needs at least two classes".into()));
    }
    let by_class = |k: u32, inside: bool| -> Vec<&Trial> {
        trials.iter().filter(|t| (t.label == Some(k)) == inside).collect()
    };

    let pairs: Vec<u32> = if classes.len() == 2 { vec![classes[0]] } else { classes.clone() };
    let mut eigenvalues = Vec::new();
    let mut banks = Vec::new();
    for &k in &pairs {
        let sa = class_cov(&by_class(k, true))?;
        let sb = class_cov(&by_class(k, false))?;
        let (vals, filters) = generalized_eigen(&sa, &sb)?;
        let (v, f) = pick_extremes(&vals, &filters, m);
        eigenvalues.extend(v);
        banks.push(f);
    }
    let views: Vec<_> = banks.iter().map(|b| b.view()).collect();
    let csp_filters = ndarray::concatenate(Axis(0), &views)
        .map_err(|e| Error::ShapeMismatch(e.to_string()))?;

    let features: Vec<Array1<f64>> = trials
        .iter()
        .map(|t| log_var_features(&csp_filters, &t.data))
        .collect();
    let labels: Vec<usize> = trials
        .iter()
        .map(|t| classes.binary_search(&t.label.unwrap()).unwrap())
        .collect();
    let (lda_weights, lda_bias) = lda_fit(&features, &labels, classes.len())?;
    Ok(CspLdaModel {
        csp_filters,
        eigenvalues,
        classes,
        lda_weights,
        lda_bias,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian_trial(rng: &mut ChaCha8Rng, scales: &[f64], t: usize, label: u32) -> Trial {
        let c = scales.len();
        let data = Array2::from_shape_fn((c, t), |(i, _)| {
            let z: f64 = StandardNormal.sample(rng);
            scales[i] * z
        });
        let names = (0..c).map(|i| format!("E{i}")).collect();
        Trial::new(data, Some(label), 250.0, names, "s", "0").unwrap()
    }

    #[test]
    fn equal_covariances_give_one_half() {
        let a = ndarray::array![[2.0, 0.3, 0.0], [0.3, 1.0, 0.1], [0.0, 0.1, 0.5]];
        let (vals, _) = generalized_eigen(&a, &a).unwrap();
        for v in vals {
            assert!((v - 0.5).abs() < 1e-8, "{v}");
        }
    }

    #[test]
    fn top_filter_finds_the_discriminative_axis() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a: Vec<Trial> = (0..40).map(|_| gaussian_trial(&mut rng, &[3.0, 1.0], 200, 0)).collect();
        let b: Vec<Trial> = (0..40).map(|_| gaussian_trial(&mut rng, &[1.0, 1.0], 200, 1)).collect();
        let (vals, filters) = csp_fit(&a, &b, 1).unwrap();
        assert!(vals[0] > vals[1]);
        let w = filters.row(0);
        let cos = w[0].abs() / (w[0] * w[0] + w[1] * w[1]).sqrt();
        assert!(cos >= 0.99, "cosine {cos}");
    }

    #[test]
    fn separable_features_train_perfectly() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut trials = Vec::new();
        for _ in 0..30 {
            trials.push(gaussian_trial(&mut rng, &[4.0, 1.0, 1.0, 0.25], 200, 0));
            trials.push(gaussian_trial(&mut rng, &[0.25, 1.0, 1.0, 4.0], 200, 1));
        }
        let model = csp_lda_fit(&trials, 2).unwrap();
        assert_eq!(model.csp_filters.nrows(), 4);
        assert_eq!(model.accuracy(&trials).unwrap(), 1.0);
    }

    #[test]
    fn three_classes_one_versus_rest() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut trials = Vec::new();
        for _ in 0..25 {
            trials.push(gaussian_trial(&mut rng, &[4.0, 1.0, 1.0], 150, 0));
            trials.push(gaussian_trial(&mut rng, &[1.0, 4.0, 1.0], 150, 1));
            trials.push(gaussian_trial(&mut rng, &[1.0, 1.0, 4.0], 150, 2));
        }
        let model = csp_lda_fit(&trials, 1).unwrap();
        assert_eq!(model.classes, vec![0, 1, 2]);
        assert_eq!(model.csp_filters.nrows(), 6);
        assert!(model.accuracy(&trials).unwrap() > 0.95);
    }

    #[test]
    fn degenerate_covariance_is_reported() {
        let names: Vec<String> = vec!["a".into(), "b".into()];
        let zero = Trial::new(Array2::zeros((2, 4)), Some(0), 1.0, names.clone(), "s", "0").unwrap();
        let other = Trial::new(Array2::zeros((2, 4)), Some(1), 1.0, names, "s", "0").unwrap();
        assert!(matches!(csp_fit(&[zero], &[other], 1), Err(Error::Numerical(_))));
    }
}
