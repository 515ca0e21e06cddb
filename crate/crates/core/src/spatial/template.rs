//! Inverse-distance interpolation of arbitrary electrode layouts onto a fixed
//! 23-electrode sensorimotor template.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::{Montage, Trial};
use crate::error::{Error, Result};

/// Canonical template: FC, C, CP rows plus T7/T8.
pub const TEMPLATE_ELECTRODES: [&str; 23] = [
    "FC5", "FC3", "FC1", "FCz", "FC2", "FC4", "FC6", "C5", "C3", "C1", "Cz", "C2", "C4", "C6",
    "CP5", "CP3", "CP1", "CPz", "CP2", "CP4", "CP6", "T7", "T8",
];

#[derive(Debug, Clone, PartialEq)]
pub struct TemplateSpec {
    pub electrodes: Vec<String>,
    pub montage: Montage,
}

impl Default for TemplateSpec {
    fn default() -> Self {
        TemplateSpec {
            electrodes: TEMPLATE_ELECTRODES.iter().map(|s| s.to_string()).collect(),
            montage: Montage::standard_1010(),
        }
    }
}

impl TemplateSpec {
    pub fn new(electrodes: Vec<String>, montage: Montage) -> Result<Self> {
        let spec = TemplateSpec { electrodes, montage };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen: Vec<String> = Vec::with_capacity(self.electrodes.len());
        for e in &self.electrodes {
            self.montage.get(e)?;
            let k = e.to_ascii_uppercase();
            if seen.contains(&k) {
                return Err(Error::InvalidArgument(format!("duplicate template electrode {e}")));
            }
            seen.push(k);
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.electrodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.electrodes.is_empty()
    }
}

/// Row-stochastic map from source channels to template electrodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateWeights {
    #[serde(with = "crate::matrix_rows")]
    pub matrix: Array2<f64>,
    pub source_channels: Vec<String>,
    pub template_channels: Vec<String>,
}

impl TemplateWeights {
    /// Distances then weights, in one step.
    pub fn build(template: &TemplateSpec, source_channels: &[String], montage: &Montage) -> Result<Self> {
        let d = electrode_distances(template, source_channels, montage)?;
        let matrix = interp_weights(&d)?;
        Ok(TemplateWeights {
            matrix,
            source_channels: source_channels.to_vec(),
            template_channels: template.electrodes.clone(),
        })
    }
}

/// Scalp distance from every template electrode (rows) to every source
/// electrode (columns). Template positions come from the template's montage,
/// source positions from `montage`.
pub fn electrode_distances(
    template: &TemplateSpec,
    source_channels: &[String],
    montage: &Montage,
) -> Result<Array2<f64>> {
    let targets: Vec<(f64, f64)> = template
        .electrodes
        .iter()
        .map(|e| template.montage.get(e))
        .collect::<Result<_>>()?;
    let sources: Vec<(f64, f64)> = source_channels
        .iter()
        .map(|e| montage.get(e))
        .collect::<Result<_>>()?;
    Ok(Array2::from_shape_fn((targets.len(), sources.len()), |(i, k)| {
        let (tx, ty) = targets[i];
        let (sx, sy) = sources[k];
        (tx - sx).hypot(ty - sy)
    }))
}

/// Inverse-distance weights. A row with an exactly zero distance becomes
/// one-hot at the first such column; otherwise weights are `1/d` normalized
/// to sum to one.
pub fn interp_weights(distances: &Array2<f64>) -> Result<Array2<f64>> {
    let (rows, cols) = distances.dim();
    if cols == 0 {
        return Err(Error::InvalidArgument("no source channels".into()));
    }
    let mut w = Array2::zeros((rows, cols));
    for i in 0..rows {
        let row = distances.row(i);
        if row.iter().any(|d| d.is_nan() || *d < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "template row {i} has a negative or NaN distance"
            )));
        }
        if let Some(k) = row.iter().position(|&d| d == 0.0) {
            w[[i, k]] = 1.0;
            continue;
        }
        let inv: Vec<f64> = row.iter().map(|d| 1.0 / d).collect();
        let sum: f64 = inv.iter().sum();
        if !(sum > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "template row {i} has every distance infinite"
            )));
        }
        for (k, v) in inv.into_iter().enumerate() {
            w[[i, k]] = v / sum;
        }
    }
    Ok(w)
}

/// Projects a trial onto the template: `X'[i, t] = sum_k W[i, k] X[k, t]`.
pub fn apply_template(trial: &Trial, weights: &TemplateWeights) -> Result<Trial> {
    let same = trial.channels.len() == weights.source_channels.len()
        && trial
            .channels
            .iter()
            .zip(&weights.source_channels)
            .all(|(a, b)| a.eq_ignore_ascii_case(b));
    if !same {
        return Err(Error::ChannelMismatch(format!(
            "trial channels {:?} differ from weight sources {:?}",
            trial.channels, weights.source_channels
        )));
    }
    let data = weights.matrix.dot(&trial.data);
    Ok(trial.with_data(data, weights.template_channels.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn weights_examples() {
        let w = interp_weights(&array![[0.0, 1.2, 3.0]]).unwrap();
        assert_eq!(w, array![[1.0, 0.0, 0.0]]);
        let w = interp_weights(&array![[2.0, 2.0]]).unwrap();
        assert_eq!(w, array![[0.5, 0.5]]);
        let w = interp_weights(&array![[1.0, 2.0, 2.0]]).unwrap();
        assert_eq!(w, array![[0.5, 0.25, 0.25]]);
    }

    #[test]
    fn infinite_rows() {
        assert!(interp_weights(&array![[f64::INFINITY, f64::INFINITY]]).is_err());
        let w = interp_weights(&array![[f64::INFINITY, 2.0]]).unwrap();
        assert_eq!(w, array![[0.0, 1.0]]);
    }

    #[test]
    fn distance_of_same_name_is_zero_and_345() {
        let t = TemplateSpec::default();
        let d = electrode_distances(&t, &names(&["C3", "Cz"]), &t.montage).unwrap();
        assert_eq!(d[[8, 0]], 0.0);
        assert_eq!(d[[10, 1]], 0.0);

        let m = Montage::from_coords([("O", (0.0, 0.0)), ("E", (0.3, 0.4))]).unwrap();
        let t = TemplateSpec::new(names(&["O"]), m.clone()).unwrap();
        let d = electrode_distances(&t, &names(&["E"]), &m).unwrap();
        assert!((d[[0, 0]] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn unknown_electrode() {
        let t = TemplateSpec::default();
        let err = electrode_distances(&t, &names(&["C3", "Q9"]), &t.montage).unwrap_err();
        assert!(matches!(err, Error::UnknownElectrode(ref n) if n == "Q9"));
    }

    #[test]
    fn identity_when_source_is_template() {
        let t = TemplateSpec::default();
        let w = TemplateWeights::build(&t, &t.electrodes, &t.montage).unwrap();
        assert_eq!(w.matrix, Array2::<f64>::eye(23));
        let data = Array2::from_shape_fn((23, 9), |(i, j)| (i as f64).sin() + j as f64);
        let trial = Trial::new(data.clone(), Some(0), 250.0, t.electrodes.clone(), "s", "0").unwrap();
        assert_eq!(apply_template(&trial, &w).unwrap().data, data);
    }

    #[test]
    fn single_source_fills_every_row() {
        let t = TemplateSpec::default();
        let w = TemplateWeights::build(&t, &names(&["Pz"]), &t.montage).unwrap();
        let trial = Trial::new(array![[1.0, -2.0, 3.5]], None, 250.0, names(&["Pz"]), "s", "0").unwrap();
        let out = apply_template(&trial, &w).unwrap();
        for row in out.data.rows() {
            assert_eq!(row.to_vec(), vec![1.0, -2.0, 3.5]);
        }
        assert_eq!(out.channels, t.electrodes);
    }

    #[test]
    fn constants_are_preserved() {
        let t = TemplateSpec::default();
        let src = names(&["F3", "Fz", "F4", "P3", "Pz", "P4", "T7"]);
        let w = TemplateWeights::build(&t, &src, &t.montage).unwrap();
        let trial = Trial::new(Array2::from_elem((7, 5), 3.25), None, 250.0, src, "s", "0").unwrap();
        let out = apply_template(&trial, &w).unwrap();
        assert!(out.data.iter().all(|v| (v - 3.25).abs() < 1e-12));
    }

    #[test]
    fn channel_order_must_match() {
        let t = TemplateSpec::default();
        let w = TemplateWeights::build(&t, &names(&["C3", "C4"]), &t.montage).unwrap();
        let trial = Trial::new(Array2::zeros((2, 3)), None, 250.0, names(&["C4", "C3"]), "s", "0").unwrap();
        assert!(matches!(apply_template(&trial, &w), Err(Error::ChannelMismatch(_))));
    }
}
