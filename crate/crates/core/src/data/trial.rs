use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The unified class vocabulary every dataset maps into.
pub const UNIFIED_LABELS: [&str; 5] = ["left_hand", "right_hand", "feet", "tongue", "rest"];

/// One EEG epoch: a channels × samples matrix plus its acquisition metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub data: Array2<f64>,
    pub label: Option<u32>,
    pub fs: f64,
    pub channels: Vec<String>,
    pub subject_id: String,
    pub session_id: String,
}

impl Trial {
    /// Builds a trial and checks its invariants.
    pub fn new(
        data: Array2<f64>,
        label: Option<u32>,
        fs: f64,
        channels: Vec<String>,
        subject_id: impl Into<String>,
        session_id: impl Into<String>,
    ) -> Result<Self> {
        let trial = Trial {
            data,
            label,
            fs,
            channels,
            subject_id: subject_id.into(),
            session_id: session_id.into(),
        };
        trial.validate()?;
        Ok(trial)
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.nrows() != self.channels.len() {
            return Err(Error::InvalidTrial(format!(
                "{} data rows but {} channel names",
                self.data.nrows(),
                self.channels.len()
            )));
        }
        if self.data.ncols() == 0 {
            return Err(Error::InvalidTrial("trial has no samples".into()));
        }
        if !(self.fs.is_finite() && self.fs > 0.0) {
            return Err(Error::InvalidTrial(format!("sampling rate {} must be positive", self.fs)));
        }
        self.check_finite()
    }

    pub fn check_finite(&self) -> Result<()> {
        for ((channel, sample), v) in self.data.indexed_iter() {
            if !v.is_finite() {
                return Err(Error::NonFiniteSample { channel, sample });
            }
        }
        Ok(())
    }

    pub fn n_channels(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.data.ncols()
    }

    /// Returns a copy carrying new data and channel names but the same
    /// label, rate and provenance.
    pub fn with_data(&self, data: Array2<f64>, channels: Vec<String>) -> Trial {
        Trial {
            data,
            label: self.label,
            fs: self.fs,
            channels,
            subject_id: self.subject_id.clone(),
            session_id: self.session_id.clone(),
        }
    }
}

/// Ordered class names; label ids index into this list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelVocab {
    names: Vec<String>,
}

impl LabelVocab {
    pub fn new<S: AsRef<str>>(names: &[S]) -> Result<Self> {
        let mut out: Vec<String> = Vec::with_capacity(names.len());
        for n in names {
            let n = normalize_label(n.as_ref());
            if out.contains(&n) {
                return Err(Error::InvalidArgument(format!("duplicate label {n:?}")));
            }
            out.push(n);
        }
        Ok(LabelVocab { names: out })
    }

    pub fn unified() -> Self {
        LabelVocab {
            names: UNIFIED_LABELS.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        let n = normalize_label(name);
        self.names.iter().position(|x| *x == n)
    }

    /// Maps every label of `self` to its id in `target`. Fails if a label is
    /// missing, so the map is injective by construction.
    pub fn map_into(&self, target: &LabelVocab) -> Result<Vec<u32>> {
        self.names
            .iter()
            .map(|n| {
                target
                    .index_of(n)
                    .map(|i| i as u32)
                    .ok_or_else(|| Error::InvalidArgument(format!("label {n:?} not in vocabulary")))
            })
            .collect()
    }
}

/// Lower-cases and merges the known aliases ("both feet" → "feet", ...).
pub fn normalize_label(name: &str) -> String {
    let n = name.trim().to_ascii_lowercase().replace([' ', '-'], "_");
    match n.as_str() {
        "both_feet" | "foot" => "feet".into(),
        "left" | "lefthand" | "left_hand_mi" => "left_hand".into(),
        "right" | "righthand" | "right_hand_mi" => "right_hand".into(),
        "rest_state" | "resting" => "rest".into(),
        _ => n,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn rejects_row_count_mismatch() {
        let err = Trial::new(array![[1.0, 2.0]], None, 250.0, vec![], "s", "0").unwrap_err();
        assert!(matches!(err, Error::InvalidTrial(_)));
    }

    #[test]
    fn rejects_nan() {
        let err = Trial::new(array![[1.0, f64::NAN]], None, 250.0, vec!["C3".into()], "s", "0")
            .unwrap_err();
        assert!(err.to_string().contains("non-finite sample"));
    }

    #[test]
    fn vocab_aliases_merge() {
        let bnci = LabelVocab::new(&["right hand", "both feet"]).unwrap();
        assert_eq!(bnci.map_into(&LabelVocab::unified()).unwrap(), vec![1, 2]);
        assert!(LabelVocab::new(&["feet", "both_feet"]).is_err());
    }
}
