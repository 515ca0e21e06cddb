//! Dataset manifests: a JSON document listing subjects, sessions and the trial
//! files of each session, stored next to those files.
//!
//! ```json
//! {
//!   "name": "synth",
//!   "fs": 250.0,
//!   "channels": ["FC5", "..."],
//!   "label_vocab": ["left_hand", "right_hand"],
//!   "subjects": [
//!     { "id": "S01", "sessions": [ { "id": "0", "trials": ["S01/0/t000.mirp"] } ] }
//!   ]
//! }
//! ```
//!
//! Trial paths are relative to the directory holding the manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::io::read_trial_file;
use super::trial::{LabelVocab, Trial};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionEntry {
    pub id: String,
    pub trials: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubjectEntry {
    pub id: String,
    pub sessions: Vec<SessionEntry>,
}

impl SubjectEntry {
    pub fn n_trials(&self) -> usize {
        self.sessions.iter().map(|s| s.trials.len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub name: String,
    pub fs: f64,
    pub channels: Vec<String>,
    pub label_vocab: LabelVocab,
    pub subjects: Vec<SubjectEntry>,
    /// Directory the trial paths are relative to; not serialized.
    #[serde(skip)]
    pub root: PathBuf,
}

impl DatasetManifest {
    /// Loads `manifest.json` from a dataset directory, or a manifest file path.
    pub fn load(path: &Path) -> Result<Self> {
        let file = if path.is_dir() {
            path.join(MANIFEST_FILE)
        } else {
            path.to_path_buf()
        };
        let text = fs::read_to_string(&file)?;
        let mut m: DatasetManifest = serde_json::from_str(&text)?;
        m.root = file
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        Ok(m)
    }

    /// Writes `manifest.json` into `self.root`.
    pub fn save(&self) -> Result<PathBuf> {
        fs::create_dir_all(&self.root)?;
        let file = self.root.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(&file, text)?;
        Ok(file)
    }

    pub fn n_trials(&self) -> usize {
        self.subjects.iter().map(SubjectEntry::n_trials).sum()
    }

    pub fn subject(&self, id: &str) -> Result<&SubjectEntry> {
        self.subjects
            .iter()
            .find(|s| s.id == id)
            .ok_or_else(|| Error::Manifest(format!("no subject {id:?} in {}", self.name)))
    }

    fn check_trial(&self, trial: &Trial, path: &Path) -> Result<()> {
        if trial.channels.len() != self.channels.len() || (trial.fs - self.fs).abs() > 1e-3 {
            return Err(Error::Manifest(format!(
                "{}: header ({} channels, {} Hz) does not match manifest ({} channels, {} Hz)",
                path.display(),
                trial.channels.len(),
                trial.fs,
                self.channels.len(),
                self.fs
            )));
        }
        if let Some(label) = trial.label {
            if label as usize >= self.label_vocab.len() {
                return Err(Error::Manifest(format!(
                    "{}: label {label} outside vocabulary of {} classes",
                    path.display(),
                    self.label_vocab.len()
                )));
            }
        }
        Ok(())
    }

    /// Reads every trial of one session in acquisition order.
    pub fn load_session(&self, session: &SessionEntry) -> Result<Vec<Trial>> {
        session
            .trials
            .iter()
            .map(|rel| {
                let path = self.root.join(rel);
                if !path.exists() {
                    return Err(Error::Manifest(format!("missing trial file {}", path.display())));
                }
                let trial = read_trial_file(&path)?;
                self.check_trial(&trial, &path)?;
                Ok(trial)
            })
            .collect()
    }

    /// All trials of a subject, sessions concatenated in manifest order.
    pub fn load_subject(&self, id: &str) -> Result<Vec<Trial>> {
        let subject = self.subject(id)?;
        let mut out = Vec::with_capacity(subject.n_trials());
        for session in &subject.sessions {
            out.extend(self.load_session(session)?);
        }
        Ok(out)
    }

    /// Checks that every referenced file exists and agrees with the manifest.
    pub fn validate(&self) -> Result<()> {
        for subject in &self.subjects {
            for session in &subject.sessions {
                self.load_session(session)?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::write_trial_file;
    use ndarray::Array2;

    fn manifest(root: &Path) -> DatasetManifest {
        DatasetManifest {
            name: "t".into(),
            fs: 250.0,
            channels: vec!["C3".into(), "C4".into()],
            label_vocab: LabelVocab::new(&["left_hand", "right_hand"]).unwrap(),
            subjects: vec![SubjectEntry {
                id: "S01".into(),
                sessions: vec![SessionEntry {
                    id: "0".into(),
                    trials: vec!["a.mirp".into()],
                }],
            }],
            root: root.to_path_buf(),
        }
    }

    #[test]
    fn save_load_and_validate() {
        let dir = tempfile::tempdir().unwrap();
        let m = manifest(dir.path());
        let trial = Trial::new(
            Array2::zeros((2, 10)),
            Some(1),
            250.0,
            m.channels.clone(),
            "S01",
            "0",
        )
        .unwrap();
        write_trial_file(&trial, &dir.path().join("a.mirp")).unwrap();
        m.save().unwrap();
        let back = DatasetManifest::load(dir.path()).unwrap();
        assert_eq!(back, m);
        back.validate().unwrap();
        assert_eq!(back.load_subject("S01").unwrap(), vec![trial]);
    }

    #[test]
    fn header_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let m = manifest(dir.path());
        let trial =
            Trial::new(Array2::zeros((2, 10)), Some(0), 512.0, m.channels.clone(), "S01", "0")
                .unwrap();
        write_trial_file(&trial, &dir.path().join("a.mirp")).unwrap();
        assert!(matches!(m.validate(), Err(Error::Manifest(_))));
    }

    #[test]
    fn missing_file_and_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        assert!(manifest(dir.path()).validate().is_err());
        let bad = r#"{"name":"x","fs":1,"channels":[],"label_vocab":[],"subjects":[],"extra":1}"#;
        assert!(serde_json::from_str::<DatasetManifest>(bad).is_err());
    }
}
