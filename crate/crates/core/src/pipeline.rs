//! Harmonization: band-pass → resample → channel template → (screening) →
//! Euclidean alignment, with labels moved into a shared class list.
//!
//! Pretraining data is aligned per subject and session using all of that
//! session's trials. Downstream subjects are only brought into template
//! space here; their alignment is fit later on calibration trials alone.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{write_trial_file, DatasetManifest, LabelVocab, SessionEntry, SubjectEntry, Trial, UNIFIED_LABELS};
use crate::dsp::{bandpass, resample, FilterSpec, ResampleSpec};
use crate::error::{Error, Result};
use crate::spatial::{
    apply_template, ea_reference, ea_whiten, screen_subjects, AlignReference, ScreeningResult,
    TemplateSpec, TemplateWeights, DEFAULT_FOLDS, DEFAULT_THRESHOLD,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScreeningSpec {
    pub enabled: bool,
    pub threshold: f64,
    pub folds: usize,
}

impl Default for ScreeningSpec {
    fn default() -> Self {
        ScreeningSpec {
            enabled: true,
            threshold: DEFAULT_THRESHOLD,
            folds: DEFAULT_FOLDS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct HarmonizeConfig {
    pub filter: FilterSpec,
    pub resample: ResampleSpec,
    pub screening: ScreeningSpec,
    /// Worker threads for per-trial preprocessing; 0 and 1 run serially.
    pub jobs: usize,
}

/// One subject after harmonization. `references` is keyed by session id and
/// empty when alignment has not been applied.
#[derive(Debug, Clone, PartialEq)]
pub struct HarmonizedSubject {
    pub dataset: String,
    pub subject_id: String,
    pub trials: Vec<Trial>,
    pub references: BTreeMap<String, AlignReference>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HarmonizedDataset {
    pub name: String,
    /// Class names the trial labels index into.
    pub classes: Vec<String>,
    pub subjects: Vec<HarmonizedSubject>,
    pub screening: Option<ScreeningResult>,
}

impl HarmonizedDataset {
    pub fn n_trials(&self) -> usize {
        self.subjects.iter().map(|s| s.trials.len()).sum()
    }

    pub fn retained(&self) -> Vec<String> {
        self.subjects.iter().map(|s| s.subject_id.clone()).collect()
    }
}

/// Band-pass, resample and template projection of a single trial.
pub fn to_template_space(trial: &Trial, cfg: &HarmonizeConfig, weights: &TemplateWeights) -> Result<Trial> {
    let filtered = bandpass(trial, &cfg.filter)?;
    let resampled = resample(&filtered, &cfg.resample)?;
    apply_template(&resampled, weights)
}

/// Unified class names occurring in any of the vocabularies, in unified order.
pub fn unified_classes<'a>(vocabs: impl IntoIterator<Item = &'a LabelVocab>) -> Result<Vec<String>> {
    let unified = LabelVocab::unified();
    let mut present = [false; UNIFIED_LABELS.len()];
    for v in vocabs {
        for id in v.map_into(&unified)? {
            present[id as usize] = true;
        }
    }
    Ok(UNIFIED_LABELS
        .iter()
        .zip(present)
        .filter(|(_, p)| *p)
        .map(|(n, _)| n.to_string())
        .collect())
}

/// Applies `f` to every trial on up to `jobs` threads, keeping input order.
fn map_trials<F>(trials: &[Trial], jobs: usize, f: F) -> Result<Vec<Trial>>
where
    F: Fn(&Trial) -> Result<Trial> + Sync,
{
    if jobs <= 1 || trials.len() < 2 {
        return trials.iter().map(&f).collect();
    }
    let chunk = trials.len().div_ceil(jobs);
    std::thread::scope(|scope| {
        let handles: Vec<_> = trials
            .chunks(chunk)
            .map(|part| scope.spawn(|| part.iter().map(&f).collect::<Result<Vec<_>>>()))
            .collect();
        let mut out = Vec::with_capacity(trials.len());
        for h in handles {
            out.extend(h.join().expect("preprocessing worker panicked")?);
        }
        Ok(out)
    })
}

/// Loads every subject of a manifest into template space, relabelled into
/// `classes`. Trials keep acquisition order.
pub fn load_template_space(
    manifest: &DatasetManifest,
    cfg: &HarmonizeConfig,
    template: &TemplateSpec,
    classes: &[String],
) -> Result<Vec<HarmonizedSubject>> {
    let weights = TemplateWeights::build(template, &manifest.channels, &template.montage)?;
    let target = LabelVocab::new(classes)?;
    let map = manifest.label_vocab.map_into(&target)?;
    let mut out = Vec::with_capacity(manifest.subjects.len());
    for subject in &manifest.subjects {
        let raw = manifest.load_subject(&subject.id)?;
        let mut trials = map_trials(&raw, cfg.jobs, |t| to_template_space(t, cfg, &weights))?;
        for (h, t) in trials.iter_mut().zip(&raw) {
            h.label = match t.label {
                Some(l) => Some(*map.get(l as usize).ok_or_else(|| {
                    Error::Manifest(format!("label {l} outside the {} vocabulary", manifest.name))
                })?),
                None => None,
            };
        }
        out.push(HarmonizedSubject {
            dataset: manifest.name.clone(),
            subject_id: subject.id.clone(),
            trials,
            references: BTreeMap::new(),
        });
    }
    Ok(out)
}

/// Fits one alignment reference per session and whitens that session's trials.
pub fn align_by_session(subject: &mut HarmonizedSubject) -> Result<()> {
    let mut sessions: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, t) in subject.trials.iter().enumerate() {
        sessions.entry(t.session_id.clone()).or_default().push(i);
    }
    for (session, idx) in sessions {
        let group: Vec<Trial> = idx.iter().map(|&i| subject.trials[i].clone()).collect();
        let reference = ea_reference(&group)?;
        for &i in &idx {
            subject.trials[i] = ea_whiten(&subject.trials[i], &reference)?;
        }
        subject.references.insert(session, reference);
    }
    Ok(())
}

/// Full pretraining harmonization of one dataset.
pub fn harmonize_dataset(
    manifest: &DatasetManifest,
    cfg: &HarmonizeConfig,
    template: &TemplateSpec,
    classes: &[String],
) -> Result<HarmonizedDataset> {
    let mut subjects = load_template_space(manifest, cfg, template, classes)?;
    let screening = if cfg.screening.enabled {
        let input: Vec<(String, Vec<Trial>)> = subjects
            .iter()
            .map(|s| (s.subject_id.clone(), s.trials.clone()))
            .collect();
        let result = screen_subjects(&input, cfg.screening.threshold, cfg.screening.folds)?;
        subjects.retain(|s| result.retained.contains(&s.subject_id));
        log::info!(
            "{}: screening kept {}/{} subjects",
            manifest.name,
            result.retained.len(),
            input.len()
        );
        Some(result)
    } else {
        None
    };
    for s in &mut subjects {
        align_by_session(s)?;
    }
    Ok(HarmonizedDataset {
        name: manifest.name.clone(),
        classes: classes.to_vec(),
        subjects,
        screening,
    })
}

/// Sidecar of a harmonized dataset directory, next to its manifest.
pub const HARMONIZED_FILE: &str = "harmonized.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HarmonizedSidecar {
    name: String,
    classes: Vec<String>,
    /// subject -> session -> reference; empty for unaligned downstream data.
    references: BTreeMap<String, BTreeMap<String, AlignReference>>,
    screening: Option<ScreeningResult>,
}

/// Writes trials (as a regular dataset with a manifest) plus the alignment
/// references and screening outcome into `dir`.
pub fn save_harmonized(ds: &HarmonizedDataset, dir: &Path) -> Result<DatasetManifest> {
    let first = ds
        .subjects
        .iter()
        .flat_map(|s| s.trials.first())
        .next()
        .ok_or_else(|| Error::InvalidArgument(format!("{}: nothing to save", ds.name)))?;
    let mut subjects = Vec::with_capacity(ds.subjects.len());
    for s in &ds.subjects {
        let mut sessions: Vec<SessionEntry> = Vec::new();
        for t in &s.trials {
            let idx = match sessions.iter().position(|e| e.id == t.session_id) {
                Some(i) => i,
                None => {
                    sessions.push(SessionEntry { id: t.session_id.clone(), trials: Vec::new() });
                    sessions.len() - 1
                }
            };
            let entry = &mut sessions[idx];
            let rel = PathBuf::from(&s.subject_id)
                .join(&entry.id)
                .join(format!("t{:04}.mirp", entry.trials.len()));
            fs::create_dir_all(dir.join(&rel).parent().unwrap_or(dir))?;
            write_trial_file(t, &dir.join(&rel))?;
            entry.trials.push(rel);
        }
        subjects.push(SubjectEntry { id: s.subject_id.clone(), sessions });
    }
    let manifest = DatasetManifest {
        name: ds.name.clone(),
        fs: first.fs,
        channels: first.channels.clone(),
        label_vocab: LabelVocab::new(&ds.classes)?,
        subjects,
        root: dir.to_path_buf(),
    };
    manifest.save()?;
    let sidecar = HarmonizedSidecar {
        name: ds.name.clone(),
        classes: ds.classes.clone(),
        references: ds
            .subjects
            .iter()
            .map(|s| (s.subject_id.clone(), s.references.clone()))
            .collect(),
        screening: ds.screening.clone(),
    };
    let mut text = serde_json::to_string_pretty(&sidecar)?;
    text.push('\n');
    fs::write(dir.join(HARMONIZED_FILE), text)?;
    Ok(manifest)
}

/// Reads a directory written by [`save_harmonized`].
pub fn load_harmonized(dir: &Path) -> Result<HarmonizedDataset> {
    let sidecar_path = dir.join(HARMONIZED_FILE);
    if !sidecar_path.exists() {
        return Err(Error::Manifest(format!(
            "{} is not a harmonized dataset (no {HARMONIZED_FILE})",
            dir.display()
        )));
    }
    let mut sidecar: HarmonizedSidecar = serde_json::from_str(&fs::read_to_string(&sidecar_path)?)?;
    let manifest = DatasetManifest::load(dir)?;
    let subjects = manifest
        .subjects
        .iter()
        .map(|s| {
            Ok(HarmonizedSubject {
                dataset: sidecar.name.clone(),
                subject_id: s.id.clone(),
                trials: manifest.load_subject(&s.id)?,
                references: sidecar.references.remove(&s.id).unwrap_or_default(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(HarmonizedDataset {
        name: sidecar.name,
        classes: sidecar.classes,
        subjects,
        screening: sidecar.screening,
    })
}

/// Downstream preparation: template space only. Alignment is fit later on
/// each subject's calibration trials.
pub fn harmonize_downstream(
    manifest: &DatasetManifest,
    cfg: &HarmonizeConfig,
    template: &TemplateSpec,
    classes: &[String],
) -> Result<HarmonizedDataset> {
    Ok(HarmonizedDataset {
        name: manifest.name.clone(),
        classes: classes.to_vec(),
        subjects: load_template_space(manifest, cfg, template, classes)?,
        screening: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_dataset, SynthConfig};
    use crate::spatial::mean_covariance;

    fn small_synth(dir: &std::path::Path, channels: Option<Vec<String>>, fs: f64) -> DatasetManifest {
        let mut cfg = SynthConfig {
            n_subjects: 2,
            trials_per_class: 10,
            fs,
            duration: 2.0,
            seed: 3,
            ..Default::default()
        };
        if let Some(c) = channels {
            cfg.channels = c;
        }
        synth_dataset(&cfg, dir).unwrap()
    }

    fn harmonize(dir: &std::path::Path, chans: &[&str]) -> HarmonizedDataset {
        let chans: Vec<String> = chans.iter().map(|s| s.to_string()).collect();
        let m = small_synth(dir, Some(chans), 512.0);
        let cfg = HarmonizeConfig {
            screening: ScreeningSpec { enabled: false, ..Default::default() },
            ..Default::default()
        };
        let classes = unified_classes([&m.label_vocab]).unwrap();
        harmonize_dataset(&m, &cfg, &TemplateSpec::default(), &classes).unwrap()
    }

    fn frob(a: &ndarray::Array2<f64>) -> f64 {
        a.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    #[test]
    fn harmonized_trials_are_template_space_and_white() {
        let dir = tempfile::tempdir().unwrap();
        // 27 electrodes, only partly overlapping the template
        let h = harmonize(
            dir.path(),
            &[
                "F3", "Fz", "F4", "FC5", "FC3", "FC1", "FCz", "FC2", "FC4", "FC6", "C5", "C3", "C1", "Cz",
                "C2", "C4", "C6", "CP5", "CP3", "CP1", "CPz", "CP2", "CP4", "CP6", "P3", "Pz", "P4",
            ],
        );
        assert_eq!(h.subjects.len(), 2);
        for s in &h.subjects {
            for t in &s.trials {
                assert_eq!(t.n_channels(), 23);
                assert_eq!(t.fs, 250.0);
                assert_eq!(t.n_samples(), 500);
            }
            let cov = mean_covariance(&s.trials).unwrap();
            let dev = frob(&(cov - ndarray::Array2::<f64>::eye(23)));
            assert!(dev < 1e-6, "{dev}");
            assert_eq!(s.references.len(), 1);
        }
    }

    #[test]
    fn fewer_sources_than_template_whitens_to_a_projector() {
        // 14 sources cannot span 23 template channels: the aligned mean
        // covariance is the projector onto the 14-dimensional signal subspace
        let dir = tempfile::tempdir().unwrap();
        let h = harmonize(
            dir.path(),
            &["FC3", "FCz", "FC4", "C5", "C3", "C1", "Cz", "C2", "C4", "C6", "CP3", "CPz", "CP4", "Pz"],
        );
        for s in &h.subjects {
            let cov = mean_covariance(&s.trials).unwrap();
            assert!(s.trials.iter().all(|t| t.data.iter().all(|v| v.is_finite())));
            assert!(frob(&(cov.dot(&cov) - &cov)) < 1e-6);
            assert!((cov.diag().sum() - 14.0).abs() < 1e-6);
        }
    }

    #[test]
    fn unknown_electrode_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = small_synth(dir.path(), None, 250.0);
        m.channels[3] = "XX9".into();
        let err = load_template_space(&m, &HarmonizeConfig::default(), &TemplateSpec::default(), &["left_hand".into(), "right_hand".into()])
            .unwrap_err();
        assert!(err.to_string().contains("XX9"));
    }

    #[test]
    fn unified_class_order() {
        let a = LabelVocab::new(&["right_hand", "feet"]).unwrap();
        let b = LabelVocab::new(&["left_hand", "right"]).unwrap();
        assert_eq!(unified_classes([&a, &b]).unwrap(), vec!["left_hand", "right_hand", "feet"]);
        let bad = LabelVocab::new(&["jump"]).unwrap();
        assert!(unified_classes([&bad]).is_err());
    }

    #[test]
    fn harmonized_round_trip_and_parallel_match() {
        let dir = tempfile::tempdir().unwrap();
        let h = harmonize(dir.path().join("raw").as_path(), &["C3", "Cz", "C4", "FC3", "FC4", "CP3", "CP4", "Pz"]);
        let out = dir.path().join("h");
        save_harmonized(&h, &out).unwrap();
        let back = load_harmonized(&out).unwrap();
        assert_eq!((&back.name, &back.classes, &back.screening), (&h.name, &h.classes, &h.screening));
        for (a, b) in back.subjects.iter().zip(&h.subjects) {
            assert_eq!(a.references, b.references);
            assert_eq!(a.trials.len(), b.trials.len());
            for (x, y) in a.trials.iter().zip(&b.trials) {
                assert_eq!((x.label, &x.channels, &x.session_id), (y.label, &y.channels, &y.session_id));
                // samples are stored as f32
                assert!(x.data.iter().zip(&y.data).all(|(p, q)| (p - q).abs() <= 1e-6 * q.abs().max(1.0)));
            }
            let dev = frob(&(mean_covariance(&a.trials).unwrap() - mean_covariance(&b.trials).unwrap()));
            assert!(dev < 1e-6, "{dev}");
        }
        assert!(load_harmonized(dir.path().join("raw").as_path()).is_err());

        let m = DatasetManifest::load(dir.path().join("raw").as_path()).unwrap();
        let classes = unified_classes([&m.label_vocab]).unwrap();
        let serial = load_template_space(&m, &HarmonizeConfig::default(), &TemplateSpec::default(), &classes).unwrap();
        let cfg = HarmonizeConfig { jobs: 3, ..Default::default() };
        let parallel = load_template_space(&m, &cfg, &TemplateSpec::default(), &classes).unwrap();
        assert_eq!(serial, parallel);
    }
}
