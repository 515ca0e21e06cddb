//! Synthetic motor-imagery EEG.
//!
//! Every channel carries 1/f background noise (a shared component plus an
//! independent per-channel one). Two 10 Hz sensorimotor sources sit under C3
//! and C4 and spread to neighbouring electrodes with a Gaussian fall-off in
//! scalp distance. Imagining a hand attenuates the source over the
//! contralateral hemisphere by a per-subject ERD factor: left_hand damps the
//! C4 source, right_hand damps the C3 source.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use sha2::{Digest, Sha256};

use super::io::write_trial_file;
use super::manifest::{DatasetManifest, SessionEntry, SubjectEntry};
use super::montage::Montage;
use super::trial::{LabelVocab, Trial};
use crate::error::{invalid, Result};
use crate::spatial::TEMPLATE_ELECTRODES;

pub const SMR_HZ: f64 = 10.0;
pub const ERD_RANGE: (f64, f64) = (0.3, 0.7);

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub name: String,
    pub n_subjects: usize,
    pub trials_per_class: usize,
    pub classes: Vec<String>,
    pub fs: f64,
    pub duration: f64,
    pub seed: u64,
    /// Prefix of generated subject ids; distinct prefixes give distinct subjects.
    pub subject_prefix: String,
    /// Electrodes to record; defaults to the 23-electrode template.
    pub channels: Vec<String>,
    /// Peak amplitude of the sensorimotor sources relative to unit-RMS noise.
    pub smr_amplitude: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            name: "synth".into(),
            n_subjects: 4,
            trials_per_class: 50,
            classes: vec!["left_hand".into(), "right_hand".into()],
            fs: 250.0,
            duration: 4.0,
            seed: 0,
            subject_prefix: "S".into(),
            channels: TEMPLATE_ELECTRODES.iter().map(|s| s.to_string()).collect(),
            smr_amplitude: 0.6,
        }
    }
}

impl SynthConfig {
    pub fn subject_ids(&self) -> Vec<String> {
        (1..=self.n_subjects)
            .map(|i| format!("{}{:02}", self.subject_prefix, i))
            .collect()
    }

    fn n_samples(&self) -> usize {
        (self.duration * self.fs).round() as usize
    }
}

/// Per-subject draws that stay fixed across that subject's trials.
#[derive(Debug, Clone)]
pub struct SubjectProfile {
    pub gain: f64,
    pub erd: f64,
    pub channel_noise: Vec<f64>,
    pub smr_hz: f64,
}

fn subject_rng(seed: u64, subject_id: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(subject_id.as_bytes());
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

fn draw_profile(rng: &mut ChaCha8Rng, n_channels: usize) -> SubjectProfile {
    SubjectProfile {
        gain: rng.random_range(0.5..2.0),
        erd: rng.random_range(ERD_RANGE.0..ERD_RANGE.1),
        channel_noise: (0..n_channels).map(|_| rng.random_range(0.7..1.3)).collect(),
        smr_hz: SMR_HZ,
    }
}

/// Unit-variance noise with a 1/f power spectrum.
fn pink_noise(rng: &mut ChaCha8Rng, n: usize, planner: &mut FftPlanner<f64>) -> Vec<f64> {
    let mut buf: Vec<Complex<f64>> = (0..n)
        .map(|_| Complex::new(StandardNormal.sample(rng), 0.0))
        .collect();
    planner.plan_fft_forward(n).process(&mut buf);
    buf[0] = Complex::new(0.0, 0.0);
    for (k, v) in buf.iter_mut().enumerate().skip(1) {
        let f = k.min(n - k) as f64;
        *v /= f.sqrt();
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let mut out: Vec<f64> = buf.iter().map(|c| c.re).collect();
    let mean = out.iter().sum::<f64>() / n as f64;
    let var = out.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
    let sd = var.sqrt().max(1e-300);
    for x in out.iter_mut() {
        *x = (*x - mean) / sd;
    }
    out
}

fn source_spread(montage: &Montage, channels: &[String], centre: &str) -> Result<Vec<f64>> {
    const SIGMA: f64 = 0.2;
    let (cx, cy) = montage.get(centre)?;
    channels
        .iter()
        .map(|ch| {
            let (x, y) = montage.get(ch)?;
            let d2 = (x - cx).powi(2) + (y - cy).powi(2);
            Ok((-d2 / (2.0 * SIGMA * SIGMA)).exp())
        })
        .collect()
}

struct SubjectGenerator {
    profile: SubjectProfile,
    spread_left: Vec<f64>,
    spread_right: Vec<f64>,
}

impl SubjectGenerator {
    fn trial(
        &self,
        rng: &mut ChaCha8Rng,
        class_name: &str,
        cfg: &SynthConfig,
        planner: &mut FftPlanner<f64>,
    ) -> Array2<f64> {
        let c = cfg.channels.len();
        let t = cfg.n_samples();
        let shared = pink_noise(rng, t, planner);
        let jitter = Normal::new(0.0, 0.15).unwrap();
        let mut amp_left = cfg.smr_amplitude * f64::exp(jitter.sample(rng));
        let mut amp_right = cfg.smr_amplitude * f64::exp(jitter.sample(rng));
        match class_name {
            "left_hand" => amp_right *= self.profile.erd,
            "right_hand" => amp_left *= self.profile.erd,
            _ => unreachable!("class set validated"),
        }
        let phase_left = rng.random_range(0.0..2.0 * PI);
        let phase_right = rng.random_range(0.0..2.0 * PI);
        let w = 2.0 * PI * self.profile.smr_hz / cfg.fs;
        let src_left: Vec<f64> = (0..t).map(|i| amp_left * (w * i as f64 + phase_left).sin()).collect();
        let src_right: Vec<f64> =
            (0..t).map(|i| amp_right * (w * i as f64 + phase_right).sin()).collect();

        let mut data = Array2::zeros((c, t));
        for ch in 0..c {
            let own = pink_noise(rng, t, planner);
            let noise_sd = self.profile.channel_noise[ch];
            let (sl, sr) = (self.spread_left[ch], self.spread_right[ch]);
            let mut row = data.row_mut(ch);
            for i in 0..t {
                let background = noise_sd * (0.8 * own[i] + 0.6 * shared[i]);
                row[i] = self.profile.gain * (background + sl * src_left[i] + sr * src_right[i]);
            }
        }
        data
    }
}

/// Generates `cfg.n_subjects` subjects (one session each) into `out_dir` and
/// returns the saved manifest. Output is a pure function of `cfg`.
pub fn synth_dataset(cfg: &SynthConfig, out_dir: &Path) -> Result<DatasetManifest> {
    let vocab = LabelVocab::new(&cfg.classes)?;
    if vocab.is_empty()
        || vocab
            .names()
            .iter()
            .any(|n| n != "left_hand" && n != "right_hand")
    {
        return Err(invalid(format!(
            "unsupported class set {:?}: only left_hand and right_hand can be synthesized",
            cfg.classes
        )));
    }
    if cfg.n_subjects == 0 || cfg.trials_per_class == 0 {
        return Err(invalid("need at least one subject and one trial per class"));
    }
    if !(cfg.fs > 0.0) || cfg.n_samples() < 250 {
        return Err(invalid(format!(
            "duration {} s at {} Hz gives fewer than 250 samples",
            cfg.duration, cfg.fs
        )));
    }
    let montage = Montage::standard_1010();
    let spread_left = source_spread(&montage, &cfg.channels, "C3")?;
    let spread_right = source_spread(&montage, &cfg.channels, "C4")?;
    let mut planner = FftPlanner::new();

    let mut subjects = Vec::with_capacity(cfg.n_subjects);
    for subject_id in cfg.subject_ids() {
        let mut rng = subject_rng(cfg.seed, &subject_id);
        let gen = SubjectGenerator {
            profile: draw_profile(&mut rng, cfg.channels.len()),
            spread_left: spread_left.clone(),
            spread_right: spread_right.clone(),
        };
        let mut order: Vec<u32> = (0..vocab.len() as u32)
            .flat_map(|l| std::iter::repeat_n(l, cfg.trials_per_class))
            .collect();
        order.shuffle(&mut rng);

        let session_id = "0";
        let rel_dir = PathBuf::from(&subject_id).join(session_id);
        fs::create_dir_all(out_dir.join(&rel_dir))?;
        let mut paths = Vec::with_capacity(order.len());
        for (i, &label) in order.iter().enumerate() {
            let data = gen.trial(&mut rng, &vocab.names()[label as usize], cfg, &mut planner);
            let trial = Trial::new(
                data,
                Some(label),
                cfg.fs,
                cfg.channels.clone(),
                subject_id.clone(),
                session_id,
            )?;
            let rel = rel_dir.join(format!("t{i:04}.mirp"));
            write_trial_file(&trial, &out_dir.join(&rel))?;
            paths.push(rel);
        }
        subjects.push(SubjectEntry {
            id: subject_id,
            sessions: vec![SessionEntry {
                id: session_id.into(),
                trials: paths,
            }],
        });
    }

    let manifest = DatasetManifest {
        name: cfg.name.clone(),
        fs: cfg.fs,
        channels: cfg.channels.clone(),
        label_vocab: vocab,
        subjects,
        root: out_dir.to_path_buf(),
    };
    manifest.save()?;
    Ok(manifest)
}

/// The hidden per-subject draws, recomputed from the seed. Test helper.
pub fn subject_profile(cfg: &SynthConfig, subject_id: &str) -> SubjectProfile {
    let mut rng = subject_rng(cfg.seed, subject_id);
    draw_profile(&mut rng, cfg.channels.len())
}
