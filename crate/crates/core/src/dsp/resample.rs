//! Polyphase Kaiser-windowed sinc resampling.
//!
//! Output sample `n` sits at input time `n * fs_in / fs_out`. When both rates
//! are whole numbers the ratio reduces to `L/M` and only `L` distinct
//! fractional phases exist, so each phase's taps are computed once. The
//! low-pass cutoff is the lower of the two Nyquist rates (scaled by a small
//! guard factor), so downsampling is anti-aliased. Signal edges are mirrored.

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::data::Trial;
use crate::error::{invalid, Result};

const CUTOFF_GUARD: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResampleSpec {
    pub f_target: f64,
    pub kernel_half_width: usize,
    pub window_beta: f64,
}

impl Default for ResampleSpec {
    fn default() -> Self {
        ResampleSpec {
            f_target: 250.0,
            kernel_half_width: 16,
            window_beta: 8.6,
        }
    }
}

/// Modified Bessel function of the first kind, order zero.
fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..200 {
        term *= q / (k as f64 * k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

struct Kernel {
    cutoff: f64,
    support: f64,
    beta: f64,
    i0_beta: f64,
}

impl Kernel {
    fn new(ratio: f64, half_width: usize, beta: f64) -> Self {
        let cutoff = ratio.min(1.0) * CUTOFF_GUARD;
        Kernel {
            cutoff,
            support: half_width as f64 / cutoff,
            beta,
            i0_beta: bessel_i0(beta),
        }
    }

    fn eval(&self, tau: f64) -> f64 {
        let u = tau / self.support;
        if u.abs() >= 1.0 {
            return 0.0;
        }
        let arg = std::f64::consts::PI * self.cutoff * tau;
        let sinc = if arg.abs() < 1e-12 { 1.0 } else { arg.sin() / arg };
        let window = bessel_i0(self.beta * (1.0 - u * u).sqrt()) / self.i0_beta;
        self.cutoff * sinc * window
    }

    /// Taps for input indices `first..first + len` around fractional time `t`,
    /// normalized to unit DC gain.
    fn taps(&self, t: f64) -> (i64, Vec<f64>) {
        let first = (t - self.support).floor() as i64 + 1;
        let last = (t + self.support).ceil() as i64 - 1;
        let mut w: Vec<f64> = (first..=last).map(|k| self.eval(t - k as f64)).collect();
        let sum: f64 = w.iter().sum();
        for v in w.iter_mut() {
            *v /= sum;
        }
        (first, w)
    }
}

fn mirror(mut k: i64, n: i64) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    k = k.rem_euclid(period);
    if k >= n {
        k = period - k;
    }
    k as usize
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn as_whole(x: f64) -> Option<u64> {
    let r = x.round();
    ((x - r).abs() < 1e-9 && r >= 1.0).then_some(r as u64)
}

/// Output length for `n` input samples.
pub fn output_len(n: usize, fs: f64, f_target: f64) -> usize {
    (n as f64 * f_target / fs).round() as usize
}

/// Resamples every row of `x` (channels × samples) from `fs` to `spec.f_target`.
pub fn resample_signal(x: &Array2<f64>, fs: f64, spec: &ResampleSpec) -> Result<Array2<f64>> {
    if !(fs > 0.0 && spec.f_target > 0.0) {
        return Err(invalid("sampling rates must be positive"));
    }
    if spec.kernel_half_width == 0 {
        return Err(invalid("kernel half width must be at least one tap"));
    }
    if fs == spec.f_target {
        return Ok(x.clone());
    }
    let (c, n) = x.dim();
    let n_out = output_len(n, fs, spec.f_target);
    if n_out < 2 {
        return Err(invalid(format!(
            "resampling {n} samples from {fs} Hz to {} Hz leaves {n_out} samples",
            spec.f_target
        )));
    }
    let kernel = Kernel::new(spec.f_target / fs, spec.kernel_half_width, spec.window_beta);

    // polyphase schedule: (base input index, phase id) per output sample
    let (schedule, phases): (Vec<(i64, usize)>, Vec<(i64, Vec<f64>)>) =
        match (as_whole(fs), as_whole(spec.f_target)) {
            (Some(fi), Some(fo)) => {
                let g = gcd(fi, fo);
                let (up, down) = (fo / g, fi / g);
                let mut phases = Vec::with_capacity(up as usize);
                for p in 0..up {
                    phases.push(kernel.taps(p as f64 / up as f64));
                }
                let schedule = (0..n_out as u64)
                    .map(|j| ((j * down / up) as i64, ((j * down) % up) as usize))
                    .collect();
                (schedule, phases)
            }
            _ => {
                let step = fs / spec.f_target;
                let mut phases = Vec::with_capacity(n_out);
                let mut schedule = Vec::with_capacity(n_out);
                for j in 0..n_out {
                    let t = j as f64 * step;
                    let base = t.floor();
                    phases.push(kernel.taps(t - base));
                    schedule.push((base as i64, j));
                }
                (schedule, phases)
            }
        };

    let mut out = Array2::zeros((c, n_out));
    for ch in 0..c {
        let row: ArrayView1<f64> = x.row(ch);
        for (j, &(base, phase)) in schedule.iter().enumerate() {
            let (offset, taps) = &phases[phase];
            let mut acc = 0.0;
            for (i, w) in taps.iter().enumerate() {
                let k = base + offset + i as i64;
                acc += w * row[mirror(k, n as i64)];
            }
            out[[ch, j]] = acc;
        }
    }
    Ok(out)
}

/// Resamples a trial to `spec.f_target`; `round(T * f_target / fs)` samples out.
pub fn resample(trial: &Trial, spec: &ResampleSpec) -> Result<Trial> {
    let data = resample_signal(&trial.data, trial.fs, spec)?;
    let mut out = trial.with_data(data, trial.channels.clone());
    out.fs = spec.f_target;
    Ok(out)
}
