//! Zero-phase Butterworth band-pass.
//!
//! The digital filter is designed from the analog low-pass prototype with a
//! band-pass transform and a pre-warped bilinear map, then realized as
//! second-order sections. Filtering runs forward and backward over an
//! odd-reflected extension of the signal with steady-state initial
//! conditions. Both pass orders are averaged, which makes the operator
//! exactly commute with time reversal.

use std::f64::consts::PI;

use ndarray::{Array2, ArrayView1, Axis};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::data::Trial;
use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSpec {
    pub low_hz: f64,
    pub high_hz: f64,
    pub order: usize,
}

impl Default for FilterSpec {
    fn default() -> Self {
        FilterSpec {
            low_hz: 8.0,
            high_hz: 30.0,
            order: 4,
        }
    }
}

/// One biquad: `b0 + b1 z^-1 + b2 z^-2` over `1 + a1 z^-1 + a2 z^-2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sos {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Sos {
    /// Steady-state DF-II transposed state for a unit step input.
    fn step_state(&self) -> [f64; 2] {
        let [b0, b1, b2] = self.b;
        let [_, a1, a2] = self.a;
        let g = (b0 + b1 + b2) / (1.0 + a1 + a2);
        let z2 = b2 - a2 * g;
        let z1 = b1 - a1 * g + z2;
        [z1, z2]
    }

    fn dc_gain(&self) -> f64 {
        self.b.iter().sum::<f64>() / self.a.iter().sum::<f64>()
    }
}

/// Designs an order-`order` Butterworth band-pass; returns `order` sections.
pub fn butter_bandpass_sos(order: usize, low_hz: f64, high_hz: f64, fs: f64) -> Result<Vec<Sos>> {
    if order == 0 {
        return Err(invalid("filter order must be at least 1"));
    }
    if !(low_hz > 0.0 && low_hz < high_hz && high_hz < fs / 2.0) {
        return Err(invalid(format!(
            "band {low_hz}-{high_hz} Hz must satisfy 0 < low < high < Nyquist ({} Hz)",
            fs / 2.0
        )));
    }
    let fs2 = 2.0 * fs;
    let w_lo = fs2 * (PI * low_hz / fs).tan();
    let w_hi = fs2 * (PI * high_hz / fs).tan();
    let bw = w_hi - w_lo;
    let w0_sq = w_lo * w_hi;

    let n = order as f64;
    let mut analog_poles = Vec::with_capacity(2 * order);
    for k in 0..order {
        let theta = PI * (2.0 * k as f64 + n + 1.0) / (2.0 * n);
        let p = Complex64::from_polar(1.0, theta);
        // s^2 - p*bw*s + w0^2 = 0
        let half = p * bw / 2.0;
        let disc = (half * half - w0_sq).sqrt();
        analog_poles.push(half + disc);
        analog_poles.push(half - disc);
    }
    let digital: Vec<Complex64> = analog_poles
        .iter()
        .map(|&s| (fs2 + s) / (fs2 - s))
        .collect();

    // overall gain: bw^N from the transform, (2fs)^N from the N zeros at s=0,
    // divided by the product of (2fs - p) over all poles
    let mut gain = Complex64::new((bw * fs2).powi(order as i32), 0.0);
    for &p in &analog_poles {
        gain /= fs2 - p;
    }
    let gain = gain.re;

    let mut upper: Vec<Complex64> = digital.into_iter().filter(|p| p.im > 0.0).collect();
    upper.sort_by(|a, b| a.norm().partial_cmp(&b.norm()).unwrap());
    if upper.len() != order {
        return Err(crate::Error::Numerical(
            "band-pass poles did not form conjugate pairs".into(),
        ));
    }
    let mut sections: Vec<Sos> = upper
        .iter()
        .map(|p| Sos {
            b: [1.0, 0.0, -1.0],
            a: [1.0, -2.0 * p.re, p.norm_sqr()],
        })
        .collect();
    for v in sections[0].b.iter_mut() {
        *v *= gain;
    }
    Ok(sections)
}

fn sosfilt_in_place(sections: &[Sos], x: &mut [f64]) {
    // initial state proportional to the first sample, as for a step that
    // has been running forever
    let x0 = x[0];
    let mut scale = x0;
    for s in sections {
        let [z1i, z2i] = s.step_state();
        let (mut z1, mut z2) = (z1i * scale, z2i * scale);
        scale *= s.dc_gain();
        let [b0, b1, b2] = s.b;
        let [_, a1, a2] = s.a;
        for v in x.iter_mut() {
            let input = *v;
            let y = b0 * input + z1;
            z1 = b1 * input - a1 * y + z2;
            z2 = b2 * input - a2 * y;
            *v = y;
        }
    }
}

fn filtfilt_once(sections: &[Sos], x: &[f64], padlen: usize) -> Vec<f64> {
    let n = x.len();
    let mut ext = Vec::with_capacity(n + 2 * padlen);
    for i in (1..=padlen).rev() {
        ext.push(2.0 * x[0] - x[i]);
    }
    ext.extend_from_slice(x);
    for i in 1..=padlen {
        ext.push(2.0 * x[n - 1] - x[n - 1 - i]);
    }
    sosfilt_in_place(sections, &mut ext);
    ext.reverse();
    sosfilt_in_place(sections, &mut ext);
    ext.reverse();
    ext[padlen..padlen + n].to_vec()
}

/// Zero-phase filtering of one signal.
pub fn sosfiltfilt(sections: &[Sos], x: ArrayView1<f64>) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let x: Vec<f64> = x.to_vec();
    let padlen = (3 * (2 * sections.len() + 1)).min(n - 1);
    let fwd = filtfilt_once(sections, &x, padlen);
    let rev_in: Vec<f64> = x.iter().rev().copied().collect();
    let mut bwd = filtfilt_once(sections, &rev_in, padlen);
    bwd.reverse();
    fwd.iter().zip(&bwd).map(|(a, b)| 0.5 * (a + b)).collect()
}

/// Band-passes every channel of a trial; shape, labels and rate are kept.
pub fn bandpass(trial: &Trial, spec: &FilterSpec) -> Result<Trial> {
    let sections = butter_bandpass_sos(spec.order, spec.low_hz, spec.high_hz, trial.fs)?;
    let t = trial.n_samples();
    if t <= 3 * spec.order {
        return Err(invalid(format!(
            "trial of {t} samples is too short for an order-{} filter",
            spec.order
        )));
    }
    let mut out = Array2::zeros(trial.data.dim());
    for (src, mut dst) in trial.data.axis_iter(Axis(0)).zip(out.axis_iter_mut(Axis(0))) {
        let y = sosfiltfilt(&sections, src);
        dst.assign(&ArrayView1::from(&y));
    }
    Ok(trial.with_data(out, trial.channels.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array1;
    use proptest::prelude::*;

    fn sine_trial(freq: f64, fs: f64, n: usize) -> Trial {
        let data = Array2::from_shape_fn((1, n), |(_, i)| (2.0 * PI * freq * i as f64 / fs).sin());
        Trial::new(data, None, fs, vec!["Cz".into()], "s", "0").unwrap()
    }

    /// Amplitude at `freq` by direct DFT projection; independent of the filter.
    fn tone_amplitude(x: &[f64], freq: f64, fs: f64) -> f64 {
        let (mut re, mut im) = (0.0, 0.0);
        for (i, v) in x.iter().enumerate() {
            let ph = 2.0 * PI * freq * i as f64 / fs;
            re += v * ph.cos();
            im += v * ph.sin();
        }
        2.0 * (re * re + im * im).sqrt() / x.len() as f64
    }

    fn rms(x: &[f64]) -> f64 {
        (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
    }

    #[test]
    fn design_has_unit_gain_at_band_centre() {
        let fs = 250.0;
        let sos = butter_bandpass_sos(4, 8.0, 30.0, fs).unwrap();
        // evaluate H at the frequency whose pre-warped value is the centre
        let w_lo = (PI * 8.0 / fs).tan();
        let w_hi = (PI * 30.0 / fs).tan();
        let centre = (w_lo * w_hi).sqrt().atan() * fs / PI;
        let z = Complex64::from_polar(1.0, -2.0 * PI * centre / fs);
        let h: Complex64 = sos
            .iter()
            .map(|s| {
                (s.b[0] + s.b[1] * z + s.b[2] * z * z) / (s.a[0] + s.a[1] * z + s.a[2] * z * z)
            })
            .product();
        assert!((h.norm() - 1.0).abs() < 1e-9, "{}", h.norm());
        for s in &sos {
            // stable: poles inside the unit circle
            assert!(s.a[2] < 1.0);
        }
    }

    #[test]
    fn passband_tone_is_kept() {
        let fs = 250.0;
        let trial = sine_trial(15.0, fs, 1000);
        let out = bandpass(&trial, &FilterSpec::default()).unwrap();
        let x = trial.data.row(0).to_vec();
        let y = out.data.row(0).to_vec();
        let ratio = rms(&y) / rms(&x);
        assert!((ratio - 1.0).abs() < 0.05, "rms ratio {ratio}");
    }

    #[test]
    fn stopband_tones_drop_twenty_db() {
        let fs = 250.0;
        let pass = bandpass(&sine_trial(15.0, fs, 1000), &FilterSpec::default()).unwrap();
        let pass_amp = tone_amplitude(&pass.data.row(0).to_vec(), 15.0, fs);
        for f in [2.0, 50.0] {
            let out = bandpass(&sine_trial(f, fs, 1000), &FilterSpec::default()).unwrap();
            let amp = tone_amplitude(&out.data.row(0).to_vec(), f, fs);
            let db = 20.0 * (amp / pass_amp).log10();
            assert!(db <= -20.0, "{f} Hz only {db:.1} dB down");
        }
    }

    #[test]
    fn zeros_stay_zero() {
        let trial = Trial::new(Array2::zeros((2, 100)), None, 250.0, vec!["a".into(), "b".into()], "s", "0")
            .unwrap();
        let out = bandpass(&trial, &FilterSpec::default()).unwrap();
        assert!(out.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn nyquist_and_length_errors() {
        let trial = sine_trial(10.0, 50.0, 500);
        assert!(bandpass(&trial, &FilterSpec::default()).is_err());
        let short = sine_trial(10.0, 250.0, 12);
        assert!(bandpass(&short, &FilterSpec::default()).is_err());
    }

    #[test]
    fn time_reversal_commutes() {
        let sos = butter_bandpass_sos(4, 8.0, 30.0, 250.0).unwrap();
        let x: Array1<f64> = Array1::from_shape_fn(300, |i| ((i * 7919) % 113) as f64 - 56.0);
        let y = sosfiltfilt(&sos, x.view());
        let xr: Array1<f64> = x.iter().rev().copied().collect();
        let mut yr = sosfiltfilt(&sos, xr.view());
        yr.reverse();
        assert_eq!(y, yr);
    }

    #[test]
    fn repeated_filtering_is_stable_in_band() {
        let fs = 250.0;
        let trial = sine_trial(17.0, fs, 1000);
        let once = bandpass(&trial, &FilterSpec::default()).unwrap();
        let twice = bandpass(&once, &FilterSpec::default()).unwrap();
        let diff: Vec<f64> = (&once.data - &twice.data).iter().copied().collect();
        let rel = rms(&diff) / rms(&once.data.iter().copied().collect::<Vec<_>>());
        assert!(rel < 1e-2, "{rel}");
    }

    proptest! {
        #[test]
        fn linear(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let sos = butter_bandpass_sos(4, 8.0, 30.0, 250.0).unwrap();
            let x: Array1<f64> = (0..200).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y: Array1<f64> = (0..200).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mix = &x * a + &y * b;
            let lhs = Array1::from(sosfiltfilt(&sos, mix.view()));
            let rhs = Array1::from(sosfiltfilt(&sos, x.view())) * a + Array1::from(sosfiltfilt(&sos, y.view())) * b;
            let err = (&lhs - &rhs).mapv(|v| v * v).sum().sqrt();
            let scale = rhs.mapv(|v| v * v).sum().sqrt().max(1e-12);
            prop_assert!(err / scale < 1e-6);
        }
    }
}
