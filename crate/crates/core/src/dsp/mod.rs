//! Temporal filtering and sample-rate conversion of trials.

mod filter;
mod resample;

pub use filter::{bandpass, butter_bandpass_sos, sosfiltfilt, FilterSpec, Sos};
pub use resample::{output_len, resample, resample_signal, ResampleSpec};
