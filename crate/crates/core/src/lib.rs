//! Harmonization, tokenization and pretraining pipeline for motor-imagery EEG.
//!
//! Trials from heterogeneous headsets are band-pass filtered, resampled to a
//! common rate, interpolated onto a fixed electrode template and whitened with
//! Euclidean alignment. A convolutional tokenizer turns each aligned trial into
//! a short token sequence that a small transformer learns from with a joint
//! masked-reconstruction and classification objective. The pretrained model is
//! then fine-tuned on a chronological calibration slice of a new subject.

pub mod data;
pub mod dsp;
pub mod error;
mod matrix_rows;
pub mod nn;
pub mod pipeline;
pub mod spatial;
pub mod tokenizer;
pub mod train;

pub use error::{Error, Result};
