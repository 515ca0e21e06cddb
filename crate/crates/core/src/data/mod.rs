//! Trial containers, the on-disk trial format, dataset manifests, the built-in
//! montage and the synthetic motor-imagery generator.

mod io;
mod manifest;
mod montage;
mod split;
mod synth;
mod trial;

pub use io::{read_trial_file, write_trial_file, TRIAL_FORMAT_VERSION, TRIAL_MAGIC};
pub use manifest::{DatasetManifest, SessionEntry, SubjectEntry};
pub use montage::Montage;
pub use split::split_calibration;
pub use synth::{subject_profile, synth_dataset, SubjectProfile, SynthConfig, ERD_RANGE, SMR_HZ};
pub use trial::{LabelVocab, Trial, UNIFIED_LABELS};
