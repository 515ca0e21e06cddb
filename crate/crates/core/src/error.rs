use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("non-finite sample at channel {channel}, sample {sample}")]
    NonFiniteSample { channel: usize, sample: usize },

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },

    #[error("truncated {0}")]
    Truncated(String),

    #[error("invalid trial: {0}")]
    InvalidTrial(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown electrode {0:?}")]
    UnknownElectrode(String),

    #[error("channel mismatch: {0}")]
    ChannelMismatch(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("manifest: {0}")]
    Manifest(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("non-finite gradient in parameter {0}")]
    NonFiniteGradient(String),
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
