use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("missing file: {0}")]
    MissingFile(PathBuf),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("exposure values must be strictly increasing, got {0:?}")]
    BadEv(Vec<i32>),

    #[error("I/O failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("corrupt header: {0}")]
    CorruptHeader(String),

    #[error("image decode failure: {0}")]
    Decode(String),

    #[error("expected a single-channel 8-bit mask, found {0}")]
    WrongChannelCount(String),

    #[error("bad configuration: {0}")]
    BadConfig(String),

    #[error("exposure time must be positive, got {0}")]
    NonPositiveExposure(f64),

    #[error("spatial dims {height}x{width} must be divisible by {divisor}")]
    BadSpatialDims {
        height: usize,
        width: usize,
        divisor: usize,
    },

    #[error("memory slot {slot} out of range for {slots} slots")]
    SlotOutOfRange { slot: usize, slots: usize },

    #[error("expected {expected} inputs, got {actual}")]
    ArityMismatch { expected: usize, actual: usize },

    #[error("annotation merge requires hard masks")]
    SoftMaskRejected,

    #[error("patch size {size} exceeds image {height}x{width}")]
    PatchTooLarge { size: usize, height: usize, width: usize },

    #[error("image {height}x{width} is smaller than the {window}x{window} window")]
    ImageTooSmall { height: usize, width: usize, window: usize },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("training mode {mode} requires {what}")]
    ModeDataMismatch { mode: String, what: String },

    #[error("no prediction for {0}")]
    MissingPrediction(String),

    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),

    #[error("non-finite values in forward pass: {0}")]
    NumericFailure(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        if source.kind() == std::io::ErrorKind::NotFound {
            return Error::MissingFile(path.into());
        }
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
