use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("vector norm {norm:e} is at or below the normalization threshold")]
    ZeroNormVector { norm: f64 },

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        actual: usize,
    },

    #[error("batch is empty")]
    EmptyBatch,

    #[error("input is empty")]
    EmptyInput,

    #[error("length mismatch: {predictions} predictions vs {truths} ground-truth poses")]
    LengthMismatch { predictions: usize, truths: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("forward trace does not match the parameters it is paired with: {0}")]
    TraceMismatch(String),

    #[error("parameter shape mismatch: expected {expected} values, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },

    #[error("step {step} outside schedule range [0, {total}]")]
    StepOutOfRange { step: u64, total: u64 },

    #[error("no identity has at least two samples to form a pair")]
    NoEligibleIdentity,

    #[error("non-finite loss {value} at step {step} (epoch {epoch}, batch {batch})")]
    NonFiniteLoss {
        value: f64,
        step: u64,
        epoch: usize,
        batch: usize,
    },

    #[error("layer index {index} out of range for {layers} layers")]
    LayerOutOfRange { index: usize, layers: usize },

    #[error("thresholds must be strictly ascending")]
    UnsortedThresholds,

    #[error("{path}: record {record}: {message}")]
    MalformedRecord {
        path: PathBuf,
        record: usize,
        message: String,
    },

    #[error("{path}: record {record}: {angle} = {value} is outside [-pi/2, pi/2]")]
    PoseOutOfRange {
        path: PathBuf,
        record: usize,
        angle: &'static str,
        value: f64,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dims(context: impl Into<String>, expected: usize, actual: usize) -> Self {
        Error::DimensionMismatch {
            context: context.into(),
            expected,
            actual,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
