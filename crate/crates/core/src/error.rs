use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown unit {0:?}")]
    UnknownUnit(String),

    #[error("unknown dimension {0:?}")]
    UnknownDimension(String),

    #[error("incompatible dimensions: {from} vs {to}")]
    IncompatibleDimensions { from: String, to: String },

    #[error("non-finite value {0}")]
    NonFinite(f64),

    #[error("non-positive number {0}")]
    NonPositiveNumber(f64),

    #[error("registry line {line}: {message}")]
    Registry { line: usize, message: String },

    #[error("no {{{{convert}}}} template found")]
    NoTemplate,

    #[error("malformed template {template:?}: {reason}")]
    MalformedTemplate { template: String, reason: String },

    #[error("split ratios must be non-negative and sum to 1, got {0:?}")]
    BadRatios(Vec<f64>),

    #[error("dimension {dimension} has {available} training examples, need {k}")]
    InsufficientExamples {
        dimension: String,
        available: usize,
        k: usize,
    },

    #[error("model variant {variant} has no {head} head")]
    MissingHead {
        variant: &'static str,
        head: &'static str,
    },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("all class counts are zero")]
    AllZeroCounts,

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("matrix is {rows}x{cols}, expected square")]
    NonSquare { rows: usize, cols: usize },

    #[error("registry fingerprint mismatch: checkpoint {expected}, registry {actual}")]
    FingerprintMismatch { expected: String, actual: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
