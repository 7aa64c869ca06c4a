use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimensions {0:?}: expected 2 or 3 axes, each of extent >= 1")]
    InvalidDims(Vec<usize>),
    #[error("dimension mismatch: expected {expected:?}, found {found:?}")]
    DimensionMismatch {
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("data length {found} does not match grid size {expected}")]
    DataLength { expected: usize, found: usize },
    #[error("non-finite coordinate in sample point {0:?}")]
    NonFinite(Vec<f64>),
    #[error("resampling factor must be >= 1, got {0}")]
    InvalidFactor(usize),
    #[error("operation needs every extent >= {min}, got {dims:?}")]
    TooSmall { dims: Vec<usize>, min: usize },
    #[error("mask is not binary (value {value} at index {index})")]
    NotBinary { index: usize, value: f64 },
    #[error("mask value {value} at index {index} lies outside [0, 1]")]
    MaskRange { index: usize, value: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("cannot aggregate an empty set of scores")]
    EmptyInput,
    #[error("image has constant intensity; intensity thresholding is undefined")]
    DegenerateImage,
    #[error(
        "loss became non-finite at iteration {iter}; reduce step_size (currently {step_size})"
    )]
    NonFiniteLoss { iter: usize, step_size: f64 },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
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
    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
