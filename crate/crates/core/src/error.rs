use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad configuration or arguments supplied by the caller.
    #[error("config error: {0}")]
    Config(String),

    #[error("missing config key `{0}`")]
    MissingKey(String),

    #[error("empty input")]
    EmptyInput,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("malformed IQ file")]
    MalformedIq,

    #[error("non-finite sample at index {0}")]
    NonFiniteSample(usize),

    #[error("zero-power window")]
    ZeroPower,

    #[error("degenerate distribution")]
    Degenerate,

    #[error("insufficient calibration data: need at least {needed} samples, got {got}")]
    InsufficientCalibration { needed: usize, got: usize },

    #[error("insufficient population: need at least {needed} vectors, got {got}")]
    InsufficientPopulation { needed: usize, got: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("shape mismatch between coefficient vectors")]
    ShapeMismatch,

    #[error("zero variance in feature `{0}`")]
    ZeroVariance(String),

    #[error("label {0} absent from dataset")]
    MissingLabel(u8),

    #[error("data error: {0}")]
    Data(String),

    #[error("diverged")]
    Diverged,

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Attach the offending file to an error.
    pub fn in_file(self, path: impl Into<PathBuf>) -> Self {
        Error::File {
            path: path.into(),
            source: Box::new(self),
        }
    }

    /// Process exit code: 1 usage/config, 2 data, 3 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::MissingKey(_) | Error::InvalidParameter(_) => 1,
            Error::Diverged => 3,
            Error::File { source, .. } => source.exit_code(),
            _ => 2,
        }
    }
}
