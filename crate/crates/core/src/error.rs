use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the lab.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("noise level {0} outside [0, 1]")]
    InvalidNoiseLevel(f64),

    #[error("log-SNR is infinite at t = {0}")]
    InfiniteLogSnr(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("batch of size {got} is too small (need at least {need})")]
    BatchTooSmall { need: usize, got: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("prompt class {class_id} out of range for {classes} classes")]
    PromptOutOfRange { class_id: usize, classes: usize },

    #[error("classifier has not been trained")]
    UntrainedClassifier,

    #[error("covariance is not positive semi-definite (min eigenvalue {0})")]
    NotPsd(f64),

    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("training diverged at iteration {iteration}: {reason}")]
    Divergence { iteration: usize, reason: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
        if expected == got {
            Ok(())
        } else {
            Err(Error::DimensionMismatch { expected, got })
        }
    }
}
