//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid config: {0}")]
    Config(String),

    #[error("unknown config key `{0}`")]
    UnknownKey(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("degenerate gradient (zero variance)")]
    DegenerateGradient,

    #[error("unreachable user {0}: zero channel gain")]
    UnreachableUser(usize),

    #[error("degenerate channel: {0}")]
    DegenerateChannel(String),

    #[error("non-finite value encountered at round {round}")]
    NonFinite { round: usize },

    #[error("recursion is not contractive (upsilon = {0})")]
    NonContractive(f64),

    #[error("step-size schedule violates convergence conditions: {0}")]
    StepSchedule(String),

    #[error("data file {path}: {msg}")]
    Data { path: PathBuf, msg: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
