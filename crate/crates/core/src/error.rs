use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the solver reports. `category()` gives the one-line,
/// machine-parsable tag the CLI prints.
#[derive(Debug, Error)]
pub enum Error {
    #[error("derivative order {order} along {axis} exceeds supported maximum {max}")]
    OrderOutOfRange {
        axis: &'static str,
        order: usize,
        max: usize,
    },

    #[error("non-finite input: {0}")]
    NonFiniteInput(String),

    #[error("non-finite value produced by operation #{index} ({op})")]
    NonFinite { op: &'static str, index: usize },

    #[error("parameter count mismatch: expected {expected}, got {actual}")]
    ParamCount { expected: usize, actual: usize },

    #[error("invalid architecture: {0}")]
    InvalidArch(String),

    #[error("arch mismatch: checkpoint has {checkpoint}, config requests {config}")]
    ArchMismatch { checkpoint: String, config: String },

    #[error("derivative slot missing: channel {channel}, {axis} order {order}")]
    MissingDerivative {
        channel: usize,
        axis: &'static str,
        order: usize,
    },

    #[error("no exact solution registered for {0}")]
    NoExactSolution(String),

    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("invalid collocation request: {0}")]
    InvalidCollocation(String),

    #[error("bad magic in checkpoint {path}")]
    BadMagic { path: PathBuf },

    #[error("truncated checkpoint {path}: {detail}")]
    Truncated { path: PathBuf, detail: String },

    #[error("checkpoint {path} is inconsistent: {detail}")]
    CheckpointMismatch { path: PathBuf, detail: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("training aborted: {0}")]
    Training(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("io error: {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn category(&self) -> &'static str {
        match self {
            Error::OrderOutOfRange { .. } | Error::NonFiniteInput(_) => "input error",
            Error::NonFinite { .. } => "numeric error",
            Error::ParamCount { .. } | Error::InvalidArch(_) | Error::ArchMismatch { .. } => {
                "arch error"
            }
            Error::MissingDerivative { .. } => "derivative error",
            Error::NoExactSolution(_) => "exact solution error",
            Error::InvalidDomain(_) | Error::InvalidCollocation(_) => "problem error",
            Error::BadMagic { .. } => "bad magic",
            Error::Truncated { .. } => "truncated payload",
            Error::CheckpointMismatch { .. } => "checkpoint mismatch",
            Error::Config(_) => "config error",
            Error::Training(_) => "training error",
            Error::Validation(_) => "validation error",
            Error::Io { .. } => "io error",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
