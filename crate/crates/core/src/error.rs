use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised anywhere in the engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("{op}: {msg}")]
    Contract { op: &'static str, msg: String },

    #[error("{what} contains a non-finite value")]
    NonFinite { what: &'static str },

    #[error("hebbian trace diverged at step {step} (max |hebb| = {max_abs:e})")]
    Divergence { step: usize, max_abs: f64 },

    #[error("numeric abort at episode {episode}: {msg}")]
    NumericAbort { episode: u64, msg: String },

    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {msg}")]
    Data { path: PathBuf, msg: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Process exit status for this error: 1 for configuration and usage
    /// errors, 2 for numeric aborts, 3 for I/O and data errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Shape { .. } | Error::Contract { .. } | Error::Config(_) => 1,
            Error::NonFinite { .. } | Error::Divergence { .. } | Error::NumericAbort { .. } => 2,
            Error::Data { .. } | Error::Checkpoint(_) | Error::Io { .. } => 3,
        }
    }

    pub(crate) fn contract(op: &'static str, msg: impl Into<String>) -> Self {
        Error::Contract { op, msg: msg.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
