//! Error type shared across the toolkit.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DgaError {
    /// Caller handed us something that violates a precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A computation failed at runtime (divergence, non-finite values, ...).
    #[error("runtime failure: {0}")]
    Runtime(String),

    /// A data file could not be parsed; carries the offending line.
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl DgaError {
    /// Process exit code convention: 1 for input errors, 2 for runtime errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            DgaError::InvalidInput(_) | DgaError::Parse { .. } => 1,
            DgaError::Runtime(_) | DgaError::Io(_) => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, DgaError>;
