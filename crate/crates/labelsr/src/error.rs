//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Caller handed us something invalid: bad argument, malformed config,
    /// inconsistent shapes. Maps to exit code 1 in the CLI.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Filesystem or serialization failure. Maps to exit code 2.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// A data file exists but cannot be parsed. Maps to exit code 2.
    #[error("format error in {path}: {message}")]
    Format { path: String, message: String },

    /// Numerical failure: divergence, NaN loss, singular matrix.
    /// Maps to exit code 3.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// The training protocol was violated, e.g. hidden ground truth reached
    /// a fit routine. Always a bug in the caller, never recoverable.
    #[error("protocol violation: {0}")]
    Protocol(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    pub fn format(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format { path: path.into(), message: message.into() }
    }
}
