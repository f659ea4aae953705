//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by corpus handling, training, and inference.
#[derive(Debug, Error)]
pub enum Error {
    /// A record could not be parsed; carries the 1-based line number.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// Input violated a documented invariant.
    #[error("validation error: {0}")]
    Validation(String),

    /// A configuration value or combination is unusable.
    #[error("configuration error: {0}")]
    Config(String),

    /// Strict-mode lookup of an activity token that has no embedding.
    #[error("unknown activity token `{0}`")]
    UnknownToken(String),

    /// A persisted artifact (checkpoint, embedding table) is malformed.
    #[error("invalid {kind} file: {message}")]
    Format { kind: &'static str, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
