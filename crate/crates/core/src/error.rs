use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the fusion engine and its file formats.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("row {row} has zero mass and cannot be normalized")]
    DegenerateRow { row: usize },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("format error at byte {offset}: {reason}")]
    Format { offset: u64, reason: String },

    #[error("type error: {0}")]
    Type(String),

    #[error("{}: {reason}", path.display())]
    Path { path: PathBuf, reason: String },

    #[error("inconsistent inputs: {0}")]
    Consistency(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn format(offset: u64, reason: impl Into<String>) -> Self {
        Error::Format { offset, reason: reason.into() }
    }

    pub(crate) fn path(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Path { path: path.into(), reason: reason.into() }
    }

    /// True for errors caused by the caller's inputs rather than the engine.
    pub fn is_input_error(&self) -> bool {
        !matches!(self, Error::Numeric(_) | Error::Io(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
