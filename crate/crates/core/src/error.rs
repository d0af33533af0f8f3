use std::io;

use thiserror::Error;

use crate::domain::ModalityId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on the input values was violated.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("empty sequence: pooling needs at least one frame")]
    EmptySequence,

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    /// A solver or optimizer could not produce a finite answer.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// A binary file was truncated or malformed at the given byte offset.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    /// A text file was malformed at the given (1-based) line.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("orchestration error: modality {modality} failed ({reason})")]
    Orchestration { modality: ModalityId, reason: String },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn format(offset: u64, msg: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: msg.into(),
        }
    }

    pub(crate) fn dims(context: &'static str, expected: usize, actual: usize) -> Self {
        Error::DimensionMismatch {
            context,
            expected,
            actual,
        }
    }
}
