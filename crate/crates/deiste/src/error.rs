//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Two tensors were combined with incompatible shapes.
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// An operation received input it cannot produce a meaningful result for
    /// (all positions masked, empty sentence, ...).
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    /// A sequence operation was applied to a zero-length sequence.
    #[error("empty sequence: {0}")]
    EmptySequence(&'static str),

    /// An API precondition was violated by the caller.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A file had the wrong format. `line` is 1-based; 0 means the problem is
    /// not tied to a specific line.
    #[error("format error at {path}:{line}: {msg}")]
    Format {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::ShapeMismatch {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn degenerate(msg: impl Into<String>) -> Self {
        Error::DegenerateInput(msg.into())
    }

    pub(crate) fn format(path: &std::path::Path, line: usize, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.display().to_string(),
            line,
            msg: msg.into(),
        }
    }
}
