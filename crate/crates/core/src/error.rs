use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    /// Malformed or corrupted file: bad magic, version, truncation, CRC mismatch,
    /// or dimensions that disagree with the header.
    #[error("format error: {0}")]
    Format(String),

    /// Values that violate a data invariant (non-finite, not a distribution, ...).
    #[error("data error: {0}")]
    Data(String),

    #[error("index {index} out of range (limit {limit}): {what}")]
    Range {
        what: &'static str,
        index: usize,
        limit: usize,
    },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("parameter error: {0}")]
    Param(String),

    #[error("capacity error: {0}")]
    Capacity(String),

    #[error("training diverged at epoch {epoch}: {reason}")]
    Training { epoch: usize, reason: String },
}

impl Error {
    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Param(msg.into())
    }
}
