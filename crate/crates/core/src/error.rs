use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: String, actual: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("oracle error: {0}")]
    Oracle(String),

    #[error("oracle error while scoring mask {index}: {source}")]
    MaskScoring {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn mismatch(expected: impl ToString, actual: impl ToString) -> Self {
        Error::DimensionMismatch {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    /// True for failures that originate on the far side of the oracle boundary.
    pub fn is_oracle_failure(&self) -> bool {
        match self {
            Error::Oracle(_) | Error::Protocol(_) => true,
            Error::MaskScoring { source, .. } => source.is_oracle_failure(),
            _ => false,
        }
    }

    pub fn is_io_failure(&self) -> bool {
        matches!(self, Error::Io(_) | Error::Image(_) | Error::Json(_))
    }
}
