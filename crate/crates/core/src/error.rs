use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("document {doc_id}: span ({start}, {end}) out of bounds for {len} bytes")]
    SpanOutOfBounds {
        doc_id: String,
        start: usize,
        end: usize,
        len: usize,
    },

    #[error("document {doc_id}: overlapping spans ({a_start}, {a_end}) and ({b_start}, {b_end})")]
    OverlappingSpans {
        doc_id: String,
        a_start: usize,
        a_end: usize,
        b_start: usize,
        b_end: usize,
    },

    #[error("entity type {0:?} is not part of the tag scheme")]
    UnknownEntityType(String),

    #[error("unknown document id {0:?}")]
    UnknownDocument(String),

    #[error("document id sets differ: {0}")]
    DocumentMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("windows leave bytes [{start}, {end}) uncovered")]
    CoverageGap { start: usize, end: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("numeric divergence: {0}")]
    Divergence(String),

    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }
}
