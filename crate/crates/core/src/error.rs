use std::io;

use crate::taxonomy::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid taxonomy: {}", format_violations(.0))]
    InvalidTaxonomy(Vec<Violation>),

    #[error("unknown symbol `{0}`")]
    UnknownSymbol(String),

    #[error("unknown category `{0}`")]
    UnknownCategory(String),

    #[error("{what}: expected {expected}, got {actual}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Input was well-formed but the pipeline refused it (e.g. no category
    /// could be resolved for an item).
    #[error("rejected: {0}")]
    Rejected(String),

    #[error("duplicate item id `{0}`")]
    DuplicateItem(String),

    #[error("unknown item id `{0}`")]
    UnknownItem(String),

    /// Binary file header, version, hash or payload problems.
    #[error("malformed {kind} file: {detail}")]
    Format { kind: &'static str, detail: String },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("image decoding failed: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn format(kind: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            kind,
            detail: detail.into(),
        }
    }

    pub(crate) fn dims(what: &'static str, expected: usize, actual: usize) -> Self {
        Error::DimensionMismatch {
            what,
            expected,
            actual,
        }
    }

    /// True when the error was caused by the caller's input rather than by
    /// the environment (I/O) or an internal fault.
    pub fn is_client_error(&self) -> bool {
        !matches!(self, Error::Io(_))
    }
}

fn format_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}
