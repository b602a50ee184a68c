use std::io;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors returned by every fallible operation in the crate.
///
/// Collective operations deliver the same error value to every participant,
/// so the type is `Clone` and can be shipped between participants through
/// [`Error::to_wire`] / [`Error::from_wire`].
#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum Error {
    #[error("not a classic netCDF file (bad magic)")]
    BadMagic,
    #[error("truncated header at byte offset {offset}")]
    TruncatedHeader { offset: u64 },
    #[error("unsupported format version byte {0}")]
    UnsupportedVersion(u8),
    #[error("malformed name at byte offset {offset}")]
    MalformedName { offset: u64 },
    #[error("malformed header at byte offset {offset}: {reason}")]
    MalformedHeader { offset: u64, reason: String },
    #[error("inconsistent variable offsets: {0}")]
    InconsistentOffsets(String),
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("encoded header ({needed} bytes) does not fit before data_begin ({available})")]
    HeaderOverflow { needed: u64, available: u64 },
    #[error("size or offset exceeds the classic format limit: {0}")]
    Overflow(String),
    #[error("value out of range for the target type")]
    RangeError,
    #[error("cannot convert between text and numeric types")]
    TypeMismatch,
    #[error("index out of bounds: {0}")]
    OutOfBounds(String),
    #[error("expected {expected} dimensions, got {got}")]
    RankMismatch { expected: usize, got: usize },
    #[error("overlapping extents: {0}")]
    OverlapError(String),
    #[error("memory layout mismatch: {0}")]
    LayoutMismatch(String),
    #[error("collective mismatch: {0}")]
    CollectiveMismatch(String),
    #[error("a participant panicked: {0}")]
    BodyPanic(String),
    #[error("operation not allowed outside define mode")]
    NotInDefineMode,
    #[error("operation not allowed outside data mode")]
    NotInDataMode,
    #[error("name already in use: {0}")]
    DuplicateName(String),
    #[error("bad dimension: {0}")]
    BadDimension(String),
    #[error("no such variable: {0}")]
    NotVariable(String),
    #[error("no such attribute: {0}")]
    NotAttribute(String),
    #[error("data relocation overflow: {0}")]
    RelocationOverflow(String),
    #[error("invalid hint {key}={value}")]
    BadHint { key: String, value: String },
    #[error("I/O error ({kind}): {message}")]
    Io { kind: String, message: String },
}

impl From<io::Error> for Error {
    fn from(err: io::Error) -> Self {
        Error::Io {
            kind: format!("{:?}", err.kind()),
            message: err.to_string(),
        }
    }
}

impl Error {
    /// Status code following the serial netCDF convention (0 is success,
    /// negative values are errors).
    pub fn code(&self) -> i32 {
        match self {
            Error::BadMagic | Error::UnsupportedVersion(_) => -51,
            Error::TruncatedHeader { .. } => -64,
            Error::MalformedName { .. } => -59,
            Error::MalformedHeader { .. } | Error::InconsistentOffsets(_) => -51,
            Error::InvalidSchema(_) => -36,
            Error::HeaderOverflow { .. } | Error::Overflow(_) => -62,
            Error::RangeError => -60,
            Error::TypeMismatch => -56,
            Error::OutOfBounds(_) => -40,
            Error::RankMismatch { .. } => -57,
            Error::OverlapError(_) => -36,
            Error::LayoutMismatch(_) => -231,
            Error::CollectiveMismatch(_) => -250,
            Error::BodyPanic(_) => -250,
            Error::NotInDefineMode => -38,
            Error::NotInDataMode => -39,
            Error::DuplicateName(_) => -42,
            Error::BadDimension(_) => -46,
            Error::NotVariable(_) => -49,
            Error::NotAttribute(_) => -43,
            Error::RelocationOverflow(_) => -62,
            Error::BadHint { .. } => -36,
            Error::Io { .. } => -68,
        }
    }

    pub fn to_wire(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("error values always serialize")
    }

    pub fn from_wire(bytes: &[u8]) -> Error {
        serde_json::from_slice(bytes).unwrap_or_else(|e| Error::CollectiveMismatch(format!(
            "undecodable error payload from peer: {e}"
        )))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
