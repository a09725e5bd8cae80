use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
///
/// Every malformed input maps onto one of these variants; nothing in the
/// readers panics on bad bytes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: length {len} is not a multiple of {record} bytes")]
    Length {
        path: PathBuf,
        len: u64,
        record: u64,
    },

    #[error("non-finite coordinate at point {index}")]
    NonFinite { index: usize },

    #[error("unknown class id {class} at position {index}")]
    UnknownClass { class: u32, index: usize },

    #[error("{context}: line {line}: {message}")]
    Parse {
        context: String,
        line: usize,
        message: String,
    },

    #[error("bad magic {found:?}, expected \"PTNS\"")]
    BadMagic { found: [u8; 4] },

    #[error("unsupported tensor version {0}")]
    UnsupportedVersion(u8),

    #[error("unsupported tensor dtype code {0}")]
    UnsupportedDtype(u8),

    #[error("size mismatch: expected {expected}, found {found}")]
    SizeMismatch { expected: usize, found: usize },

    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("invalid neighborhood size K={k}: {reason}")]
    BadK { k: usize, reason: String },

    #[error("class histogram has no non-ignored counts")]
    EmptyHistogram,

    #[error("confusion matrix has no evaluated points")]
    EmptyMatrix,

    #[error("evaluation command failed: {0}")]
    EvalCommandFailed(String),

    #[error("weight vector length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("degenerate scene: {0}")]
    DegenerateSpec(String),

    #[error("invalid transform: {0}")]
    InvalidTransform(String),

    #[error("invalid probabilities: {0}")]
    InvalidProbs(String),

    #[error("config: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(context: impl Into<String>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            context: context.into(),
            line,
            message: message.into(),
        }
    }

    /// True for errors caused by configuration rather than data.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::BadK { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
