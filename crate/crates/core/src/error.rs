use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised by fitting, encoding and the file formats.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("codebook is empty")]
    EmptyCodebook,

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("requested {k} clusters but only {n} samples are available")]
    TooFewSamples { k: usize, n: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("index {index} out of range for {len} entries")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("mixture component {component} starved after exhausting its reseed budget")]
    ComponentStarved { component: usize },

    #[error("all mixture components have zero density for a sample")]
    ZeroDensity,

    /// `level` is one-based.
    #[error("level {level}: {source}")]
    LevelFit {
        level: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: &'static str, found: String },

    #[error("unsupported format version {found} (this build reads version {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },

    #[error("malformed header at byte {offset}: {reason}")]
    BadHeader { offset: u64, reason: String },

    #[error("payload size mismatch at byte {offset}: expected {expected} bytes, found {found}")]
    SizeMismatch {
        offset: u64,
        expected: u64,
        found: u64,
    },

    #[error("truncated {what} at byte {offset}")]
    Truncated { what: String, offset: u64 },

    #[error("non-finite payload value at byte {offset}")]
    NonFinitePayload { offset: u64 },

    #[error("malformed table line {line}: {reason}")]
    BadTable { line: usize, reason: String },

    #[error("item key {0:?} has no semantic ID")]
    MissingKey(String),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn in_file(self, path: impl Into<PathBuf>) -> Self {
        Error::File {
            path: path.into(),
            source: Box::new(self),
        }
    }

    /// The innermost error, skipping file and level annotations.
    pub fn root(&self) -> &Error {
        match self {
            Error::File { source, .. } | Error::LevelFit { source, .. } => source.root(),
            other => other,
        }
    }

    /// Whether the error comes from bad input data or files, as opposed to
    /// a fit that failed on valid data.
    pub fn is_fit_failure(&self) -> bool {
        matches!(
            self.root(),
            Error::ComponentStarved { .. } | Error::ZeroDensity
        )
    }
}
