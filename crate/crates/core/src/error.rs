use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid span [{start}, {end}]")]
    InvalidSpan { start: f64, end: f64 },

    #[error("invalid video {video_id}: {reason}")]
    InvalidVideo { video_id: String, reason: String },

    #[error("invalid moment ({first}, {last}) in {video_id}: {reason}")]
    InvalidMoment {
        video_id: String,
        first: usize,
        last: usize,
        reason: String,
    },

    #[error("clip index {index} out of range for {video_id} ({num_clips} clips)")]
    ClipOutOfRange {
        video_id: String,
        index: usize,
        num_clips: usize,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("sampling failed: {0}")]
    Sampling(String),

    #[error("unknown video {0}")]
    UnknownVideo(String),

    #[error("missing ground truth for query {0}")]
    MissingGroundTruth(String),

    #[error("evaluation: {0}")]
    Eval(String),

    #[error("{path}: bad magic {found:?}, expected {expected:?}")]
    BadMagic {
        path: PathBuf,
        expected: [u8; 4],
        found: [u8; 4],
    },

    #[error("{path}: unsupported version {found}")]
    BadVersion { path: PathBuf, found: u16 },

    #[error("{path}: truncated at byte {offset}")]
    Truncated { path: PathBuf, offset: u64 },

    #[error("{path}: {count} trailing bytes after offset {offset}")]
    TrailingBytes {
        path: PathBuf,
        offset: u64,
        count: u64,
    },

    #[error("{path}: non-finite value at row {row}, column {col}")]
    NonFiniteValue {
        path: PathBuf,
        row: usize,
        col: usize,
    },

    #[error("{path}:{line}: {reason}")]
    Record {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Stable machine-readable code for the error category.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidSpan { .. }
            | Error::InvalidVideo { .. }
            | Error::InvalidMoment { .. }
            | Error::ClipOutOfRange { .. } => "E_DOMAIN",
            Error::Config(_) => "E_CONFIG",
            Error::DimMismatch { .. } => "E_DIM",
            Error::Empty(_) => "E_EMPTY",
            Error::NonFinite(_) => "E_NONFINITE",
            Error::Sampling(_) => "E_SAMPLING",
            Error::UnknownVideo(_) | Error::MissingGroundTruth(_) => "E_REFERENCE",
            Error::Eval(_) => "E_EVAL",
            Error::BadMagic { .. } | Error::BadVersion { .. } => "E_FORMAT",
            Error::Truncated { .. } | Error::TrailingBytes { .. } => "E_FORMAT",
            Error::NonFiniteValue { .. } | Error::Record { .. } | Error::Format { .. } => {
                "E_FORMAT"
            }
            Error::Io { .. } => "E_IO",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
