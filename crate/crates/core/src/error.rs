use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: bad magic {found:?}, expected {expected:?}", path.display())]
    BadMagic {
        path: PathBuf,
        expected: &'static str,
        found: String,
    },

    #[error("{}: unsupported {field} {value}", path.display())]
    Unsupported {
        path: PathBuf,
        field: &'static str,
        value: u64,
    },

    #[error("{}: truncated payload: expected {expected} bytes, found {found}", path.display())]
    Truncated {
        path: PathBuf,
        expected: u64,
        found: u64,
    },

    #[error("{}: non-finite value at element {index}", path.display())]
    NonFinite { path: PathBuf, index: usize },

    #[error("dimension mismatch in {location}: {detail}")]
    DimensionMismatch { location: String, detail: String },

    #[error("ambiguous pair coverage: ({query}, {reference}) is covered by spaces {first:?} and {second:?}")]
    AmbiguousPairCoverage {
        query: String,
        reference: String,
        first: String,
        second: String,
    },

    #[error("{location}: relevance index out of range: {detail}")]
    RelevanceOutOfRange { location: String, detail: String },

    #[error("{location}: {message}")]
    Format { location: String, message: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate score range: all {count} scores equal {value}")]
    DegenerateRange { count: usize, value: f64 },

    #[error("need at least {needed} calibration pairs, got {got}")]
    InsufficientCalibration { needed: usize, got: usize },

    #[error("no modality pair has enough calibration pairs to fit a band")]
    NoFittablePairs,

    #[error("model/data mismatch: {0}")]
    ModelMismatch(String),

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(location: impl Into<String>, message: impl ToString) -> Self {
        Error::Format {
            location: location.into(),
            message: message.to_string(),
        }
    }

    /// True for errors caused by malformed or inconsistent input files.
    pub fn is_data_format(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::BadMagic { .. }
                | Error::Unsupported { .. }
                | Error::Truncated { .. }
                | Error::NonFinite { .. }
                | Error::DimensionMismatch { .. }
                | Error::AmbiguousPairCoverage { .. }
                | Error::RelevanceOutOfRange { .. }
                | Error::Format { .. }
        )
    }
}
