use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A cell could not be parsed. `row` counts data rows from 1 (header excluded).
    #[error("{path}: row {row}: {message}")]
    Parse {
        path: PathBuf,
        row: usize,
        message: String,
    },

    #[error("{0}")]
    Format(String),

    #[error("{0}")]
    Sampling(String),

    #[error("{0}")]
    Numeric(String),

    #[error("{0}")]
    InsufficientData(String),

    #[error("need at least {required} beats, found {found}")]
    InsufficientBeats { found: usize, required: usize },

    #[error("{0}")]
    Shape(String),

    #[error("{0}")]
    DegenerateLabels(String),

    #[error("{0}")]
    MissingFeatures(String),

    #[error("unsupported model format version {found} (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },

    #[error("{0}")]
    DatasetShape(String),

    #[error("{0}")]
    Usage(String),
}

impl Error {
    /// Stable machine-readable category, used in CLI error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Parse { .. } => "parse",
            Error::Format(_) => "format",
            Error::Sampling(_) => "sampling",
            Error::Numeric(_) => "numeric",
            Error::InsufficientData(_) => "insufficient-data",
            Error::InsufficientBeats { .. } => "insufficient-beats",
            Error::Shape(_) => "shape",
            Error::DegenerateLabels(_) => "degenerate-labels",
            Error::MissingFeatures(_) => "missing-features",
            Error::UnsupportedVersion { .. } => "unsupported-version",
            Error::DatasetShape(_) => "dataset-shape",
            Error::Usage(_) => "usage",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
