use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// A coordinate fell outside the bounding box it was quantized against.
    #[error("point (lon {lon}, lat {lat}) is outside {scope}")]
    OutOfBounds { lon: f64, lat: f64, scope: String },

    /// A corpus key exceeded the declared key space.
    #[error("key {key} out of range for key space {key_space}")]
    KeyOutOfRange { key: usize, key_space: usize },

    /// Vector or matrix shapes did not line up.
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimMismatch {
        context: String,
        expected: usize,
        actual: usize,
    },

    /// A value violated a documented invariant.
    #[error("invalid {what}: {detail}")]
    Invalid { what: &'static str, detail: String },

    /// Missing or inconsistent configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// KL divergence hit a cell with P > 0 and Q = 0.
    #[error(
        "KL divergence undefined: cell {cell} has P > 0 but Q = 0{scope}; \
         smooth Q with alpha > 0"
    )]
    KlUnsupported { cell: usize, scope: String },

    /// File I/O failure, tagged with the path involved.
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A data file did not match its documented format.
    #[error("{path}:{line}: {detail}")]
    Format {
        path: PathBuf,
        line: usize,
        detail: String,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, line: usize, detail: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            line,
            detail: detail.into(),
        }
    }

    pub(crate) fn invalid(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            detail: detail.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
