use std::path::PathBuf;

/// Errors produced by the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed MetaImage header in {path}: {reason}")]
    MalformedHeader { path: PathBuf, reason: String },

    #[error("element count mismatch: header declares {expected} elements, found {found}")]
    ElementCountMismatch { expected: usize, found: usize },

    #[error("volume is not binary: value {value} at index {index}")]
    NonBinaryMask { index: usize, value: f64 },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("value out of range: {0}")]
    OutOfRange(String),

    #[error("field of view does not overlap")]
    EmptyIntersection,

    #[error("volume has zero dynamic range (constant value {0})")]
    ZeroDynamicRange(f64),

    #[error("empty mask: {0}")]
    EmptyMask(String),

    #[error("undefined result: {0}")]
    Undefined(String),

    #[error("non-finite value during reconstruction at epoch {epoch}, subset {subset}")]
    NonFinite { epoch: usize, subset: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("serialization error: {0}")]
    Serde(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
