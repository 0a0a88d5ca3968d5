use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Incompatible tensor or image dimensions.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// A caller violated an operation's precondition (non-scalar loss, bad argument).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot decode image {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error("unsupported bit depth in {path}: {depth} bits per sample (only 8-bit images are supported)")]
    UnsupportedDepth { path: PathBuf, depth: u32 },

    #[error("incompatible checkpoint: {0}")]
    Checkpoint(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("non-finite loss {value} at iteration {iteration}")]
    NonFinite { iteration: u64, value: f64 },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

macro_rules! dim_err {
    ($($arg:tt)*) => {
        $crate::error::Error::Dimension(format!($($arg)*))
    };
}
pub(crate) use dim_err;
