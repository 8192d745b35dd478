use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration: shapes, channel counts, plan settings, key/value files.
    #[error("configuration error: {0}")]
    Config(String),
    /// Invalid input data: labels out of range, mismatched masks, bad reports.
    #[error("data error: {0}")]
    Data(String),
    /// A checkpoint or report that cannot be used with the requested dataset.
    #[error("incompatible: {0}")]
    Incompatible(String),
    #[error("internal error: {0}")]
    Internal(String),
    #[error("checkpoint format error: {0}")]
    Format(#[from] FormatError),
    #[error("cannot read image {path}: {message}")]
    Ingest { path: PathBuf, message: String },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// Reasons a checkpoint file is rejected on load.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FormatError {
    #[error("bad magic bytes {0:?}, expected \"DRUN\"")]
    BadMagic([u8; 4]),
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u8),
    #[error("file truncated at byte {offset} while reading {what}")]
    Truncated { offset: usize, what: &'static str },
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("tensor {name}: shape {found:?} disagrees with configuration ({expected:?})")]
    ShapeMismatch {
        name: String,
        expected: Option<[usize; 4]>,
        found: [usize; 4],
    },
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
}
