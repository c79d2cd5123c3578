use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    /// Structurally invalid bytes: bad magic, unparsable header, impossible table.
    #[error("format error: {0}")]
    Format(String),

    /// Well-formed but inconsistent data: checksum mismatch, truncation.
    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("shape error: {0}")]
    Shape(String),

    /// An optional backend (e.g. the Zstandard adapter) was not compiled in.
    #[error("capability unavailable: {0}")]
    Capability(String),
}

impl Error {
    pub fn io(path: impl AsRef<Path>, source: io::Error) -> Self {
        Error::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    /// Stable numeric code, shared with the C API.
    pub fn code(&self) -> i32 {
        match self {
            Error::Io { .. } => 4,
            Error::Format(_) => 2,
            Error::Integrity(_) => 3,
            Error::Validation(_) => 6,
            Error::Unsupported(_) => 5,
            Error::Shape(_) => 7,
            Error::Capability(_) => 8,
        }
    }
}

pub(crate) trait IoContext<T> {
    fn with_path(self, path: impl AsRef<Path>) -> Result<T>;
}

impl<T> IoContext<T> for io::Result<T> {
    fn with_path(self, path: impl AsRef<Path>) -> Result<T> {
        self.map_err(|e| Error::io(path, e))
    }
}
