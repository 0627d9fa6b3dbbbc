use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the tensor-archive reader and writer.
#[derive(Debug, Error)]
pub enum ArchiveError {
    #[error("bad magic: expected \"PFJMTNSR\", found {found:?}")]
    BadMagic { found: Vec<u8> },
    #[error("truncated archive: {what} needs {needed} bytes, {available} available")]
    Truncated {
        what: &'static str,
        needed: usize,
        available: usize,
    },
    #[error("header/payload length disagreement: header describes {declared} payload bytes, file holds {actual}")]
    LengthMismatch { declared: usize, actual: usize },
    #[error("malformed archive header: {0}")]
    Header(String),
    #[error("unsupported dtype {0:?} (only \"f32\" is defined)")]
    Dtype(String),
    #[error("tensor {name:?} holds a non-finite value at flat index {index}")]
    NonFinite { name: String, index: usize },
    #[error("tensor {name:?}: shape {shape:?} describes {expected} elements but {actual} were given")]
    ShapeData {
        name: String,
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("duplicate tensor name {0:?}")]
    DuplicateName(String),
    #[error("missing tensor {0:?}")]
    Missing(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Crate-wide error type. The `Display` output carries the module tag so the
/// CLI can print it verbatim.
#[derive(Debug, Error)]
pub enum Error {
    #[error("augment: {0}")]
    Augment(String),
    #[error("oracle: {0}")]
    Oracle(String),
    #[error("model: {0}")]
    Model(String),
    #[error("sampler: {0}")]
    Sampler(String),
    #[error("data: {0}")]
    Data(String),
    #[error("metrics: {0}")]
    Metrics(String),
    #[error("archive: {0}")]
    Archive(#[from] ArchiveError),
    #[error("config: {0}")]
    Config(String),
    #[error("harness: {0}")]
    Harness(String),
    #[error("io: {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by an invalid configuration rather than a
    /// runtime failure.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
