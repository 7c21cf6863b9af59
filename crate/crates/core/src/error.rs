use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised by the toolkit.
///
/// Container ingestion failures each get their own variant so callers (and
/// the CLI exit-code mapping) can tell them apart without string matching.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("bad container magic: expected `HDAT1`")]
    BadMagic,
    #[error("unsupported container dtype code {0:#04x}")]
    UnsupportedDtype(u8),
    #[error("truncated container: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("container has {0} trailing bytes after payload")]
    TrailingBytes(usize),
    #[error("non-finite element at flat index {0}")]
    NonFinite(usize),
    #[error("shape {shape:?} implies {expected} elements but data has {found}")]
    ShapeMismatch {
        shape: Vec<usize>,
        expected: usize,
        found: usize,
    },

    #[error("invalid dataset: {0}")]
    Dataset(String),
    #[error("label {label} at line {line} is out of range for {class_count} classes")]
    LabelOutOfRange {
        line: usize,
        label: usize,
        class_count: usize,
    },
    #[error("pixel {value} at flat index {index} is outside [0, 1]")]
    PixelOutOfRange { index: usize, value: f32 },

    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("classifier does not support input gradients")]
    GradientUnsupported,
    #[error("prediction row {row} is not a probability vector (sum {sum})")]
    NotProbability { row: usize, sum: f64 },
    #[error("model manifest error: {0}")]
    Manifest(String),
    #[error("model server error: {0}")]
    Server(String),
    #[error("model server timed out after {0:?}")]
    Timeout(std::time::Duration),
    #[error("protocol version mismatch: expected 1, server speaks {0}")]
    ProtocolVersion(u64),

    #[error("seed labeled {label} is predicted as {predicted}; seeds must be classified correctly")]
    SeedMisclassified { label: usize, predicted: usize },
    #[error("generation aborted at generation {generation}: {source}")]
    GenerationAborted {
        generation: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
