use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A precondition of a public operation was violated.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),

    #[error(transparent)]
    Image(#[from] ImageError),

    #[error("manifest error: {0}")]
    Manifest(String),

    /// Zero-variance input to a correlation.
    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    #[error("divergence: non-finite loss at epoch {epoch}, step {step}")]
    Divergence { epoch: usize, step: usize },

    #[error("failed to load pair {id}: {source}")]
    PairLoad {
        id: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("truncated checkpoint")]
    Truncated,
    #[error("malformed checkpoint header: {0}")]
    Header(String),
    #[error("checkpoint shape disagreement: {0}")]
    ShapeDisagreement(String),
}

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("unknown image format: {0}")]
    UnknownFormat(String),
    #[error("image dimensions {height}x{width} overflow the format")]
    DimensionOverflow { height: usize, width: usize },
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("png: {0}")]
    Png(String),
}
