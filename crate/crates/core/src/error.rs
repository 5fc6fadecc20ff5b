use std::path::PathBuf;

use thiserror::Error;

use crate::autoencoder::AutoencoderModel;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: parse error at {location}: {message}")]
    Parse {
        path: PathBuf,
        location: String,
        message: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("no particle within radius {radius} of {center:?}")]
    EmptyPatch { center: [f64; 3], radius: f64 },

    #[error("insufficient data: need at least {needed}, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("kernel estimate undefined: no weighted neighbor")]
    UndefinedEstimate,

    #[error("no valid sample points (all {skipped} skipped)")]
    NoValidPoints { skipped: usize },

    #[error("objective returned non-finite value {value} at x = {x}")]
    NonFinite { x: f64, value: f64 },

    #[error("training diverged at epoch {epoch}")]
    Diverged {
        epoch: usize,
        checkpoint: Box<AutoencoderModel>,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("format error: {0}")]
    Format(String),

    #[error("node {0} does not exist")]
    UnknownNode(u32),

    #[error("node {0} is not a leaf")]
    NotLeaf(u32),

    #[error("node {0} has no children")]
    NoChildren(u32),

    #[error("node {0} has grandchildren; revoke bottom-up")]
    HasGrandchildren(u32),

    #[error("mean-shift stalled: no candidate particle matches the target histogram")]
    Stall,
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
