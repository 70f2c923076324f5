use std::io;
use std::path::PathBuf;

use thiserror::Error;

use crate::autodiff::TensorError;
use crate::train::Checkpoint;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    /// A model stage produced an invalid value.
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: TensorError,
    },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{what}: bad magic, expected {expected:?}, found {found:?}")]
    BadMagic {
        what: &'static str,
        expected: String,
        found: String,
    },
    #[error("{what}: unsupported format version {found}, expected {expected}")]
    Version {
        what: &'static str,
        expected: u8,
        found: u8,
    },
    #[error("{what}: truncated, expected {expected} bytes but only {actual} remain")]
    Truncated {
        what: String,
        expected: usize,
        actual: usize,
    },
    #[error("{0}")]
    Corrupt(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error("incompatible inputs: {0}")]
    Mismatch(String),
    #[error("training diverged at iteration {iteration}: {reason}")]
    Diverged {
        iteration: u64,
        reason: String,
        last_good: Box<Checkpoint>,
    },
    #[error("image: {0}")]
    Image(#[from] image::ImageError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn stage(stage: &'static str) -> impl FnOnce(TensorError) -> Self {
        move |source| Error::Stage { stage, source }
    }
}
