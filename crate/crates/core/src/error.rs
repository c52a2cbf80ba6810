use std::path::PathBuf;

use thiserror::Error;

use crate::mgraph::GraphError;
use crate::numkit::NumError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Validation failures map to exit code 2, everything else to 1.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Config(_) | Error::Checkpoint(_) | Error::Json(_) => true,
            Error::Num(NumError::Invalid(_)) | Error::Num(NumError::Shape { .. }) => true,
            Error::Graph(e) => !matches!(e, GraphError::Io { .. }),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
    let path = path.into();
    move |source| Error::Io { path, source }
}
