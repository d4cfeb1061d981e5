use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] mvseg_core::Error),
    #[error(transparent)]
    Net(#[from] mvseg_segnet::Error),
    #[error("invalid pipeline config: {0}")]
    Config(String),
    #[error("{first} and {second} are inconsistent: {detail}")]
    GeometryMismatch {
        first: &'static str,
        second: &'static str,
        detail: String,
    },
    #[error("case {0} has no ground truth")]
    MissingGroundTruth(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}
