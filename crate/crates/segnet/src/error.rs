use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("spatial dims {dims:?} are too small (every axis needs at least {min})")]
    DimsTooSmall { dims: Vec<usize>, min: usize },
    #[error("invalid network config: {0}")]
    InvalidConfig(String),
    #[error("invalid training config: {0}")]
    InvalidTrainConfig(String),
    #[error("input has {found} channels, network expects {expected}")]
    ChannelMismatch { expected: usize, found: usize },
    #[error("spatial dims {dims:?} are not divisible by {factor:?}")]
    NotDivisible { dims: [usize; 3], factor: [usize; 3] },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("training set is empty")]
    EmptyDataset,
    #[error("weights file: {0}")]
    WeightsFormat(String),
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
