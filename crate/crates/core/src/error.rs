use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("data length {len} does not match dims {dims:?}")]
    DataLength { len: usize, dims: [usize; 3] },

    #[error("label value {0} outside {{0,1,2,3}}")]
    InvalidLabel(u8),

    #[error("non-finite intensity value")]
    NonFinite,

    #[error("dimension mismatch: {left:?} vs {right:?}")]
    DimsMismatch { left: [usize; 3], right: [usize; 3] },

    #[error("degenerate grid: {0}")]
    DegenerateGrid(String),

    #[error("bounding box {min:?}..={max:?} does not fit dims {dims:?}")]
    BBoxOutOfRange {
        min: [usize; 3],
        max: [usize; 3],
        dims: [usize; 3],
    },

    #[error("segmentation prior has no foreground voxels")]
    EmptyPrior,

    #[error("class {0} is absent from at least one map")]
    ClassAbsent(u8),

    #[error("no reports to aggregate")]
    EmptyReports,

    #[error("invalid phantom parameters: {0}")]
    InvalidPhantom(String),

    #[error(transparent)]
    Nifti(#[from] NiftiError),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Error)]
pub enum NiftiError {
    #[error("bad magic {0:?}, expected \"n+1\" or \"ni1\"")]
    BadMagic([u8; 4]),

    #[error("NIfTI-2 files are not supported")]
    Nifti2Unsupported,

    #[error("header size field is {0}, expected 348")]
    BadHeaderSize(i32),

    #[error("unsupported datatype code {0}")]
    UnsupportedDatatype(i16),

    #[error("unsupported dimensionality: dim = {0:?}")]
    UnsupportedDims([i16; 8]),

    #[error("data section truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("detached header/image pairs (.hdr/.img) are not supported")]
    DetachedPair,

    #[error("voxel value {0} cannot be loaded as a label")]
    NotALabel(f64),

    #[error("singular or non-finite affine in header")]
    BadAffine,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
