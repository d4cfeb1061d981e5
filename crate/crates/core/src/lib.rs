//! Core data types and geometric machinery for multi-view cardiac segmentation.
//!
//! Everything here works on 3D grids. Long-axis images are single-slice volumes
//! (`nz == 1`) carrying a full 3D geometry, so one set of types serves both the
//! short-axis stack and the long-axis plane.

pub mod error;
pub mod hlc;
pub mod metrics;
pub mod nifti_io;
pub mod phantom;
pub mod volume;
pub mod xdim_transform;

pub use error::{Error, Result};
pub use volume::{
    copy_geometry, ContinuousIndex, Image, ImageGeometry, Label, LabelMap, PhysicalPoint, Voxel,
    Volume, NUM_CLASSES,
};
