//! Heart localisation and cropping.
//!
//! A segmentation prior is reduced to the bounding box of its nonzero voxels,
//! grown by a margin, and used to crop images, labels and priors alike. The
//! crop may additionally be zero-padded so every axis is a multiple of the
//! network's downsampling factor. [`CropRecord`] keeps what is needed to paste
//! a cropped prediction back onto the original grid.

use log::warn;
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{self, HdVariant};
use crate::volume::{Image, ImageGeometry, LabelMap, Voxel, FOREGROUND};

/// Margin that kept every heart inside its crop (in voxels of the 1 mm grid).
pub const DEFAULT_MARGIN: usize = 15;

/// Inclusive per-axis voxel bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub min: [usize; 3],
    pub max: [usize; 3],
}

impl BBox {
    pub fn whole(dims: [usize; 3]) -> Self {
        BBox {
            min: [0; 3],
            max: [dims[0] - 1, dims[1] - 1, dims[2] - 1],
        }
    }

    pub fn extent(&self) -> [usize; 3] {
        [0, 1, 2].map(|a| self.max[a] - self.min[a] + 1)
    }

    pub fn fits(&self, dims: [usize; 3]) -> bool {
        (0..3).all(|a| self.min[a] <= self.max[a] && self.max[a] < dims[a])
    }

    pub fn contains(&self, other: &BBox) -> bool {
        (0..3).all(|a| self.min[a] <= other.min[a] && other.max[a] <= self.max[a])
    }

    /// Smallest box containing both.
    pub fn union(&self, other: &BBox) -> BBox {
        BBox {
            min: [0, 1, 2].map(|a| self.min[a].min(other.min[a])),
            max: [0, 1, 2].map(|a| self.max[a].max(other.max[a])),
        }
    }
}

/// Everything needed to undo a crop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CropRecord {
    pub bbox: BBox,
    pub original_dims: [usize; 3],
    pub original_geometry: ImageGeometry,
    /// Zero padding added before the bbox on each axis.
    #[serde(default)]
    pub pad_before: [usize; 3],
    #[serde(default)]
    pub pad_after: [usize; 3],
}

impl CropRecord {
    /// Dims of the cropped (and padded) image.
    pub fn cropped_dims(&self) -> [usize; 3] {
        let e = self.bbox.extent();
        [0, 1, 2].map(|a| e[a] + self.pad_before[a] + self.pad_after[a])
    }

    /// Geometry of the cropped grid: the original grid shifted so that index 0
    /// sits at `bbox.min - pad_before`.
    pub fn cropped_geometry(&self) -> Result<ImageGeometry> {
        let start = Vector3::from_fn(|a, _| self.bbox.min[a] as f64 - self.pad_before[a] as f64);
        let origin = self.original_geometry.physical_from_index(&start);
        self.original_geometry.with_origin(origin)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let rec: CropRecord = serde_json::from_str(text)?;
        if !rec.bbox.fits(rec.original_dims) {
            return Err(Error::BBoxOutOfRange {
                min: rec.bbox.min,
                max: rec.bbox.max,
                dims: rec.original_dims,
            });
        }
        Ok(rec)
    }
}

/// Tightest box around all nonzero voxels.
pub fn foreground_bbox(prior: &LabelMap) -> Result<BBox> {
    union_foreground_bbox(&[prior])
}

/// Tightest box around the nonzero voxels of every prior (all on one grid).
pub fn union_foreground_bbox(priors: &[&LabelMap]) -> Result<BBox> {
    let dims = priors.first().ok_or(Error::EmptyPrior)?.dims();
    let mut min = [usize::MAX; 3];
    let mut max = [0usize; 3];
    let mut any = false;
    for prior in priors {
        if prior.dims() != dims {
            return Err(Error::DimsMismatch {
                left: dims,
                right: prior.dims(),
            });
        }
        let [nx, ny, _] = dims;
        for (i, &v) in prior.data().iter().enumerate() {
            if v == 0 {
                continue;
            }
            any = true;
            let p = [i % nx, (i / nx) % ny, i / (nx * ny)];
            for a in 0..3 {
                min[a] = min[a].min(p[a]);
                max[a] = max[a].max(p[a]);
            }
        }
    }
    if !any {
        return Err(Error::EmptyPrior);
    }
    Ok(BBox { min, max })
}

/// Grows every side by `margin` voxels, clipped to `[0, dim)`.
pub fn expand_bbox(b: BBox, margin: usize, dims: [usize; 3]) -> BBox {
    BBox {
        min: [0, 1, 2].map(|a| b.min[a].saturating_sub(margin)),
        max: [0, 1, 2].map(|a| (b.max[a] + margin).min(dims[a] - 1)),
    }
}

/// Crop box for `priors` with `margin`; falls back to the whole image (with a
/// warning) when the priors are empty. The flag reports whether the fallback
/// was taken.
pub fn localize(priors: &[&LabelMap], margin: usize) -> Result<(BBox, bool)> {
    let dims = priors.first().ok_or(Error::EmptyPrior)?.dims();
    match union_foreground_bbox(priors) {
        Ok(b) => Ok((expand_bbox(b, margin, dims), false)),
        Err(Error::EmptyPrior) => {
            warn!("segmentation prior is empty; using the whole image as the crop");
            Ok((BBox::whole(dims), true))
        }
        Err(e) => Err(e),
    }
}

/// Crops `v` to `b` without padding.
pub fn crop<T: Voxel>(v: &Image<T>, b: BBox) -> Result<(Image<T>, CropRecord)> {
    crop_padded(v, b, [1, 1, 1])
}

/// Crops `v` to `b`, then zero-pads symmetrically so each axis length is a
/// multiple of `multiple[a]`. Padding voxels are always zero/background, even
/// where the original image has data.
pub fn crop_padded<T: Voxel>(
    v: &Image<T>,
    b: BBox,
    multiple: [usize; 3],
) -> Result<(Image<T>, CropRecord)> {
    let dims = v.dims();
    if !b.fits(dims) {
        return Err(Error::BBoxOutOfRange {
            min: b.min,
            max: b.max,
            dims,
        });
    }
    let extent = b.extent();
    let mut pad_before = [0usize; 3];
    let mut pad_after = [0usize; 3];
    for a in 0..3 {
        let m = multiple[a].max(1);
        let total = extent[a].div_ceil(m) * m - extent[a];
        pad_before[a] = total / 2;
        pad_after[a] = total - pad_before[a];
    }
    let rec = CropRecord {
        bbox: b,
        original_dims: dims,
        original_geometry: v.geometry().clone(),
        pad_before,
        pad_after,
    };
    let out_dims = rec.cropped_dims();
    let cropped = Image::from_fn(out_dims, rec.cropped_geometry()?, |x, y, z| {
        let p = [x, y, z];
        let mut src = [0usize; 3];
        for a in 0..3 {
            if p[a] < pad_before[a] || p[a] >= pad_before[a] + extent[a] {
                return T::default();
            }
            src[a] = b.min[a] + p[a] - pad_before[a];
        }
        v.get(src[0], src[1], src[2])
    })?;
    Ok((cropped, rec))
}

/// Pastes a cropped map back onto the original grid; zero outside the bbox.
pub fn restore<T: Voxel>(cropped: &Image<T>, rec: &CropRecord) -> Result<Image<T>> {
    let expected = rec.cropped_dims();
    if cropped.dims() != expected {
        return Err(Error::DimsMismatch {
            left: cropped.dims(),
            right: expected,
        });
    }
    if !rec.bbox.fits(rec.original_dims) {
        return Err(Error::BBoxOutOfRange {
            min: rec.bbox.min,
            max: rec.bbox.max,
            dims: rec.original_dims,
        });
    }
    let b = rec.bbox;
    Image::from_fn(rec.original_dims, rec.original_geometry.clone(), |x, y, z| {
        let p = [x, y, z];
        if (0..3).any(|a| p[a] < b.min[a] || p[a] > b.max[a]) {
            return T::default();
        }
        cropped.get(
            x - b.min[0] + rec.pad_before[0],
            y - b.min[1] + rec.pad_before[1],
            z - b.min[2] + rec.pad_before[2],
        )
    })
}

/// Per-class (Dice, HD in mm) for one round-trip check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassRoundTrip {
    pub class: u8,
    pub dice: f64,
    pub hd_mm: Option<f64>,
}

/// Crops `gt` by the box of `prior` grown by `margin`, restores it and scores
/// the result against `gt`. A crop that safely encloses the heart gives
/// Dice 1 and HD 0 for every class.
pub fn roundtrip_check(gt: &LabelMap, prior: &LabelMap, margin: usize) -> Result<Vec<ClassRoundTrip>> {
    if gt.dims() != prior.dims() {
        return Err(Error::DimsMismatch {
            left: gt.dims(),
            right: prior.dims(),
        });
    }
    let b = expand_bbox(foreground_bbox(prior)?, margin, gt.dims());
    let (cropped, rec) = crop(gt, b)?;
    let restored = restore(&cropped, &rec)?;
    FOREGROUND
        .iter()
        .map(|&class| {
            let dice = metrics::dice(&restored, gt, class)?;
            let hd_mm = match metrics::hausdorff_mm(&restored, gt, class, gt.geometry(), HdVariant::Max) {
                Ok(h) => Some(h),
                Err(Error::ClassAbsent(_)) => None,
                Err(e) => return Err(e),
            };
            Ok(ClassRoundTrip { class, dice, hd_mm })
        })
        .collect()
}
