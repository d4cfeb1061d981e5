use std::path::Path;

use mvseg_core::hlc::{crop_padded, restore, BBox, CropRecord};
use mvseg_core::xdim_transform::{project_segmentation, ProjectionSpec};
use mvseg_core::{copy_geometry, Error as CoreError, LabelMap, Volume};
use mvseg_segnet::{forward, io as weights_io, predict_labels, NetworkConfig, Sample, Tensor, Weights};

use crate::error::{Error, Result};

/// Anything that labels an image given categorical priors on the same grid.
pub trait Segmenter: Send + Sync {
    /// Returns a label map on the grid of `image`.
    fn segment(&self, image: &Volume, priors: &[&LabelMap]) -> Result<LabelMap>;
}

fn check_priors(image: &Volume, priors: &[&LabelMap]) -> Result<()> {
    for p in priors {
        if p.dims() != image.dims() {
            return Err(CoreError::DimsMismatch {
                left: p.dims(),
                right: image.dims(),
            }
            .into());
        }
    }
    Ok(())
}

/// Zero-mean unit-variance copy of `image`; constant images are only centred.
pub fn z_score(image: &Volume) -> Result<Volume> {
    let n = image.len().max(1) as f64;
    let mean = image.data().iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = image.data().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
    Ok(image.map(|v| ((v as f64 - mean) / sd) as f32)?)
}

/// Network input for one image: the z-scored intensity followed by three
/// foreground one-hot channels per prior, zero-padded so every axis divides
/// `multiple` (image axis order). Returns the record needed to undo the pad.
pub fn network_input(image: &Volume, priors: &[&LabelMap], multiple: [usize; 3]) -> Result<(Tensor<f32>, CropRecord)> {
    check_priors(image, priors)?;
    let whole = BBox::whole(image.dims());
    let (img, rec) = crop_padded(&z_score(image)?, whole, multiple)?;
    let [nx, ny, nz] = img.dims();
    let n = img.len();
    let mut data = Vec::with_capacity(n * (1 + 3 * priors.len()));
    data.extend_from_slice(img.data());
    for p in priors {
        let (padded, _) = crop_padded(*p, whole, multiple)?;
        for class in 1..=3u8 {
            data.extend(padded.data().iter().map(|&l| if l == class { 1.0f32 } else { 0.0 }));
        }
    }
    Ok((Tensor::from_vec(1 + 3 * priors.len(), [nz, ny, nx], data)?, rec))
}

/// Training sample for one image: input as in [`network_input`] with labels
/// padded the same way.
pub fn training_sample(image: &Volume, priors: &[&LabelMap], gt: &LabelMap, multiple: [usize; 3]) -> Result<Sample> {
    let (input, _) = network_input(image, priors, multiple)?;
    check_priors(image, &[gt])?;
    let (labels, _) = crop_padded(gt, BBox::whole(gt.dims()), multiple)?;
    Ok(Sample {
        input,
        labels: labels.into_data(),
        intensity_channels: 1,
    })
}

/// Image-axis padding multiple for a network.
pub fn image_multiple(cfg: &NetworkConfig) -> [usize; 3] {
    let [d, h, w] = cfg.divisor();
    [w, h, d]
}

#[derive(Debug, Clone)]
pub struct NetSegmenter {
    weights: Weights<f32>,
}

impl NetSegmenter {
    pub fn new(weights: Weights<f32>) -> Self {
        NetSegmenter { weights }
    }

    /// Loads weights and checks they were trained for `expected`.
    pub fn load(path: &Path, expected: &NetworkConfig) -> Result<Self> {
        let weights = weights_io::load(path)?;
        if &weights.config != expected {
            return Err(Error::Config(format!(
                "{} holds a {:?} network, config expects {:?}",
                path.display(),
                weights.config,
                expected
            )));
        }
        Ok(NetSegmenter { weights })
    }

    pub fn weights(&self) -> &Weights<f32> {
        &self.weights
    }
}

impl Segmenter for NetSegmenter {
    fn segment(&self, image: &Volume, priors: &[&LabelMap]) -> Result<LabelMap> {
        let (x, rec) = network_input(image, priors, image_multiple(&self.weights.config))?;
        let probs = forward(&self.weights, &x)?;
        let padded = LabelMap::new(rec.cropped_dims(), rec.cropped_geometry()?, predict_labels(&probs))?;
        Ok(copy_geometry(image, restore(&padded, &rec)?)?)
    }
}

/// Projects a fixed reference map onto whatever grid it is asked about,
/// standing in for a perfect network.
#[derive(Debug, Clone)]
pub struct OracleSegmenter {
    gt: LabelMap,
}

impl OracleSegmenter {
    pub fn new(gt: LabelMap) -> Self {
        OracleSegmenter { gt }
    }
}

impl Segmenter for OracleSegmenter {
    fn segment(&self, image: &Volume, priors: &[&LabelMap]) -> Result<LabelMap> {
        check_priors(image, priors)?;
        Ok(project_segmentation(&ProjectionSpec::onto(&self.gt, image))?)
    }
}

/// Labels everything background.
#[derive(Debug, Clone, Copy, Default)]
pub struct EmptySegmenter;

impl Segmenter for EmptySegmenter {
    fn segment(&self, image: &Volume, priors: &[&LabelMap]) -> Result<LabelMap> {
        check_priors(image, priors)?;
        Ok(LabelMap::zeros(image.dims(), image.geometry().clone())?)
    }
}
