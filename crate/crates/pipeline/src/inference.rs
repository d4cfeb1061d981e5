use std::sync::Arc;

use log::debug;
use mvseg_core::hlc::{crop, localize, restore, BBox, CropRecord};
use mvseg_core::phantom::PhantomCase;
use mvseg_core::volume::Voxel;
use mvseg_core::xdim_transform::{la_to_sa_map, project_segmentation, sa_to_la_map, ProjectionSpec};
use mvseg_core::{copy_geometry, Image, LabelMap, Volume};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::segmenter::{OracleSegmenter, Segmenter};

/// One subject: both views and, when known, their ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Case {
    pub id: String,
    pub sa_image: Volume,
    pub la_image: Volume,
    pub sa_gt: Option<LabelMap>,
    pub la_gt: Option<LabelMap>,
}

impl Case {
    pub fn ground_truth(&self) -> Result<(&LabelMap, &LabelMap)> {
        match (&self.sa_gt, &self.la_gt) {
            (Some(sa), Some(la)) => Ok((sa, la)),
            _ => Err(Error::MissingGroundTruth(self.id.clone())),
        }
    }
}

impl From<PhantomCase> for Case {
    fn from(c: PhantomCase) -> Self {
        Case {
            id: c.id,
            sa_image: c.sa_image,
            la_image: c.la_image,
            sa_gt: Some(c.sa_gt),
            la_gt: Some(c.la_gt),
        }
    }
}

/// LA-SegNet inputs: cropping by the SA2LAmap and/or using it as a prior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LaVariant {
    pub hlc: bool,
    pub prior: bool,
}

impl LaVariant {
    pub const FULL: Self = LaVariant { hlc: true, prior: true };
    pub const BASELINE: Self = LaVariant { hlc: false, prior: false };
    /// Ablation rows in table order.
    pub const ALL: [Self; 4] = [
        Self::BASELINE,
        LaVariant { hlc: true, prior: false },
        LaVariant { hlc: false, prior: true },
        Self::FULL,
    ];

    pub fn in_channels(self) -> usize {
        1 + 3 * self.prior as usize
    }

    pub fn tag(self) -> String {
        if self == Self::FULL {
            "la".into()
        } else {
            format!("la_h{}p{}", self.hlc as u8, self.prior as u8)
        }
    }
}

/// SA-SegNet inputs. With neither crop nor priors the stage is TriggerNet
/// itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SaVariant {
    pub hlc: bool,
    pub prior_trigger: bool,
    pub prior_la: bool,
}

impl SaVariant {
    pub const FULL: Self = SaVariant {
        hlc: true,
        prior_trigger: true,
        prior_la: true,
    };
    pub const TRIGGER_ONLY: Self = SaVariant {
        hlc: false,
        prior_trigger: false,
        prior_la: false,
    };
    pub const ALL: [Self; 3] = [
        Self::TRIGGER_ONLY,
        SaVariant {
            hlc: true,
            prior_trigger: true,
            prior_la: false,
        },
        Self::FULL,
    ];

    pub fn in_channels(self) -> usize {
        1 + 3 * (self.prior_trigger as usize + self.prior_la as usize)
    }

    pub fn is_trigger_only(self) -> bool {
        self == Self::TRIGGER_ONLY
    }

    pub fn tag(self) -> String {
        if self == Self::FULL {
            "sa".into()
        } else {
            format!("sa_h{}t{}l{}", self.hlc as u8, self.prior_trigger as u8, self.prior_la as u8)
        }
    }
}

/// The three networks of one run and the inputs the second-stage networks
/// were trained on.
#[derive(Clone)]
pub struct Stages {
    pub trigger: Arc<dyn Segmenter>,
    pub la: Arc<dyn Segmenter>,
    pub sa: Arc<dyn Segmenter>,
    pub la_variant: LaVariant,
    pub sa_variant: SaVariant,
}

impl Stages {
    pub fn new(trigger: Arc<dyn Segmenter>, la: Arc<dyn Segmenter>, sa: Arc<dyn Segmenter>) -> Self {
        Stages {
            trigger,
            la,
            sa,
            la_variant: LaVariant::FULL,
            sa_variant: SaVariant::FULL,
        }
    }

    /// Ground-truth passthrough networks for `case`.
    pub fn oracle(case: &Case) -> Result<Self> {
        let (sa, la) = case.ground_truth()?;
        let sa: Arc<dyn Segmenter> = Arc::new(OracleSegmenter::new(sa.clone()));
        Ok(Stages::new(sa.clone(), Arc::new(OracleSegmenter::new(la.clone())), sa))
    }
}

/// Every intermediate of one inference, on the working (resampled) grids.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineState {
    pub i_sa: Volume,
    pub i_la: Volume,
    pub s_sa1: LabelMap,
    pub sa2la: LabelMap,
    pub la_crop: CropRecord,
    pub la_input: Volume,
    pub la_prior: LabelMap,
    pub la_fell_back: bool,
    pub s_la: LabelMap,
    pub la2sa: LabelMap,
    pub sa_crop: CropRecord,
    pub sa_input: Volume,
    pub sa_priors: Vec<LabelMap>,
    pub sa_fell_back: bool,
    pub s_sa2: LabelMap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferenceOutput {
    /// Predictions on the native grids of the inputs.
    pub s_la: LabelMap,
    pub s_sa2: LabelMap,
    pub state: PipelineState,
}

/// Resamples axes with more than one sample to the configured spacing;
/// single-slice axes keep their thickness.
pub fn working_grid<T: Voxel>(img: &Image<T>, cfg: &PipelineConfig) -> Result<Image<T>> {
    if !cfg.resample {
        return Ok(img.clone());
    }
    let src = img.geometry().spacing();
    let dims = img.dims();
    let target = Vector3::from_fn(|a, _| if dims[a] > 1 { cfg.target_spacing_mm } else { src[a] });
    Ok(img.resample_to_spacing(target)?)
}

/// Fails unless some pixel of the LA plane falls inside the SA volume.
pub fn check_views_intersect(i_sa: &Volume, i_la: &Volume) -> Result<()> {
    let [nx, ny, nz] = i_la.dims();
    let sa_dims = i_sa.dims();
    let sa = i_sa.geometry();
    let inside = (0..nz).any(|z| {
        (0..ny).any(|y| {
            (0..nx).any(|x| {
                let q = sa.index_from_physical(&i_la.voxel_center(x, y, z));
                (0..3).all(|a| q[a] > -0.5 && q[a] < sa_dims[a] as f64 - 0.5)
            })
        })
    });
    if inside {
        Ok(())
    } else {
        Err(Error::GeometryMismatch {
            first: "I_SA",
            second: "I_LA",
            detail: "the long-axis plane does not intersect the short-axis volume".into(),
        })
    }
}

fn check_prediction(name: &'static str, pred: &LabelMap, source: &'static str, img: &Volume) -> Result<()> {
    if pred.dims() != img.dims() {
        return Err(Error::GeometryMismatch {
            first: name,
            second: source,
            detail: format!("prediction dims {:?} vs image dims {:?}", pred.dims(), img.dims()),
        });
    }
    Ok(())
}

/// Box for an HLC step, or the whole grid when cropping is disabled.
pub(crate) fn hlc_box(priors: &[&LabelMap], dims: [usize; 3], enabled: bool, margin: usize) -> Result<(BBox, bool)> {
    if enabled {
        Ok(localize(priors, margin)?)
    } else {
        Ok((BBox::whole(dims), false))
    }
}

/// The LA stage on working grids: crop by SA2LAmap, segment, restore.
pub(crate) struct LaStage {
    pub crop: CropRecord,
    pub input: Volume,
    pub prior: LabelMap,
    pub fell_back: bool,
    pub s_la: LabelMap,
}

pub(crate) fn la_inputs(i_la: &Volume, sa2la: &LabelMap, variant: LaVariant, margin: usize) -> Result<(Volume, LabelMap, CropRecord, bool)> {
    let (b, fell_back) = hlc_box(&[sa2la], i_la.dims(), variant.hlc, margin)?;
    let (input, rec) = crop(i_la, b)?;
    let (prior, _) = crop(sa2la, b)?;
    Ok((input, prior, rec, fell_back))
}

fn run_la(i_la: &Volume, sa2la: &LabelMap, seg: &dyn Segmenter, variant: LaVariant, margin: usize) -> Result<LaStage> {
    let (input, prior, crop, fell_back) = la_inputs(i_la, sa2la, variant, margin)?;
    let priors: Vec<&LabelMap> = if variant.prior { vec![&prior] } else { vec![] };
    let out = seg.segment(&input, &priors)?;
    check_prediction("S_LA", &out, "I_LA crop", &input)?;
    let s_la = copy_geometry(i_la, restore(&out, &crop)?)?;
    Ok(LaStage {
        crop,
        input,
        prior,
        fell_back,
        s_la,
    })
}

/// Cropped SA image and priors in channel order (S_SA1, LA2SAmap), as used
/// by `variant`.
pub(crate) fn sa_inputs(
    i_sa: &Volume,
    s_sa1: &LabelMap,
    la2sa: &LabelMap,
    variant: SaVariant,
    margin: usize,
) -> Result<(Volume, Vec<LabelMap>, CropRecord, bool)> {
    let mut used: Vec<&LabelMap> = Vec::new();
    if variant.prior_trigger {
        used.push(s_sa1);
    }
    if variant.prior_la {
        used.push(la2sa);
    }
    let bbox_priors = if used.is_empty() { vec![s_sa1] } else { used.clone() };
    let (b, fell_back) = hlc_box(&bbox_priors, i_sa.dims(), variant.hlc, margin)?;
    let (input, rec) = crop(i_sa, b)?;
    let priors = used.iter().map(|p| crop(*p, b).map(|c| c.0)).collect::<mvseg_core::Result<Vec<_>>>()?;
    Ok((input, priors, rec, fell_back))
}

pub fn run_inference(i_sa: &Volume, i_la: &Volume, stages: &Stages, cfg: &PipelineConfig) -> Result<InferenceOutput> {
    let sa_w = working_grid(i_sa, cfg)?;
    let la_w = working_grid(i_la, cfg)?;
    check_views_intersect(&sa_w, &la_w)?;

    let s_sa1 = stages.trigger.segment(&sa_w, &[])?;
    check_prediction("S_SA1", &s_sa1, "I_SA", &sa_w)?;
    let s_sa1 = copy_geometry(&sa_w, s_sa1)?;
    let sa2la = sa_to_la_map(&s_sa1, &sa_w, &la_w)?;

    let la = run_la(&la_w, &sa2la, stages.la.as_ref(), stages.la_variant, cfg.margin)?;
    let la2sa = la_to_sa_map(&la.s_la, &la_w, &sa_w)?;

    let v = stages.sa_variant;
    let (sa_input, sa_priors, sa_crop, sa_fell_back) = sa_inputs(&sa_w, &s_sa1, &la2sa, v, cfg.margin)?;
    let s_sa2 = if v.is_trigger_only() {
        s_sa1.clone()
    } else {
        let refs: Vec<&LabelMap> = sa_priors.iter().collect();
        let out = stages.sa.segment(&sa_input, &refs)?;
        check_prediction("S_SA2", &out, "I_SA crop", &sa_input)?;
        copy_geometry(&sa_w, restore(&out, &sa_crop)?)?
    };
    debug!(
        "la crop {:?} (fallback {}), sa crop {:?} (fallback {})",
        la.crop.bbox, la.fell_back, sa_crop.bbox, sa_fell_back
    );

    let s_la_native = project_segmentation(&ProjectionSpec::onto(&la.s_la, i_la))?;
    let s_sa2_native = project_segmentation(&ProjectionSpec::onto(&s_sa2, i_sa))?;
    Ok(InferenceOutput {
        s_la: s_la_native,
        s_sa2: s_sa2_native,
        state: PipelineState {
            i_sa: sa_w,
            i_la: la_w,
            s_sa1,
            sa2la,
            la_crop: la.crop,
            la_input: la.input,
            la_prior: la.prior,
            la_fell_back: la.fell_back,
            s_la: la.s_la,
            la2sa,
            sa_crop,
            sa_input,
            sa_priors,
            sa_fell_back,
            s_sa2,
        },
    })
}
