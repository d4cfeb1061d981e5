use std::path::{Path, PathBuf};

use mvseg_core::hlc::DEFAULT_MARGIN;
use mvseg_core::metrics::HdVariant;
use mvseg_segnet::{AugmentConfig, Dimensionality, NetworkConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};

/// One network of the pipeline: its architecture, where its weights live and
/// how it is trained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub network: NetworkConfig,
    #[serde(default)]
    pub weights: Option<PathBuf>,
    #[serde(default)]
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// HLC margin in voxels of the working grid.
    pub margin: usize,
    /// Resample both views to `target_spacing_mm` before segmentation.
    pub resample: bool,
    pub target_spacing_mm: f64,
    pub hd_variant: HdVariant,
    /// Train stages 2 and 3 on priors built from ground truth instead of
    /// predecessor predictions.
    pub teacher_forcing: bool,
    /// Case-level worker threads.
    pub jobs: usize,
    pub trigger: StageConfig,
    pub la: StageConfig,
    pub sa: StageConfig,
}

/// Input channels of the LA network: intensity plus one-hot SA2LAmap.
pub const LA_IN_CHANNELS: usize = 4;
/// Input channels of the SA network: intensity plus one-hot S_SA1 and LA2SAmap.
pub const SA_IN_CHANNELS: usize = 7;

fn stage(dim: Dimensionality, in_channels: usize, base: usize, seed: u64) -> StageConfig {
    StageConfig {
        network: NetworkConfig::new(dim, in_channels, 3).with_features(base, 8 * base),
        weights: None,
        train: TrainConfig {
            epochs: 20,
            iters_per_epoch: 35,
            batch_size: 2,
            seed,
            ..TrainConfig::default()
        },
    }
}

impl Default for PipelineConfig {
    /// Desk-scale networks (3 stages, narrow features) with the standard
    /// 15-voxel margin.
    fn default() -> Self {
        PipelineConfig {
            margin: DEFAULT_MARGIN,
            resample: true,
            target_spacing_mm: 1.0,
            hd_variant: HdVariant::Max,
            teacher_forcing: false,
            jobs: 1,
            trigger: stage(Dimensionality::ThreeD, 1, 8, 101),
            la: stage(Dimensionality::TwoD, LA_IN_CHANNELS, 8, 202),
            sa: stage(Dimensionality::ThreeD, SA_IN_CHANNELS, 8, 303),
        }
    }
}

impl PipelineConfig {
    /// Settings for phantom-scale runs, where a 15-voxel margin would cover
    /// the whole field of view.
    pub fn toy() -> Self {
        PipelineConfig {
            margin: 4,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.target_spacing_mm.is_finite() && self.target_spacing_mm > 0.0) {
            return bad("target_spacing_mm must be positive".into());
        }
        if self.jobs == 0 {
            return bad("jobs must be at least 1".into());
        }
        let expect = [
            ("trigger", &self.trigger, Dimensionality::ThreeD, 1),
            ("la", &self.la, Dimensionality::TwoD, LA_IN_CHANNELS),
            ("sa", &self.sa, Dimensionality::ThreeD, SA_IN_CHANNELS),
        ];
        for (name, s, dim, ch) in expect {
            s.network.validate().map_err(|e| Error::Config(format!("{name}: {e}")))?;
            s.train.validate().map_err(|e| Error::Config(format!("{name}: {e}")))?;
            if s.network.dimensionality != dim || s.network.in_channels != ch {
                return bad(format!(
                    "{name} network must be {dim:?} with {ch} input channels, got {:?} with {}",
                    s.network.dimensionality, s.network.in_channels
                ));
            }
        }
        Ok(())
    }

    /// Parses a JSON config; unknown keys are rejected with the list of
    /// valid ones.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Scales every stage's schedule (for smoke runs).
    pub fn with_schedule(mut self, epochs: usize, iters_per_epoch: usize) -> Self {
        for s in [&mut self.trigger, &mut self.la, &mut self.sa] {
            s.train.epochs = epochs;
            s.train.iters_per_epoch = iters_per_epoch;
        }
        self
    }

    pub fn without_augmentation(mut self) -> Self {
        for s in [&mut self.trigger, &mut self.la, &mut self.sa] {
            s.train.augment = AugmentConfig::disabled();
        }
        self
    }
}
