//! Three-network multi-view cardiac segmentation: TriggerNet on the
//! short-axis stack, LA-SegNet on the long-axis plane cropped and guided by
//! the projected short-axis result, and SA-SegNet guided by both.

pub mod cache;
pub mod config;
pub mod error;
pub mod evaluate;
pub mod inference;
pub mod par;
pub mod rundir;
pub mod segmenter;
pub mod training;

pub use cache::{ArtifactCache, ArtifactKey};
pub use config::{PipelineConfig, StageConfig};
pub use error::{Error, Result};
pub use evaluate::{evaluate, run_ablation, AblationReport, AblationRow, Evaluation};
pub use inference::{run_inference, Case, InferenceOutput, LaVariant, PipelineState, SaVariant, Stages};
pub use rundir::{RunDir, RunManifest};
pub use segmenter::{EmptySegmenter, NetSegmenter, OracleSegmenter, Segmenter};
pub use training::{run_training, train_ablation, AblationModels, StageArtifacts, TrainedPipeline};
