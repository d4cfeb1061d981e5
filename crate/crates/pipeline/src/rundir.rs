use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use mvseg_core::nifti_io;
use mvseg_segnet::{io as weights_io, NetworkConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{PipelineConfig, StageConfig};
use crate::error::{io_err, Error, Result};
use crate::evaluate::AblationNets;
use crate::inference::{InferenceOutput, LaVariant, SaVariant, Stages};
use crate::segmenter::{NetSegmenter, Segmenter};
use crate::training::StageArtifacts;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub tag: String,
    /// Relative to the run directory.
    pub weights: String,
    pub sha256: String,
    pub epochs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: PipelineConfig,
    pub dataset: Option<String>,
    pub train_cases: Vec<String>,
    pub stages: Vec<StageRecord>,
}

impl RunManifest {
    pub fn stage(&self, tag: &str) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.tag == tag)
    }
}

/// Layout of one run:
/// `manifest.json`, `weights/<tag>.mvsw`, `logs/<tag>.jsonl`,
/// `predictions/<case>/{la,sa}_pred.nii.gz`, `metrics.json`, `cache/`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunDir {
    root: PathBuf,
}

pub const MANIFEST: &str = "manifest.json";
pub const METRICS: &str = "metrics.json";
pub const ABLATION: &str = "ablation.json";
pub const LA_PRED: &str = "la_pred.nii.gz";
pub const SA_PRED: &str = "sa_pred.nii.gz";

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    fs::write(path, bytes).map_err(io_err(path))
}

impl RunDir {
    pub fn create(root: &Path) -> Result<Self> {
        for sub in ["weights", "logs", "predictions", "cache"] {
            let p = root.join(sub);
            fs::create_dir_all(&p).map_err(io_err(&p))?;
        }
        Ok(RunDir { root: root.to_path_buf() })
    }

    pub fn open(root: &Path) -> Result<Self> {
        let m = root.join(MANIFEST);
        if !m.is_file() {
            return Err(Error::Io {
                path: m,
                source: std::io::Error::new(std::io::ErrorKind::NotFound, "not a run directory"),
            });
        }
        Ok(RunDir { root: root.to_path_buf() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn weights_path(&self, tag: &str) -> PathBuf {
        self.root.join("weights").join(format!("{tag}.mvsw"))
    }

    pub fn log_path(&self, tag: &str) -> PathBuf {
        self.root.join("logs").join(format!("{tag}.jsonl"))
    }

    pub fn predictions_dir(&self, case_id: &str) -> PathBuf {
        self.root.join("predictions").join(case_id)
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.root.join("cache")
    }

    pub fn metrics_path(&self) -> PathBuf {
        self.root.join(METRICS)
    }

    pub fn ablation_path(&self) -> PathBuf {
        self.root.join(ABLATION)
    }

    /// Writes weights and the epoch log; returns the manifest entry.
    pub fn save_stage(&self, a: &StageArtifacts) -> Result<StageRecord> {
        let bytes = weights_io::to_bytes(&a.weights)?;
        let wp = self.weights_path(&a.tag);
        write_file(&wp, &bytes)?;
        let mut log = Vec::new();
        for e in &a.log {
            serde_json::to_writer(&mut log, e)?;
            log.push(b'\n');
        }
        write_file(&self.log_path(&a.tag), &log)?;
        Ok(StageRecord {
            tag: a.tag.clone(),
            weights: format!("weights/{}.mvsw", a.tag),
            sha256: sha256_hex(&bytes),
            epochs: a.log.len(),
        })
    }

    pub fn write_manifest(&self, m: &RunManifest) -> Result<()> {
        write_file(&self.root.join(MANIFEST), serde_json::to_string_pretty(m)?.as_bytes())
    }

    pub fn read_manifest(&self) -> Result<RunManifest> {
        let p = self.root.join(MANIFEST);
        let text = fs::read_to_string(&p).map_err(io_err(&p))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn write_text(&self, path: &Path, text: &str) -> Result<()> {
        let mut t = text.to_string();
        if !t.ends_with('\n') {
            t.push('\n');
        }
        write_file(path, t.as_bytes())
    }

    /// Loads a stage's weights, checking the recorded hash and, when given,
    /// the expected architecture.
    pub fn load_stage(&self, m: &RunManifest, tag: &str, expected: Option<&NetworkConfig>) -> Result<NetSegmenter> {
        let rec = m
            .stage(tag)
            .ok_or_else(|| Error::Config(format!("run has no stage {tag:?}")))?;
        let path = self.root.join(&rec.weights);
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        let found = sha256_hex(&bytes);
        if found != rec.sha256 {
            return Err(Error::Config(format!(
                "{} hash {found} does not match manifest {}",
                path.display(),
                rec.sha256
            )));
        }
        let w = weights_io::from_bytes(&bytes)?;
        if let Some(cfg) = expected {
            if &w.config != cfg {
                return Err(Error::Config(format!("{} does not match the configured network", path.display())));
            }
        }
        Ok(NetSegmenter::new(w))
    }

    fn stage_net(&self, m: &RunManifest, tag: &str, sc: &StageConfig) -> Result<Arc<dyn Segmenter>> {
        Ok(match &sc.weights {
            Some(p) => Arc::new(NetSegmenter::load(p, &sc.network)?),
            None => Arc::new(self.load_stage(m, tag, Some(&sc.network))?),
        })
    }

    /// The three pipeline networks; explicit weight paths in `cfg` win over
    /// the run's own files.
    pub fn load_pipeline(&self, m: &RunManifest, cfg: &PipelineConfig) -> Result<Stages> {
        Ok(Stages::new(
            self.stage_net(m, "trigger", &cfg.trigger)?,
            self.stage_net(m, &LaVariant::FULL.tag(), &cfg.la)?,
            self.stage_net(m, &SaVariant::FULL.tag(), &cfg.sa)?,
        ))
    }

    pub fn load_ablation(&self, m: &RunManifest, cfg: &PipelineConfig) -> Result<AblationNets> {
        let stages = self.load_pipeline(m, cfg)?;
        let mut la = Vec::new();
        for v in LaVariant::ALL {
            let net: Arc<dyn Segmenter> = if v == LaVariant::FULL {
                stages.la.clone()
            } else {
                Arc::new(self.load_stage(m, &v.tag(), None)?)
            };
            la.push((v, net));
        }
        let mut sa = Vec::new();
        for v in SaVariant::ALL.into_iter().filter(|v| !v.is_trigger_only()) {
            let net: Arc<dyn Segmenter> = if v == SaVariant::FULL {
                stages.sa.clone()
            } else {
                Arc::new(self.load_stage(m, &v.tag(), None)?)
            };
            sa.push((v, net));
        }
        Ok(AblationNets {
            trigger: stages.trigger,
            la,
            sa,
        })
    }

    /// Writes native-grid predictions; returns the (LA, SA) paths.
    pub fn write_predictions(&self, case_id: &str, out: &InferenceOutput) -> Result<(PathBuf, PathBuf)> {
        let dir = self.predictions_dir(case_id);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let (la, sa) = (dir.join(LA_PRED), dir.join(SA_PRED));
        nifti_io::write(&out.s_la, &la)?;
        nifti_io::write(&out.s_sa2, &sa)?;
        Ok((la, sa))
    }
}

/// Appends a line to a text log, creating it if needed.
pub fn append_line(path: &Path, line: &str) -> Result<()> {
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(io_err(path))?;
    writeln!(f, "{line}").map_err(io_err(path))
}
