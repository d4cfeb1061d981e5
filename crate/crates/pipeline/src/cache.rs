use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use mvseg_core::{nifti_io, LabelMap, Volume};
use mvseg_segnet::{io as weights_io, Weights};
use sha2::{Digest, Sha256};

use crate::error::{io_err, Result};

/// Content address of a stage output: the stage tag, the weights and every
/// input image.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ArtifactKey(String);

impl ArtifactKey {
    pub fn new(tag: &str, weights: &Weights<f32>, image: &Volume, priors: &[&LabelMap]) -> Result<Self> {
        let mut h = Sha256::new();
        let mut part = |bytes: &[u8]| {
            h.update((bytes.len() as u64).to_le_bytes());
            h.update(bytes);
        };
        part(tag.as_bytes());
        part(&weights_io::to_bytes(weights)?);
        part(&nifti_io::to_bytes(image));
        for p in priors {
            part(&nifti_io::to_bytes(*p));
        }
        let digest = h.finalize();
        Ok(ArtifactKey(digest.iter().map(|b| format!("{b:02x}")).collect()))
    }

    pub fn hex(&self) -> &str {
        &self.0
    }
}

/// Memoises stage predictions in memory and, optionally, as NIfTI files in
/// a directory so later runs can reuse them.
#[derive(Debug, Default)]
pub struct ArtifactCache {
    dir: Option<PathBuf>,
    mem: Mutex<HashMap<ArtifactKey, LabelMap>>,
}

impl ArtifactCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn on_disk(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        Ok(ArtifactCache {
            dir: Some(dir.to_path_buf()),
            mem: Mutex::default(),
        })
    }

    fn path(&self, key: &ArtifactKey) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(format!("{}.nii.gz", key.hex())))
    }

    pub fn get(&self, key: &ArtifactKey) -> Result<Option<LabelMap>> {
        if let Some(m) = self.mem.lock().expect("cache lock").get(key) {
            return Ok(Some(m.clone()));
        }
        match self.path(key) {
            Some(p) if p.exists() => {
                let m = nifti_io::read_labels(&p)?;
                self.mem.lock().expect("cache lock").insert(key.clone(), m.clone());
                Ok(Some(m))
            }
            _ => Ok(None),
        }
    }

    pub fn insert(&self, key: ArtifactKey, map: &LabelMap) -> Result<()> {
        if let Some(p) = self.path(&key) {
            nifti_io::write(map, &p)?;
        }
        self.mem.lock().expect("cache lock").insert(key, map.clone());
        Ok(())
    }

    pub fn get_or_compute(&self, key: ArtifactKey, f: impl FnOnce() -> Result<LabelMap>) -> Result<LabelMap> {
        if let Some(m) = self.get(&key)? {
            return Ok(m);
        }
        let m = f()?;
        self.insert(key, &m)?;
        Ok(m)
    }

    pub fn len(&self) -> usize {
        self.mem.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use mvseg_core::ImageGeometry;
    use mvseg_segnet::{Dimensionality, NetworkConfig};

    fn fixtures() -> (Weights<f32>, Volume, LabelMap) {
        let cfg = NetworkConfig::new(Dimensionality::TwoD, 1, 1).with_features(2, 4);
        let g = ImageGeometry::identity();
        (
            Weights::init(&cfg, 3).unwrap(),
            Volume::from_fn([4, 4, 1], g.clone(), |x, y, _| (x * y) as f32).unwrap(),
            LabelMap::from_fn([4, 4, 1], g, |x, _, _| (x % 4) as u8).unwrap(),
        )
    }

    #[test]
    fn key_depends_on_every_input() {
        let (w, img, p) = fixtures();
        let k = ArtifactKey::new("t", &w, &img, &[&p]).unwrap();
        assert_eq!(k, ArtifactKey::new("t", &w, &img, &[&p]).unwrap());
        assert_eq!(k.hex().len(), 64);
        assert_ne!(k, ArtifactKey::new("u", &w, &img, &[&p]).unwrap());
        assert_ne!(k, ArtifactKey::new("t", &w, &img, &[]).unwrap());
        let w2 = Weights::init(&w.config, 4).unwrap();
        assert_ne!(k, ArtifactKey::new("t", &w2, &img, &[&p]).unwrap());
    }

    #[test]
    fn disk_cache_survives_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let (w, img, p) = fixtures();
        let k = ArtifactKey::new("t", &w, &img, &[]).unwrap();
        let c = ArtifactCache::on_disk(dir.path()).unwrap();
        let mut calls = 0;
        c.get_or_compute(k.clone(), || {
            calls += 1;
            Ok(p.clone())
        })
        .unwrap();
        let again = ArtifactCache::on_disk(dir.path()).unwrap();
        let got = again
            .get_or_compute(k, || {
                calls += 1;
                Ok(p.clone())
            })
            .unwrap();
        assert_eq!(calls, 1);
        assert_eq!(got, p);
    }
}
