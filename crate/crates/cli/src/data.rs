use std::path::Path;

use mvseg_core::nifti_io;
use mvseg_core::phantom::{read_manifest, CasePaths};
use mvseg_core::LabelMap;
use mvseg_pipeline::Case;

use crate::error::Result;

fn optional_labels(path: &Path) -> Result<Option<LabelMap>> {
    if path.is_file() {
        Ok(Some(nifti_io::read_labels(path)?))
    } else {
        Ok(None)
    }
}

/// Loads every case listed in `dir/manifest.json`; ground-truth files are
/// optional.
pub fn load_cases(dir: &Path) -> Result<Vec<Case>> {
    let manifest = read_manifest(dir)?;
    manifest
        .cases
        .iter()
        .map(|e| {
            let p = CasePaths::in_dir(e.id.clone(), &dir.join(&e.dir));
            Ok(Case {
                id: p.id.clone(),
                sa_image: nifti_io::read_volume(&p.sa_image)?,
                la_image: nifti_io::read_volume(&p.la_image)?,
                sa_gt: optional_labels(&p.sa_gt)?,
                la_gt: optional_labels(&p.la_gt)?,
            })
        })
        .collect()
}
