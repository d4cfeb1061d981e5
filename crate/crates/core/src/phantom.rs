//! Synthetic cardiac phantoms with analytic ground truth in both views.
//!
//! The anatomy is defined in a heart-local frame (x towards the RV, z along
//! the LV long axis): the LV blood pool is an ellipsoid, the myocardium a
//! shell around it, and the RV a crescent formed by an offset ellipsoid minus
//! the LV and its wall. Bright "distractor" blobs outside the heart mimic other
//! blood-filled structures; they appear in the images but never in labels.
//!
//! The short-axis stack and the long-axis plane are both sampled directly from
//! [`analytic_label`], never from one another, so any cross-view projection can
//! be checked against an independent truth.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hlc::{roundtrip_check, DEFAULT_MARGIN};
use crate::nifti_io;
use crate::volume::{
    rotation_from_euler_deg, ImageGeometry, Label, LabelMap, PhysicalPoint, Volume, BACKGROUND,
    FOREGROUND, LV, MYO, RV,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Distractor {
    /// Centre in the heart-local frame, mm.
    pub center: [f64; 3],
    /// Radius of the blood-bright core, mm.
    pub radius: f64,
    /// Thickness of the muscle-dark rim, mm.
    pub rim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Intensities {
    pub background: f64,
    pub lv: f64,
    pub myo: f64,
    pub rv: f64,
    pub noise_sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SaGridSpec {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    /// Extra rotation of the stack relative to the heart axes, degrees.
    pub tilt_deg: [f64; 3],
    /// Continuous SA index at which the heart centre sits.
    pub heart_index: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LaPlaneSpec {
    pub dims: [usize; 2],
    pub spacing: [f64; 2],
    pub slice_thickness: f64,
    /// Rotation of the plane about the LV long axis, degrees. At 0 the plane
    /// contains the local x axis (a four-chamber-like cut through LV and RV).
    pub angle_deg: f64,
    /// Continuous LA pixel index at which the heart centre sits.
    pub heart_index: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomParams {
    /// Heart centre in physical space, mm.
    pub heart_center: [f64; 3],
    pub heart_rotation_deg: [f64; 3],
    /// Short-axis radius of the LV blood pool, mm.
    pub lv_radius: f64,
    /// Half-length of the LV blood pool along the long axis, mm.
    pub lv_half_length: f64,
    pub myo_thickness: f64,
    /// Offset of the RV ellipsoid centre along local x, mm.
    pub rv_offset: f64,
    pub rv_radii: [f64; 3],
    pub distractors: Vec<Distractor>,
    pub intensity: Intensities,
    pub sa: SaGridSpec,
    pub la: LaPlaneSpec,
    pub seed: u64,
}

impl Default for PhantomParams {
    fn default() -> Self {
        PhantomParams {
            heart_center: [12.0, -30.0, 45.0],
            heart_rotation_deg: [25.0, -15.0, 40.0],
            lv_radius: 5.5,
            lv_half_length: 10.0,
            myo_thickness: 4.0,
            rv_offset: 10.0,
            rv_radii: [7.5, 9.0, 12.0],
            distractors: vec![
                Distractor { center: [-17.0, 1.0, 4.0], radius: 4.0, rim: 2.0 },
                Distractor { center: [3.0, -19.0, -3.0], radius: 4.0, rim: 2.0 },
                Distractor { center: [-4.0, 0.0, 24.0], radius: 5.0, rim: 2.0 },
            ],
            intensity: Intensities {
                background: 0.2,
                lv: 1.0,
                myo: 0.45,
                rv: 0.85,
                noise_sigma: 0.08,
            },
            sa: SaGridSpec {
                dims: [40, 40, 32],
                spacing: [1.0, 1.0, 1.0],
                tilt_deg: [0.0, 0.0, 0.0],
                heart_index: [18.0, 20.0, 16.0],
            },
            la: LaPlaneSpec {
                dims: [64, 64],
                spacing: [1.0, 1.0],
                slice_thickness: 3.0,
                angle_deg: 0.0,
                heart_index: [26.0, 32.0],
            },
            seed: 0,
        }
    }
}

/// Precomputed heart frame for fast label evaluation.
struct Anatomy<'a> {
    params: &'a PhantomParams,
    center: Vector3<f64>,
    /// Columns are the heart-local axes in physical space.
    frame: Matrix3<f64>,
}

fn in_ellipsoid(l: &Vector3<f64>, c: [f64; 3], r: [f64; 3]) -> bool {
    let d = [(l.x - c[0]) / r[0], (l.y - c[1]) / r[1], (l.z - c[2]) / r[2]];
    d[0] * d[0] + d[1] * d[1] + d[2] * d[2] <= 1.0
}

impl<'a> Anatomy<'a> {
    fn new(params: &'a PhantomParams) -> Self {
        Anatomy {
            params,
            center: params.heart_center.into(),
            frame: rotation_from_euler_deg(params.heart_rotation_deg),
        }
    }

    fn local(&self, p: &PhysicalPoint) -> Vector3<f64> {
        self.frame.transpose() * (p - self.center)
    }

    fn label(&self, p: &PhysicalPoint) -> Label {
        let q = self.params;
        let l = self.local(p);
        let (a, b, t) = (q.lv_radius, q.lv_half_length, q.myo_thickness);
        if in_ellipsoid(&l, [0.0; 3], [a, a, b]) {
            LV
        } else if in_ellipsoid(&l, [0.0; 3], [a + t, a + t, b + t]) {
            MYO
        } else if in_ellipsoid(&l, [q.rv_offset, 0.0, 0.0], q.rv_radii) {
            RV
        } else {
            BACKGROUND
        }
    }

    fn intensity(&self, p: &PhysicalPoint) -> f64 {
        let i = &self.params.intensity;
        match self.label(p) {
            LV => return i.lv,
            MYO => return i.myo,
            RV => return i.rv,
            _ => {}
        }
        let l = self.local(p);
        for d in &self.params.distractors {
            let r = (l - Vector3::from(d.center)).norm();
            if r <= d.radius {
                return i.lv;
            }
            if r <= d.radius + d.rim {
                return i.myo;
            }
        }
        i.background
    }
}

impl PhantomParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidPhantom(m.to_string()));
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.lv_radius) || !positive(self.lv_half_length) {
            return bad("LV radii must be positive");
        }
        if !positive(self.myo_thickness) {
            return bad("myocardial thickness must be positive");
        }
        if !self.rv_radii.iter().all(|&r| positive(r)) {
            return bad("RV radii must be positive");
        }
        // The RV ellipsoid must not reach the LV blood pool along its axis of
        // approach, otherwise the crescent would not abut the wall.
        if self.rv_offset - self.rv_radii[0] > self.lv_radius + self.myo_thickness {
            return bad("RV does not touch the myocardium");
        }
        if self.distractors.iter().any(|d| !positive(d.radius) || d.rim < 0.0) {
            return bad("distractor radii must be positive");
        }
        if self.sa.dims.contains(&0) || !self.sa.spacing.iter().all(|&s| positive(s)) {
            return bad("degenerate SA grid");
        }
        if self.la.dims.contains(&0)
            || !self.la.spacing.iter().all(|&s| positive(s))
            || !positive(self.la.slice_thickness)
        {
            return bad("degenerate LA grid");
        }
        if !(self.intensity.noise_sigma >= 0.0) {
            return bad("noise sigma must be non-negative");
        }
        Ok(())
    }

    pub fn sa_geometry(&self) -> Result<ImageGeometry> {
        let dir = rotation_from_euler_deg(self.heart_rotation_deg) * rotation_from_euler_deg(self.sa.tilt_deg);
        let spacing = Vector3::from(self.sa.spacing);
        let origin = Vector3::from(self.heart_center)
            - dir * spacing.component_mul(&Vector3::from(self.sa.heart_index));
        ImageGeometry::new(origin, spacing, dir)
    }

    /// Long-axis plane: in-plane axis 0 is the rotated local x, axis 1 the
    /// long axis, and the slice normal completes a right-handed frame.
    pub fn la_geometry(&self) -> Result<ImageGeometry> {
        let frame = rotation_from_euler_deg(self.heart_rotation_deg);
        let th = self.la.angle_deg.to_radians();
        let u = frame * Vector3::new(th.cos(), th.sin(), 0.0);
        let v = frame * Vector3::z();
        let w = u.cross(&v);
        let dir = Matrix3::from_columns(&[u, v, w]);
        let spacing = Vector3::new(self.la.spacing[0], self.la.spacing[1], self.la.slice_thickness);
        let origin = Vector3::from(self.heart_center)
            - u * (self.la.spacing[0] * self.la.heart_index[0])
            - v * (self.la.spacing[1] * self.la.heart_index[1]);
        ImageGeometry::new(origin, spacing, dir)
    }
}

/// Ground-truth label at a physical point.
pub fn analytic_label(params: &PhantomParams, p: &PhysicalPoint) -> Label {
    Anatomy::new(params).label(p)
}

/// One synthetic subject: both views with their ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct PhantomCase {
    pub id: String,
    pub params: PhantomParams,
    pub sa_image: Volume,
    pub sa_gt: LabelMap,
    pub la_image: Volume,
    pub la_gt: LabelMap,
}

fn sample_view(
    anatomy: &Anatomy<'_>,
    dims: [usize; 3],
    geom: ImageGeometry,
    rng: &mut ChaCha8Rng,
) -> Result<(Volume, LabelMap)> {
    let gt = LabelMap::from_fn(dims, geom.clone(), |x, y, z| {
        anatomy.label(&geom.physical_from_index(&Vector3::new(x as f64, y as f64, z as f64)))
    })?;
    let sigma = anatomy.params.intensity.noise_sigma;
    let noise = Normal::new(0.0, sigma.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::InvalidPhantom(e.to_string()))?;
    let img = Volume::from_fn(dims, geom.clone(), |x, y, z| {
        let base = anatomy.intensity(&geom.physical_from_index(&Vector3::new(x as f64, y as f64, z as f64)));
        let n = if sigma > 0.0 { noise.sample(rng) } else { 0.0 };
        (base + n) as f32
    })?;
    Ok((img, gt))
}

pub fn generate_case(params: &PhantomParams) -> Result<PhantomCase> {
    generate_case_with_id(params, "case000")
}

fn generate_case_with_id(params: &PhantomParams, id: &str) -> Result<PhantomCase> {
    params.validate()?;
    let anatomy = Anatomy::new(params);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let (sa_image, sa_gt) = sample_view(&anatomy, params.sa.dims, params.sa_geometry()?, &mut rng)?;
    let la_dims = [params.la.dims[0], params.la.dims[1], 1];
    let (la_image, la_gt) = sample_view(&anatomy, la_dims, params.la_geometry()?, &mut rng)?;
    for (view, gt) in [("SA", &sa_gt), ("LA", &la_gt)] {
        for class in FOREGROUND {
            if gt.count(class) == 0 {
                return Err(Error::InvalidPhantom(format!(
                    "{id}: class {class} missing from the {view} view"
                )));
            }
        }
    }
    Ok(PhantomCase {
        id: id.to_string(),
        params: params.clone(),
        sa_image,
        sa_gt,
        la_image,
        la_gt,
    })
}

/// Per-case random perturbation ranges (uniform, symmetric about zero).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct JitterSpec {
    pub center_mm: f64,
    pub rotation_deg: f64,
    pub tilt_deg: f64,
    /// Relative scale change of all radii and thicknesses.
    pub scale: f64,
    pub la_angle_deg: f64,
    /// Relative change of each tissue intensity.
    pub intensity: f64,
    /// Shift of the heart inside each grid, voxels.
    pub placement_vox: f64,
}

impl Default for JitterSpec {
    fn default() -> Self {
        JitterSpec {
            center_mm: 5.0,
            rotation_deg: 10.0,
            tilt_deg: 4.0,
            scale: 0.1,
            la_angle_deg: 10.0,
            intensity: 0.1,
            placement_vox: 2.0,
        }
    }
}

impl JitterSpec {
    pub fn none() -> Self {
        JitterSpec {
            center_mm: 0.0,
            rotation_deg: 0.0,
            tilt_deg: 0.0,
            scale: 0.0,
            la_angle_deg: 0.0,
            intensity: 0.0,
            placement_vox: 0.0,
        }
    }

    fn apply(&self, base: &PhantomParams, rng: &mut ChaCha8Rng) -> PhantomParams {
        let mut u = |r: f64| if r > 0.0 { rng.random_range(-r..=r) } else { 0.0 };
        let mut p = base.clone();
        for a in 0..3 {
            p.heart_center[a] += u(self.center_mm);
            p.heart_rotation_deg[a] += u(self.rotation_deg);
            p.sa.tilt_deg[a] += u(self.tilt_deg);
        }
        let s = 1.0 + u(self.scale);
        p.lv_radius *= s;
        p.lv_half_length *= s;
        p.myo_thickness *= s;
        p.rv_offset *= s;
        p.rv_radii = p.rv_radii.map(|r| r * s);
        p.la.angle_deg += u(self.la_angle_deg);
        for level in [&mut p.intensity.lv, &mut p.intensity.myo, &mut p.intensity.rv] {
            *level *= 1.0 + u(self.intensity);
        }
        // Integer shifts keep grids aligned with the unjittered layout.
        for a in 0..2 {
            p.sa.heart_index[a] += u(self.placement_vox).round();
            p.la.heart_index[a] += u(self.placement_vox).round();
        }
        p
    }
}

/// Generates `n` jittered cases. Case `i` uses noise seed `seed + i`, so with
/// zero jitter and `n = 1` the result equals `generate_case` on `base` with
/// its seed replaced by `seed`.
///
/// Every case is checked with a crop-restore round trip at the default margin
/// using its own ground truth as the prior.
pub fn generate_dataset(
    n: usize,
    base: &PhantomParams,
    jitter: &JitterSpec,
    seed: u64,
) -> Result<Vec<PhantomCase>> {
    if n == 0 {
        return Err(Error::InvalidPhantom("dataset needs at least one case".into()));
    }
    let mut cases = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64 + 1);
        let mut params = jitter.apply(base, &mut rng);
        params.seed = seed.wrapping_add(i as u64);
        let case = generate_case_with_id(&params, &format!("case{i:03}"))?;
        for (view, gt) in [("SA", &case.sa_gt), ("LA", &case.la_gt)] {
            for r in roundtrip_check(gt, gt, DEFAULT_MARGIN)? {
                if r.dice != 1.0 || r.hd_mm != Some(0.0) {
                    return Err(Error::InvalidPhantom(format!(
                        "{}: {view} crop-restore check failed for class {}",
                        case.id, r.class
                    )));
                }
            }
        }
        cases.push(case);
    }
    Ok(cases)
}

/// Index ranges of consecutive train/val/test partitions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: std::ops::Range<usize>,
    pub val: std::ops::Range<usize>,
    pub test: std::ops::Range<usize>,
}

pub fn split(n: usize, n_train: usize, n_val: usize) -> Split {
    let t = n_train.min(n);
    let v = (t + n_val).min(n);
    Split {
        train: 0..t,
        val: t..v,
        test: v..n,
    }
}

pub const SA_IMG: &str = "sa_img.nii.gz";
pub const SA_GT: &str = "sa_gt.nii.gz";
pub const LA_IMG: &str = "la_img.nii.gz";
pub const LA_GT: &str = "la_gt.nii.gz";
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub dir: String,
    pub params: PhantomParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub jitter: JitterSpec,
    pub cases: Vec<ManifestEntry>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `caseNNN/{sa,la}_{img,gt}.nii.gz` plus `manifest.json` under `dir`.
pub fn write_dataset(cases: &[PhantomCase], jitter: &JitterSpec, seed: u64, dir: &Path) -> Result<Manifest> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut entries = Vec::with_capacity(cases.len());
    for case in cases {
        let case_dir = dir.join(&case.id);
        fs::create_dir_all(&case_dir).map_err(io_err(&case_dir))?;
        nifti_io::write(&case.sa_image, case_dir.join(SA_IMG))?;
        nifti_io::write(&case.sa_gt, case_dir.join(SA_GT))?;
        nifti_io::write(&case.la_image, case_dir.join(LA_IMG))?;
        nifti_io::write(&case.la_gt, case_dir.join(LA_GT))?;
        entries.push(ManifestEntry {
            id: case.id.clone(),
            dir: case.id.clone(),
            params: case.params.clone(),
        });
    }
    let manifest = Manifest {
        seed,
        jitter: jitter.clone(),
        cases: entries,
    };
    let path = dir.join(MANIFEST);
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(io_err(&path))?;
    Ok(manifest)
}

/// File locations of one case on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct CasePaths {
    pub id: String,
    pub sa_image: PathBuf,
    pub sa_gt: PathBuf,
    pub la_image: PathBuf,
    pub la_gt: PathBuf,
}

impl CasePaths {
    pub fn in_dir(id: impl Into<String>, dir: &Path) -> Self {
        CasePaths {
            id: id.into(),
            sa_image: dir.join(SA_IMG),
            sa_gt: dir.join(SA_GT),
            la_image: dir.join(LA_IMG),
            la_gt: dir.join(LA_GT),
        }
    }
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    Ok(serde_json::from_str(&text)?)
}

/// Loads every case listed in `dir/manifest.json`.
pub fn read_dataset(dir: &Path) -> Result<Vec<PhantomCase>> {
    let manifest = read_manifest(dir)?;
    manifest
        .cases
        .iter()
        .map(|e| {
            let p = CasePaths::in_dir(e.id.clone(), &dir.join(&e.dir));
            Ok(PhantomCase {
                id: e.id.clone(),
                params: e.params.clone(),
                sa_image: nifti_io::read_volume(&p.sa_image)?,
                sa_gt: nifti_io::read_labels(&p.sa_gt)?,
                la_image: nifti_io::read_volume(&p.la_image)?,
                la_gt: nifti_io::read_labels(&p.la_gt)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn labels_at_landmarks() {
        let p = PhantomParams::default();
        let frame = rotation_from_euler_deg(p.heart_rotation_deg);
        let c = Vector3::from(p.heart_center);
        assert_eq!(analytic_label(&p, &c), LV);
        assert_eq!(analytic_label(&p, &(c + Vector3::repeat(500.0))), BACKGROUND);
        let r = p.lv_radius + p.myo_thickness / 2.0;
        for axis in [Vector3::x(), -Vector3::x(), Vector3::y(), -Vector3::y()] {
            assert_eq!(analytic_label(&p, &(c + frame * axis * r)), MYO);
        }
        let along = p.lv_half_length + p.myo_thickness / 2.0;
        assert_eq!(analytic_label(&p, &(c + frame * Vector3::z() * along)), MYO);
        // Just outside the wall towards the RV.
        let rv = p.lv_radius + p.myo_thickness + 2.0;
        assert_eq!(analytic_label(&p, &(c + frame * Vector3::x() * rv)), RV);
    }

    #[test]
    fn rv_never_overlaps_lv() {
        let p = PhantomParams::default();
        let case = generate_case(&p).unwrap();
        let a = Anatomy::new(&p);
        for z in 0..case.sa_gt.dims()[2] {
            for y in 0..case.sa_gt.dims()[1] {
                for x in 0..case.sa_gt.dims()[0] {
                    let pt = case.sa_gt.voxel_center(x, y, z);
                    let l = a.local(&pt);
                    let lv = in_ellipsoid(&l, [0.0; 3], [p.lv_radius, p.lv_radius, p.lv_half_length]);
                    if lv {
                        assert_eq!(case.sa_gt.get(x, y, z), LV);
                    }
                }
            }
        }
    }

    #[test]
    fn gt_matches_analytic_label_at_voxel_centres() {
        let p = PhantomParams::default();
        let case = generate_case(&p).unwrap();
        for (gt, step) in [(&case.sa_gt, 5), (&case.la_gt, 3)] {
            let d = gt.dims();
            for z in (0..d[2]).step_by(2) {
                for y in (0..d[1]).step_by(step) {
                    for x in 0..d[0] {
                        assert_eq!(gt.get(x, y, z), analytic_label(&p, &gt.voxel_center(x, y, z)));
                    }
                }
            }
        }
    }

    #[test]
    fn noiseless_image_has_four_levels() {
        let mut p = PhantomParams::default();
        p.intensity.noise_sigma = 0.0;
        let case = generate_case(&p).unwrap();
        for img in [&case.sa_image, &case.la_image] {
            let levels: BTreeSet<u32> = img.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(levels.len(), 4);
        }
    }

    #[test]
    fn every_class_in_both_views() {
        let case = generate_case(&PhantomParams::default()).unwrap();
        for gt in [&case.sa_gt, &case.la_gt] {
            for c in FOREGROUND {
                assert!(gt.count(c) > 0);
            }
        }
        assert_eq!(case.la_gt.dims()[2], 1);
    }

    #[test]
    fn views_agree_where_grids_coincide() {
        // Unrotated, untilted heart: LA pixel centres fall exactly on SA voxel
        // centres in the SA row through the heart.
        let mut p = PhantomParams::default();
        p.heart_rotation_deg = [0.0; 3];
        p.heart_center = [0.0; 3];
        let case = generate_case(&p).unwrap();
        let mut compared = 0;
        for j in 0..case.la_gt.dims()[1] {
            for i in 0..case.la_gt.dims()[0] {
                let pt = case.la_gt.voxel_center(i, j, 0);
                let q = case.sa_gt.geometry().index_from_physical(&pt);
                let r = q.map(f64::round);
                if (q - r).norm() < 1e-9 {
                    if let Some(v) = case.sa_gt.get_signed(r.x as i64, r.y as i64, r.z as i64) {
                        assert_eq!(v, case.la_gt.get(i, j, 0));
                        compared += 1;
                    }
                }
            }
        }
        assert!(compared > 500, "only {compared} coincident samples");
    }

    #[test]
    fn invalid_params_rejected() {
        let mut p = PhantomParams::default();
        p.myo_thickness = 0.0;
        assert!(generate_case(&p).is_err());
        let mut p = PhantomParams::default();
        p.rv_offset = 100.0;
        assert!(generate_case(&p).is_err());
    }

    #[test]
    fn dataset_of_one_without_jitter_equals_single_case() {
        let base = PhantomParams::default();
        let ds = generate_dataset(1, &base, &JitterSpec::none(), 99).unwrap();
        let mut p = base.clone();
        p.seed = 99;
        assert_eq!(ds[0], generate_case(&p).unwrap());
    }

    #[test]
    fn dataset_is_deterministic() {
        let base = PhantomParams::default();
        let a = generate_dataset(3, &base, &JitterSpec::default(), 5).unwrap();
        let b = generate_dataset(3, &base, &JitterSpec::default(), 5).unwrap();
        assert_eq!(a, b);
        assert_ne!(a[0].params, a[1].params);
        assert!(generate_dataset(0, &base, &JitterSpec::default(), 5).is_err());
    }

    #[test]
    fn split_partitions_by_index() {
        let s = split(25, 20, 3);
        assert_eq!((s.train, s.val, s.test), (0..20, 20..23, 23..25));
        let s = split(5, 10, 3);
        assert_eq!((s.train, s.val, s.test), (0..5, 5..5, 5..5));
    }

    #[test]
    fn dataset_disk_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cases = generate_dataset(2, &PhantomParams::default(), &JitterSpec::default(), 3).unwrap();
        write_dataset(&cases, &JitterSpec::default(), 3, dir.path()).unwrap();
        assert!(dir.path().join("case001").join(LA_GT).exists());
        let back = read_dataset(dir.path()).unwrap();
        assert_eq!(back.len(), 2);
        for (a, b) in cases.iter().zip(&back) {
            assert_eq!(a.sa_gt.data(), b.sa_gt.data());
            assert_eq!(a.la_image.data(), b.la_image.data());
        }
    }
}
