//! Volumetric images with physical geometry.
//!
//! Memory layout is fixed for the whole workspace: voxel `(x, y, z)` lives at
//! `x + nx * (y + ny * z)`, i.e. x varies fastest.
//!
//! Voxel scalars are 32-bit; all geometry arithmetic is 64-bit.

use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Position in physical space, millimetres.
pub type PhysicalPoint = Vector3<f64>;
/// Position in voxel units; integer values are voxel centres.
pub type ContinuousIndex = Vector3<f64>;

pub type Label = u8;

pub const BACKGROUND: Label = 0;
pub const LV: Label = 1;
pub const MYO: Label = 2;
pub const RV: Label = 3;
pub const NUM_CLASSES: usize = 4;
/// Foreground classes in evaluation order.
pub const FOREGROUND: [Label; 3] = [LV, MYO, RV];

const ORTHO_TOL: f64 = 1e-6;

/// Origin, spacing and direction cosines of a voxel grid.
///
/// Column `i` of `direction` is the physical direction of voxel axis `i`, so
/// `p = origin + direction * (spacing ⊙ idx)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGeometry", into = "RawGeometry")]
pub struct ImageGeometry {
    origin: Vector3<f64>,
    spacing: Vector3<f64>,
    direction: Matrix3<f64>,
    index_to_physical: Matrix3<f64>,
    physical_to_index: Matrix3<f64>,
}

/// Plain serialised form: direction is written row by row.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawGeometry {
    pub origin: [f64; 3],
    pub spacing: [f64; 3],
    pub direction: [[f64; 3]; 3],
}

impl TryFrom<RawGeometry> for ImageGeometry {
    type Error = Error;

    fn try_from(raw: RawGeometry) -> Result<Self> {
        let d = raw.direction;
        let direction = Matrix3::new(
            d[0][0], d[0][1], d[0][2], d[1][0], d[1][1], d[1][2], d[2][0], d[2][1], d[2][2],
        );
        ImageGeometry::new(raw.origin.into(), raw.spacing.into(), direction)
    }
}

impl From<ImageGeometry> for RawGeometry {
    fn from(g: ImageGeometry) -> Self {
        let m = g.direction;
        RawGeometry {
            origin: g.origin.into(),
            spacing: g.spacing.into(),
            direction: [
                [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
                [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
                [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
            ],
        }
    }
}

impl ImageGeometry {
    pub fn new(
        origin: Vector3<f64>,
        spacing: Vector3<f64>,
        direction: Matrix3<f64>,
    ) -> Result<Self> {
        if !origin.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidGeometry(format!("non-finite origin {origin:?}")));
        }
        if !spacing.iter().all(|&s| s.is_finite() && s > 0.0) {
            return Err(Error::InvalidGeometry(format!(
                "spacing must be positive, got {:?}",
                spacing.as_slice()
            )));
        }
        if !direction.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidGeometry("non-finite direction".into()));
        }
        for i in 0..3 {
            let n = direction.column(i).norm();
            if (n - 1.0).abs() > ORTHO_TOL {
                return Err(Error::InvalidGeometry(format!(
                    "direction column {i} has norm {n}"
                )));
            }
            for j in (i + 1)..3 {
                let dot = direction.column(i).dot(&direction.column(j));
                if dot.abs() >= ORTHO_TOL {
                    return Err(Error::InvalidGeometry(format!(
                        "direction columns {i} and {j} not orthogonal (dot {dot})"
                    )));
                }
            }
        }
        let det = direction.determinant();
        if (det.abs() - 1.0).abs() > ORTHO_TOL {
            return Err(Error::InvalidGeometry(format!("|det(direction)| = {}", det.abs())));
        }
        let index_to_physical = direction * Matrix3::from_diagonal(&spacing);
        let physical_to_index = index_to_physical
            .try_inverse()
            .ok_or_else(|| Error::InvalidGeometry("singular index-to-physical map".into()))?;
        Ok(Self {
            origin,
            spacing,
            direction,
            index_to_physical,
            physical_to_index,
        })
    }

    pub fn identity() -> Self {
        Self::new(Vector3::zeros(), Vector3::repeat(1.0), Matrix3::identity())
            .expect("identity geometry is valid")
    }

    pub fn origin(&self) -> &Vector3<f64> {
        &self.origin
    }

    pub fn spacing(&self) -> &Vector3<f64> {
        &self.spacing
    }

    pub fn direction(&self) -> &Matrix3<f64> {
        &self.direction
    }

    /// `direction * diag(spacing)`.
    pub fn linear(&self) -> &Matrix3<f64> {
        &self.index_to_physical
    }

    pub fn with_origin(&self, origin: Vector3<f64>) -> Result<Self> {
        Self::new(origin, self.spacing, self.direction)
    }

    pub fn with_spacing(&self, spacing: Vector3<f64>) -> Result<Self> {
        Self::new(self.origin, spacing, self.direction)
    }

    /// Homogeneous 4×4 index-to-physical matrix.
    pub fn affine(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.index_to_physical);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.origin);
        m
    }

    pub fn physical_from_index(&self, idx: &ContinuousIndex) -> PhysicalPoint {
        self.origin + self.direction * self.spacing.component_mul(idx)
    }

    /// Inverse of [`physical_from_index`](Self::physical_from_index). Points
    /// outside the grid produce out-of-range indices; nothing is clamped.
    pub fn index_from_physical(&self, p: &PhysicalPoint) -> ContinuousIndex {
        self.physical_to_index * (p - self.origin)
    }
}

impl Default for ImageGeometry {
    fn default() -> Self {
        Self::identity()
    }
}

/// Scalar stored in an [`Image`].
pub trait Voxel: Copy + Default + PartialEq + Send + Sync + std::fmt::Debug + 'static {
    fn validate(self) -> Result<()>;

    /// Value at a continuous index. Indices past the edge are clamped onto it.
    fn interpolate(img: &Image<Self>, idx: &ContinuousIndex) -> Self;
}

impl Voxel for f32 {
    fn validate(self) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite)
        }
    }

    fn interpolate(img: &Image<f32>, idx: &ContinuousIndex) -> f32 {
        let [nx, ny, nz] = img.dims;
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        let mut frac = [0f64; 3];
        for a in 0..3 {
            let n = [nx, ny, nz][a];
            let c = idx[a].clamp(0.0, (n - 1) as f64);
            let f = c.floor();
            lo[a] = f as usize;
            hi[a] = (lo[a] + 1).min(n - 1);
            frac[a] = c - f;
        }
        let mut acc = 0.0f64;
        for corner in 0..8 {
            let mut w = 1.0;
            let mut ijk = [0usize; 3];
            for a in 0..3 {
                if corner >> a & 1 == 1 {
                    w *= frac[a];
                    ijk[a] = hi[a];
                } else {
                    w *= 1.0 - frac[a];
                    ijk[a] = lo[a];
                }
            }
            if w != 0.0 {
                acc += w * img.get(ijk[0], ijk[1], ijk[2]) as f64;
            }
        }
        acc as f32
    }
}

impl Voxel for u8 {
    fn validate(self) -> Result<()> {
        if (self as usize) < NUM_CLASSES {
            Ok(())
        } else {
            Err(Error::InvalidLabel(self))
        }
    }

    fn interpolate(img: &Image<u8>, idx: &ContinuousIndex) -> u8 {
        let mut ijk = [0usize; 3];
        for a in 0..3 {
            let n = img.dims[a];
            ijk[a] = idx[a].round().clamp(0.0, (n - 1) as f64) as usize;
        }
        img.get(ijk[0], ijk[1], ijk[2])
    }
}

/// A 3D grid of voxels with attached geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct Image<T> {
    dims: [usize; 3],
    geometry: ImageGeometry,
    data: Vec<T>,
}

/// Real-valued intensity image.
pub type Volume = Image<f32>;
/// Integer class labels in `{0 = background, 1 = LV, 2 = MYO, 3 = RV}`.
pub type LabelMap = Image<Label>;

fn check_dims(dims: [usize; 3]) -> Result<usize> {
    if dims.contains(&0) {
        return Err(Error::DegenerateGrid(format!("dims {dims:?} contain zero")));
    }
    Ok(dims.iter().product())
}

impl<T: Voxel> Image<T> {
    pub fn new(dims: [usize; 3], geometry: ImageGeometry, data: Vec<T>) -> Result<Self> {
        let n = check_dims(dims)?;
        if data.len() != n {
            return Err(Error::DataLength {
                len: data.len(),
                dims,
            });
        }
        for v in &data {
            v.validate()?;
        }
        Ok(Self {
            dims,
            geometry,
            data,
        })
    }

    pub fn filled(dims: [usize; 3], geometry: ImageGeometry, value: T) -> Result<Self> {
        let n = check_dims(dims)?;
        Self::new(dims, geometry, vec![value; n])
    }

    pub fn zeros(dims: [usize; 3], geometry: ImageGeometry) -> Result<Self> {
        Self::filled(dims, geometry, T::default())
    }

    /// Builds an image by evaluating `f(x, y, z)` at every voxel.
    pub fn from_fn(
        dims: [usize; 3],
        geometry: ImageGeometry,
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Result<Self> {
        let n = check_dims(dims)?;
        let mut data = Vec::with_capacity(n);
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    data.push(f(x, y, z));
                }
            }
        }
        Self::new(dims, geometry, data)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn geometry(&self) -> &ImageGeometry {
        &self.geometry
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn offset(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> T {
        self.data[self.offset(x, y, z)]
    }

    /// Voxel at signed coordinates, `None` outside the grid.
    pub fn get_signed(&self, x: i64, y: i64, z: i64) -> Option<T> {
        let [nx, ny, nz] = self.dims;
        if x < 0 || y < 0 || z < 0 || x >= nx as i64 || y >= ny as i64 || z >= nz as i64 {
            return None;
        }
        Some(self.get(x as usize, y as usize, z as usize))
    }

    pub fn set(&mut self, x: usize, y: usize, z: usize, value: T) {
        debug_assert!(value.validate().is_ok());
        let o = self.offset(x, y, z);
        self.data[o] = value;
    }

    /// Replaces the geometry, keeping voxel data untouched.
    pub fn with_geometry(mut self, geometry: ImageGeometry) -> Self {
        self.geometry = geometry;
        self
    }

    pub fn map<U: Voxel>(&self, f: impl Fn(T) -> U) -> Result<Image<U>> {
        Image::new(
            self.dims,
            self.geometry.clone(),
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }

    /// Physical position of the centre of voxel `(x, y, z)`.
    pub fn voxel_center(&self, x: usize, y: usize, z: usize) -> PhysicalPoint {
        self.geometry
            .physical_from_index(&Vector3::new(x as f64, y as f64, z as f64))
    }

    /// Grid with the same physical extent sampled at `target_spacing`.
    ///
    /// The origin and direction are kept; each axis gets
    /// `round(n * spacing / target)` samples. Intensities are trilinear,
    /// labels nearest-neighbour.
    pub fn resample_to_spacing(&self, target_spacing: Vector3<f64>) -> Result<Self> {
        if !target_spacing.iter().all(|&s| s.is_finite() && s > 0.0) {
            return Err(Error::InvalidGeometry(format!(
                "target spacing must be positive, got {:?}",
                target_spacing.as_slice()
            )));
        }
        let src = self.geometry.spacing();
        let mut dims = [0usize; 3];
        for a in 0..3 {
            let n = (self.dims[a] as f64 * src[a] / target_spacing[a]).round();
            if n < 1.0 {
                return Err(Error::DegenerateGrid(format!(
                    "axis {a} would have {n} samples at spacing {}",
                    target_spacing[a]
                )));
            }
            dims[a] = n as usize;
        }
        if dims == self.dims && target_spacing == *src {
            return Ok(self.clone());
        }
        let geometry = self.geometry.with_spacing(target_spacing)?;
        let scale = target_spacing.component_div(src);
        Image::from_fn(dims, geometry, |x, y, z| {
            let idx = Vector3::new(x as f64, y as f64, z as f64).component_mul(&scale);
            T::interpolate(self, &idx)
        })
    }
}

impl Image<Label> {
    /// Number of voxels carrying `class`.
    pub fn count(&self, class: Label) -> usize {
        self.data.iter().filter(|&&v| v == class).count()
    }

    pub fn has_foreground(&self) -> bool {
        self.data.iter().any(|&v| v != BACKGROUND)
    }
}

/// Nearest-neighbour label lookup. Rounds to the nearest voxel and returns
/// background for anything outside the grid.
pub fn nearest_label_sample(map: &LabelMap, idx: &ContinuousIndex) -> Label {
    let r = idx.map(|v| v.round());
    if !r.iter().all(|v| v.is_finite()) {
        return BACKGROUND;
    }
    map.get_signed(r[0] as i64, r[1] as i64, r[2] as i64)
        .unwrap_or(BACKGROUND)
}

/// Returns `dst` carrying `src`'s geometry. Voxel data of `dst` is not touched.
pub fn copy_geometry<S: Voxel, D: Voxel>(src: &Image<S>, dst: Image<D>) -> Result<Image<D>> {
    if src.dims() != dst.dims() {
        return Err(Error::DimsMismatch {
            left: src.dims(),
            right: dst.dims(),
        });
    }
    Ok(dst.with_geometry(src.geometry().clone()))
}

/// Rotation matrix from intrinsic Z-Y-X Euler angles in degrees.
pub fn rotation_from_euler_deg(angles: [f64; 3]) -> Matrix3<f64> {
    let [ax, ay, az] = angles.map(f64::to_radians);
    let rx = Matrix3::new(1.0, 0.0, 0.0, 0.0, ax.cos(), -ax.sin(), 0.0, ax.sin(), ax.cos());
    let ry = Matrix3::new(ay.cos(), 0.0, ay.sin(), 0.0, 1.0, 0.0, -ay.sin(), 0.0, ay.cos());
    let rz = Matrix3::new(az.cos(), -az.sin(), 0.0, az.sin(), az.cos(), 0.0, 0.0, 0.0, 1.0);
    rz * ry * rx
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn geom(origin: [f64; 3], spacing: [f64; 3], dir: Matrix3<f64>) -> ImageGeometry {
        ImageGeometry::new(origin.into(), spacing.into(), dir).unwrap()
    }

    #[test]
    fn identity_maps_index_to_same_point() {
        let g = ImageGeometry::identity();
        let p = g.physical_from_index(&Vector3::new(2.0, 3.0, 4.0));
        assert_eq!(p, Vector3::new(2.0, 3.0, 4.0));
        assert_eq!(g.index_from_physical(&p), Vector3::new(2.0, 3.0, 4.0));
    }

    #[test]
    fn origin_and_spacing_shift_points() {
        let g = geom([10.0, 0.0, 0.0], [2.0, 2.0, 2.0], Matrix3::identity());
        let p = g.physical_from_index(&Vector3::new(1.0, 1.0, 1.0));
        assert_eq!(p, Vector3::new(12.0, 2.0, 2.0));
    }

    #[test]
    fn matches_homogeneous_matrix() {
        let dir = rotation_from_euler_deg([17.0, -33.0, 71.0]);
        let g = geom([-4.0, 2.5, 100.0], [0.7, 1.3, 6.0], dir);
        let idx = Vector3::new(3.25, -1.5, 7.0);
        // Reference: assemble the 4×4 matrix by hand.
        let mut m = Matrix4::<f64>::identity();
        for r in 0..3 {
            for c in 0..3 {
                m[(r, c)] = dir[(r, c)] * g.spacing()[c];
            }
            m[(r, 3)] = g.origin()[r];
        }
        let h = m * nalgebra::Vector4::new(idx.x, idx.y, idx.z, 1.0);
        let p = g.physical_from_index(&idx);
        for r in 0..3 {
            assert_abs_diff_eq!(p[r], h[r], epsilon = 1e-12);
        }
    }

    #[test]
    fn rejects_bad_geometry() {
        assert!(ImageGeometry::new(Vector3::zeros(), Vector3::new(1.0, 0.0, 1.0), Matrix3::identity()).is_err());
        let skew = Matrix3::new(1.0, 0.1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(ImageGeometry::new(Vector3::zeros(), Vector3::repeat(1.0), skew).is_err());
        let scaled = Matrix3::identity() * 2.0;
        assert!(ImageGeometry::new(Vector3::zeros(), Vector3::repeat(1.0), scaled).is_err());
    }

    #[test]
    fn out_of_grid_indices_are_not_clamped() {
        let g = geom([0.0; 3], [2.0; 3], Matrix3::identity());
        let idx = g.index_from_physical(&Vector3::new(-10.0, 500.0, 1.0));
        assert_abs_diff_eq!(idx.x, -5.0);
        assert_abs_diff_eq!(idx.y, 250.0);
        assert_abs_diff_eq!(idx.z, 0.5);
    }

    #[test]
    fn nearest_label_sampling() {
        let mut l = LabelMap::zeros([3, 3, 1], ImageGeometry::identity()).unwrap();
        l.set(1, 1, 0, 3);
        l.set(0, 0, 0, 1);
        l.set(1, 0, 0, 2);
        assert_eq!(nearest_label_sample(&l, &Vector3::new(1.0, 1.0, 0.0)), 3);
        assert_eq!(nearest_label_sample(&l, &Vector3::new(-0.6, 0.0, 0.0)), 0);
        assert_eq!(nearest_label_sample(&l, &Vector3::new(0.49, 0.0, 0.0)), 1);
        assert_eq!(nearest_label_sample(&l, &Vector3::new(0.51, 0.0, 0.0)), 2);
        assert_eq!(nearest_label_sample(&l, &Vector3::new(0.0, 0.0, 0.6)), 0);
    }

    #[test]
    fn label_map_rejects_invalid_labels() {
        let err = LabelMap::new([2, 1, 1], ImageGeometry::identity(), vec![0, 4]).unwrap_err();
        assert!(matches!(err, Error::InvalidLabel(4)));
    }

    #[test]
    fn resample_identity() {
        let v = Volume::from_fn([4, 5, 3], ImageGeometry::identity(), |x, y, z| {
            (x * 100 + y * 10 + z) as f32
        })
        .unwrap();
        let r = v.resample_to_spacing(Vector3::repeat(1.0)).unwrap();
        assert_eq!(r, v);
    }

    #[test]
    fn resample_constant_stays_constant() {
        let g = geom([1.0, 2.0, 3.0], [1.5, 0.8, 7.0], rotation_from_euler_deg([5.0, 10.0, 20.0]));
        let v = Volume::filled([7, 9, 4], g, 3.25).unwrap();
        for target in [[1.0, 1.0, 1.0], [2.0, 0.5, 3.3], [0.3, 4.0, 1.0]] {
            let r = v.resample_to_spacing(target.into()).unwrap();
            assert!(r.data().iter().all(|&x| (x - 3.25).abs() < 1e-6));
        }
    }

    #[test]
    fn resample_downsampled_ramp_matches_analytic_ramp() {
        let g = geom([0.0; 3], [1.0; 3], Matrix3::identity());
        let ramp = |p: &PhysicalPoint| 2.0 * p.x - 0.5 * p.y + 3.0 * p.z + 1.0;
        let v = Volume::from_fn([16, 12, 8], g, |x, y, z| {
            ramp(&Vector3::new(x as f64, y as f64, z as f64)) as f32
        })
        .unwrap();
        let r = v.resample_to_spacing(Vector3::repeat(2.0)).unwrap();
        assert_eq!(r.dims(), [8, 6, 4]);
        for z in 0..4 {
            for y in 0..6 {
                for x in 0..8 {
                    let expected = ramp(&r.voxel_center(x, y, z));
                    assert_abs_diff_eq!(r.get(x, y, z) as f64, expected, epsilon = 1e-4);
                }
            }
        }
    }

    #[test]
    fn resample_non_integer_ramp() {
        let g = geom([0.0; 3], [1.0; 3], Matrix3::identity());
        let v = Volume::from_fn([20, 4, 4], g, |x, _, _| x as f32).unwrap();
        let r = v.resample_to_spacing(Vector3::new(1.5, 1.0, 1.0)).unwrap();
        assert_eq!(r.dims(), [13, 4, 4]);
        for x in 0..13 {
            let expected = (1.5 * x as f64).min(19.0);
            assert_abs_diff_eq!(r.get(x, 0, 0) as f64, expected, epsilon = 1e-5);
        }
    }

    #[test]
    fn resample_rejects_degenerate_extent() {
        let v = Volume::zeros([2, 2, 2], ImageGeometry::identity()).unwrap();
        assert!(v.resample_to_spacing(Vector3::new(10.0, 1.0, 1.0)).is_err());
        assert!(v.resample_to_spacing(Vector3::new(0.0, 1.0, 1.0)).is_err());
    }

    #[test]
    fn label_upsample_then_downsample_is_lossless() {
        let g = geom([3.0, -1.0, 0.0], [2.0, 2.0, 4.0], Matrix3::identity());
        let l = LabelMap::from_fn([5, 6, 3], g.clone(), |x, y, z| ((x + 2 * y + z) % 4) as u8).unwrap();
        let up = l.resample_to_spacing(Vector3::repeat(1.0)).unwrap();
        let down = up.resample_to_spacing(*g.spacing()).unwrap();
        assert_eq!(down, l);
    }

    #[test]
    fn copy_geometry_keeps_data() {
        let src = Volume::zeros([2, 2, 2], ImageGeometry::identity().with_origin(Vector3::repeat(5.0)).unwrap()).unwrap();
        let dst = LabelMap::from_fn([2, 2, 2], ImageGeometry::identity(), |x, _, _| x as u8).unwrap();
        let out = copy_geometry(&src, dst.clone()).unwrap();
        assert_eq!(out.geometry().origin(), &Vector3::repeat(5.0));
        assert_eq!(out.data(), dst.data());
        assert_eq!(copy_geometry(&dst, dst.clone()).unwrap(), dst);
        let other = Volume::zeros([2, 2, 3], ImageGeometry::identity()).unwrap();
        assert!(matches!(copy_geometry(&other, dst), Err(Error::DimsMismatch { .. })));
    }

    pub(crate) fn arb_geometry() -> impl Strategy<Value = ImageGeometry> {
        (
            prop::array::uniform3(-200.0f64..200.0),
            prop::array::uniform3(0.2f64..10.0),
            prop::array::uniform3(-180.0f64..180.0),
            any::<bool>(),
        )
            .prop_map(|(o, s, e, flip)| {
                let mut d = rotation_from_euler_deg(e);
                if flip {
                    d.column_mut(2).neg_mut();
                }
                geom(o, s, d)
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn physical_index_round_trip(
            g in arb_geometry(),
            idx in prop::array::uniform3(-50.0f64..300.0),
        ) {
            let i = Vector3::from(idx);
            let back = g.index_from_physical(&g.physical_from_index(&i));
            for a in 0..3 {
                prop_assert!((back[a] - i[a]).abs() < 1e-9);
            }
        }
    }

    proptest! {
        #[test]
        fn label_resampling_invents_no_labels(
            labels in prop::collection::vec(0u8..4, 4 * 5 * 3),
            target in prop::array::uniform3(0.4f64..3.0),
        ) {
            let l = LabelMap::new([4, 5, 3], ImageGeometry::identity(), labels).unwrap();
            let r = l.resample_to_spacing(target.into()).unwrap();
            let src: std::collections::BTreeSet<_> = l.data().iter().copied().collect();
            prop_assert!(r.data().iter().all(|v| src.contains(v)));
        }
    }
}
