//! Cross-view projection of segmentations between short-axis and long-axis
//! grids using only the header affines.
//!
//! For every voxel `p` of the target grid the physical point is mapped into
//! the source grid, giving a continuous index `q`, and the output takes the
//! nearest source label at `q`. Target voxels that land outside the source
//! grid stay background. Each output voxel is written exactly once, so the
//! result does not depend on visitation order.

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::volume::{
    copy_geometry, nearest_label_sample, Image, ImageGeometry, LabelMap, Voxel, Volume,
};

/// A segmentation and the grid it should be projected onto.
#[derive(Debug, Clone, Copy)]
pub struct ProjectionSpec<'a> {
    pub source: &'a LabelMap,
    pub target_geometry: &'a ImageGeometry,
    pub target_dims: [usize; 3],
}

impl<'a> ProjectionSpec<'a> {
    /// Projection onto the grid of `target`.
    pub fn onto<T: Voxel>(source: &'a LabelMap, target: &'a Image<T>) -> Self {
        ProjectionSpec {
            source,
            target_geometry: target.geometry(),
            target_dims: target.dims(),
        }
    }
}

pub fn project_segmentation(spec: &ProjectionSpec<'_>) -> Result<LabelMap> {
    let src = spec.source;
    let src_geom = src.geometry();
    let tgt = spec.target_geometry;
    LabelMap::from_fn(spec.target_dims, tgt.clone(), |x, y, z| {
        let p = tgt.physical_from_index(&Vector3::new(x as f64, y as f64, z as f64));
        let q = src_geom.index_from_physical(&p);
        nearest_label_sample(src, &q)
    })
}

fn require_same_dims(seg: [usize; 3], img: [usize; 3]) -> Result<()> {
    if seg != img {
        return Err(Error::DimsMismatch {
            left: seg,
            right: img,
        });
    }
    Ok(())
}

/// SA2LAmap: the short-axis segmentation seen from the long-axis grid.
///
/// `s_sa1` first inherits the geometry of `i_sa`, since a network prediction
/// carries no trustworthy header of its own.
pub fn sa_to_la_map(s_sa1: &LabelMap, i_sa: &Volume, i_la: &Volume) -> Result<LabelMap> {
    require_same_dims(s_sa1.dims(), i_sa.dims())?;
    let seg = copy_geometry(i_sa, s_sa1.clone())?;
    project_segmentation(&ProjectionSpec::onto(&seg, i_la))
}

/// LA2SAmap: the long-axis segmentation seen from the short-axis grid. Only
/// short-axis voxels whose centres round onto the long-axis slab are labelled.
pub fn la_to_sa_map(s_la: &LabelMap, i_la: &Volume, i_sa: &Volume) -> Result<LabelMap> {
    require_same_dims(s_la.dims(), i_la.dims())?;
    let seg = copy_geometry(i_la, s_la.clone())?;
    project_segmentation(&ProjectionSpec::onto(&seg, i_sa))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::rotation_from_euler_deg;
    use nalgebra::Matrix3;

    #[test]
    fn identity_projection() {
        let g = ImageGeometry::new(
            Vector3::new(3.0, -2.0, 1.0),
            Vector3::new(1.5, 1.0, 4.0),
            rotation_from_euler_deg([10.0, 20.0, 30.0]),
        )
        .unwrap();
        let src = LabelMap::from_fn([6, 5, 4], g, |x, y, z| ((x * 7 + y * 3 + z) % 4) as u8).unwrap();
        let out = project_segmentation(&ProjectionSpec::onto(&src, &src)).unwrap();
        assert_eq!(out, src);
    }

    #[test]
    fn disjoint_target_is_empty() {
        let src = LabelMap::filled([4, 4, 4], ImageGeometry::identity(), 2).unwrap();
        let far = ImageGeometry::identity()
            .with_origin(Vector3::new(1000.0, 0.0, 0.0))
            .unwrap();
        let out = project_segmentation(&ProjectionSpec {
            source: &src,
            target_geometry: &far,
            target_dims: [5, 5, 1],
        })
        .unwrap();
        assert!(!out.has_foreground());
        assert_eq!(out.geometry(), &far);
    }

    /// SA stack of 5 slices along z; LA plane is the x-z plane through y = 2,
    /// i.e. it coincides with SA row y = 2.
    fn orthogonal_pair() -> (Volume, Volume) {
        let i_sa = Volume::zeros([5, 5, 5], ImageGeometry::identity()).unwrap();
        // LA axes: index x -> physical x, index y -> physical z, normal -> -y.
        let dir = Matrix3::new(1.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0);
        let la_geom = ImageGeometry::new(Vector3::new(0.0, 2.0, 0.0), Vector3::repeat(1.0), dir).unwrap();
        let i_la = Volume::zeros([5, 5, 1], la_geom).unwrap();
        (i_sa, i_la)
    }

    #[test]
    fn sa_voxel_on_la_plane_lands_on_colocated_pixel() {
        let (i_sa, i_la) = orthogonal_pair();
        let mut s = LabelMap::zeros([5, 5, 5], ImageGeometry::identity()).unwrap();
        s.set(3, 2, 1, 3);
        s.set(3, 3, 1, 1); // off the plane, must not appear
        let m = sa_to_la_map(&s, &i_sa, &i_la).unwrap();
        assert_eq!(m.dims(), [5, 5, 1]);
        // physical (3, 2, 1) -> LA index (3, 1, 0)
        assert_eq!(m.get(3, 1, 0), 3);
        assert_eq!(m.count(3), 1);
        assert_eq!(m.count(1), 0);
    }

    #[test]
    fn la_pixel_projects_to_half_voxel_slab() {
        let (_, i_la) = orthogonal_pair();
        // SA with 0.5 mm spacing in y so the slab spans several SA rows.
        let sa_geom = ImageGeometry::new(Vector3::zeros(), Vector3::new(1.0, 0.4, 1.0), Matrix3::identity()).unwrap();
        let i_sa = Volume::zeros([5, 11, 5], sa_geom).unwrap();
        let mut s_la = LabelMap::zeros([5, 5, 1], i_la.geometry().clone()).unwrap();
        s_la.set(2, 3, 0, 2);
        let m = la_to_sa_map(&s_la, &i_la, &i_sa).unwrap();
        // LA pixel (2, 3) sits at physical (2, 2, 3). An SA voxel maps onto it
        // when its x rounds to 2, its z rounds to 3 and |y - 2| <= 0.5 (LA
        // slab half-thickness), i.e. SA rows y_idx with |0.4 y_idx - 2| <= 0.5.
        let mut expected = 0;
        for yi in 0..11 {
            let y = 0.4 * yi as f64;
            if (y - 2.0).abs() < 0.5 {
                expected += 1;
                assert_eq!(m.get(2, yi, 3), 2, "row {yi}");
            } else {
                assert_eq!(m.get(2, yi, 3), 0, "row {yi}");
            }
        }
        assert_eq!(m.count(2), expected);
        assert_eq!(expected, 3);
    }

    #[test]
    fn empty_inputs_give_empty_maps() {
        let (i_sa, i_la) = orthogonal_pair();
        let s = LabelMap::zeros([5, 5, 5], ImageGeometry::identity()).unwrap();
        assert!(!sa_to_la_map(&s, &i_sa, &i_la).unwrap().has_foreground());
        let s = LabelMap::zeros([5, 5, 1], ImageGeometry::identity()).unwrap();
        assert!(!la_to_sa_map(&s, &i_la, &i_sa).unwrap().has_foreground());
    }

    #[test]
    fn dims_mismatch_rejected() {
        let (i_sa, i_la) = orthogonal_pair();
        let s = LabelMap::zeros([5, 5, 4], ImageGeometry::identity()).unwrap();
        assert!(matches!(sa_to_la_map(&s, &i_sa, &i_la), Err(Error::DimsMismatch { .. })));
        assert!(matches!(la_to_sa_map(&s, &i_la, &i_sa), Err(Error::DimsMismatch { .. })));
    }

    #[test]
    fn prediction_geometry_is_replaced_by_image_geometry() {
        let (i_sa, i_la) = orthogonal_pair();
        // A prediction carrying a bogus header must still project correctly.
        let bogus = ImageGeometry::identity().with_origin(Vector3::repeat(500.0)).unwrap();
        let mut s = LabelMap::zeros([5, 5, 5], bogus).unwrap();
        s.set(1, 2, 4, 1);
        let m = sa_to_la_map(&s, &i_sa, &i_la).unwrap();
        assert_eq!(m.get(1, 4, 0), 1);
    }
}
