//! Per-class Dice overlap and Hausdorff distance in millimetres.
//!
//! Surfaces are the class voxels with at least one face-adjacent neighbour
//! outside the class (6-connectivity; axes of length 1 are skipped, so
//! single-slice maps use 4-connectivity). Neighbours beyond the image edge
//! count as outside.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{ImageGeometry, Label, LabelMap, PhysicalPoint, FOREGROUND};

/// Which Hausdorff statistic to report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HdVariant {
    /// Maximum surface distance (HD100).
    #[default]
    Max,
    /// 95th percentile of the pooled directed surface distances.
    P95,
}

pub fn class_name(class: Label) -> &'static str {
    match class {
        0 => "BG",
        1 => "LV",
        2 => "MYO",
        3 => "RV",
        _ => "?",
    }
}

fn same_dims(a: &LabelMap, b: &LabelMap) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::DimsMismatch {
            left: a.dims(),
            right: b.dims(),
        });
    }
    Ok(())
}

/// `2|A∩B| / (|A| + |B|)` for `class`; 1 when the class is absent from both.
pub fn dice(a: &LabelMap, b: &LabelMap, class: Label) -> Result<f64> {
    same_dims(a, b)?;
    let (mut inter, mut na, mut nb) = (0usize, 0usize, 0usize);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let (ia, ib) = (x == class, y == class);
        na += ia as usize;
        nb += ib as usize;
        inter += (ia && ib) as usize;
    }
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (na + nb) as f64)
}

/// Surface voxels of `class` as integer indices.
pub fn surface_voxels(map: &LabelMap, class: Label) -> Vec<[usize; 3]> {
    let dims = map.dims();
    let mut out = Vec::new();
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                if map.get(x, y, z) != class {
                    continue;
                }
                let p = [x as i64, y as i64, z as i64];
                let on_surface = (0..3).filter(|&a| dims[a] > 1).any(|a| {
                    [-1i64, 1].iter().any(|&d| {
                        let mut q = p;
                        q[a] += d;
                        map.get_signed(q[0], q[1], q[2]) != Some(class)
                    })
                });
                if on_surface {
                    out.push([x, y, z]);
                }
            }
        }
    }
    out
}

fn to_physical(geom: &ImageGeometry, pts: &[[usize; 3]]) -> Vec<PhysicalPoint> {
    pts.iter()
        .map(|p| geom.physical_from_index(&PhysicalPoint::new(p[0] as f64, p[1] as f64, p[2] as f64)))
        .collect()
}

/// Largest distance from a point of `a` to its nearest point of `b`, using the
/// early-break scheme: once a point of `a` is known to be closer to `b` than
/// the running maximum, its scan stops.
fn directed_max(a: &[PhysicalPoint], b: &[PhysicalPoint]) -> f64 {
    let mut cmax = 0.0f64;
    for p in a {
        let mut cmin = f64::INFINITY;
        let mut dominated = false;
        for q in b {
            let d = (p - q).norm_squared();
            if d < cmax {
                dominated = true;
                break;
            }
            cmin = cmin.min(d);
        }
        if !dominated && cmin > cmax {
            cmax = cmin;
        }
    }
    cmax.sqrt()
}

fn directed_all(a: &[PhysicalPoint], b: &[PhysicalPoint], out: &mut Vec<f64>) {
    for p in a {
        let m = b
            .iter()
            .map(|q| (p - q).norm_squared())
            .fold(f64::INFINITY, f64::min);
        out.push(m.sqrt());
    }
}

/// Symmetric Hausdorff distance between the `class` surfaces of `a` and `b`,
/// measured in millimetres with `geom`.
pub fn hausdorff_mm(
    a: &LabelMap,
    b: &LabelMap,
    class: Label,
    geom: &ImageGeometry,
    variant: HdVariant,
) -> Result<f64> {
    same_dims(a, b)?;
    let sa = surface_voxels(a, class);
    let sb = surface_voxels(b, class);
    if sa.is_empty() || sb.is_empty() {
        return Err(Error::ClassAbsent(class));
    }
    let mut pa = to_physical(geom, &sa);
    let mut pb = to_physical(geom, &sb);
    match variant {
        HdVariant::Max => {
            // Random visiting order makes early breaks likely; fixed seed keeps
            // runs reproducible (the result is exact either way).
            let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
            pa.shuffle(&mut rng);
            pb.shuffle(&mut rng);
            Ok(directed_max(&pa, &pb).max(directed_max(&pb, &pa)))
        }
        HdVariant::P95 => {
            let mut d = Vec::with_capacity(pa.len() + pb.len());
            directed_all(&pa, &pb, &mut d);
            directed_all(&pb, &pa, &mut d);
            d.sort_by(f64::total_cmp);
            let rank = ((0.95 * d.len() as f64).ceil() as usize).clamp(1, d.len());
            Ok(d[rank - 1])
        }
    }
}

/// Scores for one class of one case. `None` marks an undefined value: Dice
/// when the class is absent from both maps, HD when absent from either.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub class: String,
    pub dice: Option<f64>,
    pub hd_mm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseReport {
    pub case_id: String,
    pub classes: Vec<ClassScore>,
}

impl CaseReport {
    pub fn class(&self, name: &str) -> Option<&ClassScore> {
        self.classes.iter().find(|c| c.class == name)
    }
}

/// Scores `pred` against `gt` for every foreground class, in `gt`'s geometry.
pub fn evaluate_case(
    case_id: impl Into<String>,
    pred: &LabelMap,
    gt: &LabelMap,
    variant: HdVariant,
) -> Result<CaseReport> {
    same_dims(pred, gt)?;
    let mut classes = Vec::with_capacity(FOREGROUND.len());
    for &class in &FOREGROUND {
        let in_pred = pred.data().contains(&class);
        let in_gt = gt.data().contains(&class);
        let dice = if in_pred || in_gt {
            Some(dice(pred, gt, class)?)
        } else {
            None
        };
        let hd_mm = if in_pred && in_gt {
            Some(hausdorff_mm(pred, gt, class, gt.geometry(), variant)?)
        } else {
            None
        };
        classes.push(ClassScore {
            class: class_name(class).to_string(),
            dice,
            hd_mm,
        });
    }
    Ok(CaseReport {
        case_id: case_id.into(),
        classes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSummary {
    pub class: String,
    pub mean_dice: Option<f64>,
    pub mean_hd_mm: Option<f64>,
    /// Reports contributing to each mean.
    pub n_dice: usize,
    pub n_hd: usize,
}

/// Means over cases. The overall means average the per-class means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub cases: usize,
    pub classes: Vec<ClassSummary>,
    pub mean_dice: Option<f64>,
    pub mean_hd_mm: Option<f64>,
}

fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

pub fn aggregate(reports: &[CaseReport]) -> Result<Summary> {
    let first = reports.first().ok_or(Error::EmptyReports)?;
    let names: Vec<String> = first.classes.iter().map(|c| c.class.clone()).collect();
    let mut classes = Vec::with_capacity(names.len());
    for name in &names {
        let dice: Vec<f64> = reports
            .iter()
            .filter_map(|r| r.class(name).and_then(|c| c.dice))
            .collect();
        let hd: Vec<f64> = reports
            .iter()
            .filter_map(|r| r.class(name).and_then(|c| c.hd_mm))
            .collect();
        classes.push(ClassSummary {
            class: name.clone(),
            mean_dice: mean(&dice),
            mean_hd_mm: mean(&hd),
            n_dice: dice.len(),
            n_hd: hd.len(),
        });
    }
    let md: Vec<f64> = classes.iter().filter_map(|c| c.mean_dice).collect();
    let mh: Vec<f64> = classes.iter().filter_map(|c| c.mean_hd_mm).collect();
    Ok(Summary {
        cases: reports.len(),
        mean_dice: mean(&md),
        mean_hd_mm: mean(&mh),
        classes,
    })
}

fn fmt_opt(v: Option<f64>, prec: usize) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.prec$}"))
}

impl Summary {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Aligned-column text table.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<6} {:>8} {:>10} {:>6}", "class", "dice", "hd_mm", "n");
        for c in &self.classes {
            let _ = writeln!(
                s,
                "{:<6} {:>8} {:>10} {:>6}",
                c.class,
                fmt_opt(c.mean_dice, 4),
                fmt_opt(c.mean_hd_mm, 3),
                c.n_dice
            );
        }
        let _ = writeln!(
            s,
            "{:<6} {:>8} {:>10} {:>6}",
            "mean",
            fmt_opt(self.mean_dice, 4),
            fmt_opt(self.mean_hd_mm, 3),
            self.cases
        );
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::rotation_from_euler_deg;
    use nalgebra::Vector3;
    use proptest::prelude::*;

    fn map(dims: [usize; 3], pts: &[([usize; 3], u8)]) -> LabelMap {
        let mut l = LabelMap::zeros(dims, ImageGeometry::identity()).unwrap();
        for (p, v) in pts {
            l.set(p[0], p[1], p[2], *v);
        }
        l
    }

    #[test]
    fn dice_cases() {
        let a = map([4, 4, 1], &[([0, 0, 0], 1), ([1, 0, 0], 1), ([2, 0, 0], 1), ([3, 0, 0], 1)]);
        assert_eq!(dice(&a, &a, 1).unwrap(), 1.0);
        let b = map([4, 4, 1], &[([0, 1, 0], 1), ([1, 1, 0], 1), ([2, 1, 0], 1), ([3, 1, 0], 1)]);
        assert_eq!(dice(&a, &b, 1).unwrap(), 0.0);
        let c = map([4, 4, 1], &[([0, 0, 0], 1), ([1, 0, 0], 1), ([0, 1, 0], 1), ([1, 1, 0], 1)]);
        assert_eq!(dice(&a, &c, 1).unwrap(), 0.5);
        assert_eq!(dice(&a, &c, 3).unwrap(), 1.0);
        let wrong = map([4, 4, 2], &[]);
        assert!(dice(&a, &wrong, 1).is_err());
    }

    #[test]
    fn hausdorff_single_voxels_with_spacing() {
        let g = ImageGeometry::new(Vector3::zeros(), Vector3::new(2.0, 1.0, 1.0), nalgebra::Matrix3::identity()).unwrap();
        let a = map([8, 3, 3], &[([1, 1, 1], 2)]).with_geometry(g.clone());
        let b = map([8, 3, 3], &[([4, 1, 1], 2)]).with_geometry(g.clone());
        assert_eq!(hausdorff_mm(&a, &b, 2, &g, HdVariant::Max).unwrap(), 6.0);
        assert_eq!(hausdorff_mm(&a, &a, 2, &g, HdVariant::Max).unwrap(), 0.0);
        assert!(matches!(
            hausdorff_mm(&a, &b, 3, &g, HdVariant::Max),
            Err(Error::ClassAbsent(3))
        ));
    }

    #[test]
    fn single_slice_uses_in_plane_neighbours() {
        // A filled 3×3 square on one slice: only the ring is surface.
        let mut pts = vec![];
        for y in 1..4 {
            for x in 1..4 {
                pts.push(([x, y, 0], 1));
            }
        }
        let l = map([5, 5, 1], &pts);
        let s = surface_voxels(&l, 1);
        assert_eq!(s.len(), 8);
        assert!(!s.contains(&[2, 2, 0]));
    }

    /// Brute-force reference: all surface pairs, no early exit.
    fn brute_hd(a: &LabelMap, b: &LabelMap, class: u8) -> f64 {
        let g = a.geometry();
        let pa = to_physical(g, &surface_voxels(a, class));
        let pb = to_physical(g, &surface_voxels(b, class));
        let dir = |x: &[PhysicalPoint], y: &[PhysicalPoint]| {
            x.iter()
                .map(|p| y.iter().map(|q| (p - q).norm()).fold(f64::INFINITY, f64::min))
                .fold(0.0, f64::max)
        };
        dir(&pa, &pb).max(dir(&pb, &pa))
    }

    proptest! {
        #[test]
        fn hausdorff_matches_all_pairs(
            la in prop::collection::vec(prop::sample::select(vec![0u8, 0, 0, 1, 2]), 7 * 6 * 5),
            lb in prop::collection::vec(prop::sample::select(vec![0u8, 0, 0, 1, 2]), 7 * 6 * 5),
            angles in prop::array::uniform3(-90.0f64..90.0),
            spacing in prop::array::uniform3(0.5f64..3.0),
        ) {
            let g = ImageGeometry::new(Vector3::new(1.0, 2.0, 3.0), spacing.into(), rotation_from_euler_deg(angles)).unwrap();
            let a = LabelMap::new([7, 6, 5], g.clone(), la).unwrap();
            let b = LabelMap::new([7, 6, 5], g.clone(), lb).unwrap();
            for class in [1u8, 2] {
                match hausdorff_mm(&a, &b, class, &g, HdVariant::Max) {
                    Ok(h) => prop_assert_eq!(h, brute_hd(&a, &b, class)),
                    Err(Error::ClassAbsent(_)) => {}
                    Err(e) => return Err(TestCaseError::fail(e.to_string())),
                }
                prop_assert_eq!(dice(&a, &b, class).unwrap(), dice(&b, &a, class).unwrap());
            }
        }

        #[test]
        fn hausdorff_ignores_other_classes(
            la in prop::collection::vec(0u8..4, 6 * 6 * 3),
            relabel in prop::collection::vec(prop::sample::select(vec![0u8, 2, 3]), 6 * 6 * 3),
        ) {
            let a = LabelMap::new([6, 6, 3], ImageGeometry::identity(), la).unwrap();
            // Replace every non-LV voxel with an arbitrary non-LV label.
            let b = LabelMap::new(
                [6, 6, 3],
                ImageGeometry::identity(),
                a.data().iter().zip(&relabel).map(|(&v, &r)| if v == 1 { 1 } else { r }).collect(),
            ).unwrap();
            if a.count(1) > 0 {
                let g = ImageGeometry::identity();
                prop_assert_eq!(hausdorff_mm(&a, &b, 1, &g, HdVariant::Max).unwrap(), 0.0);
                prop_assert_eq!(hausdorff_mm(&a, &a, 1, &g, HdVariant::P95).unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn p95_is_at_most_max() {
        let a = LabelMap::from_fn([12, 12, 1], ImageGeometry::identity(), |x, y, _| {
            ((x as i32 - 5).pow(2) + (y as i32 - 5).pow(2) < 16) as u8
        })
        .unwrap();
        let b = LabelMap::from_fn([12, 12, 1], ImageGeometry::identity(), |x, y, _| {
            ((x as i32 - 6).pow(2) + (y as i32 - 5).pow(2) < 20 || (x, y) == (11, 11)) as u8
        })
        .unwrap();
        let g = ImageGeometry::identity();
        let max = hausdorff_mm(&a, &b, 1, &g, HdVariant::Max).unwrap();
        let p95 = hausdorff_mm(&a, &b, 1, &g, HdVariant::P95).unwrap();
        assert!(p95 <= max);
        assert!(p95 < max, "outlier voxel should only affect HD100");
    }

    fn report(id: &str, lv: Option<f64>, rv: Option<f64>) -> CaseReport {
        CaseReport {
            case_id: id.into(),
            classes: vec![
                ClassScore { class: "LV".into(), dice: lv, hd_mm: lv.map(|d| 10.0 * (1.0 - d)) },
                ClassScore { class: "RV".into(), dice: rv, hd_mm: rv.map(|_| 2.0) },
            ],
        }
    }

    #[test]
    fn aggregate_rules() {
        assert!(matches!(aggregate(&[]), Err(Error::EmptyReports)));

        let one = aggregate(&[report("a", Some(0.8), Some(0.6))]).unwrap();
        assert_eq!(one.classes[0].mean_dice, Some(0.8));
        assert_eq!(one.classes[1].mean_dice, Some(0.6));

        let two = aggregate(&[report("a", Some(0.8), Some(0.5)), report("b", Some(1.0), None)]).unwrap();
        assert!((two.classes[0].mean_dice.unwrap() - 0.9).abs() < 1e-12);
        assert_eq!(two.classes[1].mean_dice, Some(0.5));
        assert_eq!(two.classes[1].n_dice, 1);
        assert!(two.mean_dice.unwrap().is_finite());
        assert!(two.to_table().contains("LV"));
        let json: Summary = serde_json::from_str(&two.to_json().unwrap()).unwrap();
        assert_eq!(json, two);
    }

    #[test]
    fn evaluate_marks_undefined() {
        let gt = map([5, 5, 1], &[([1, 1, 0], 1), ([3, 3, 0], 2)]);
        let pred = map([5, 5, 1], &[([1, 1, 0], 1)]);
        let r = evaluate_case("x", &pred, &gt, HdVariant::Max).unwrap();
        assert_eq!(r.class("LV").unwrap().dice, Some(1.0));
        assert_eq!(r.class("LV").unwrap().hd_mm, Some(0.0));
        assert_eq!(r.class("MYO").unwrap().dice, Some(0.0));
        assert_eq!(r.class("MYO").unwrap().hd_mm, None);
        assert_eq!(r.class("RV").unwrap().dice, None);
    }
}
