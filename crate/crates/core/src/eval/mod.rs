//! Depth-map and mesh reconstruction metrics.

mod kdtree;

pub use kdtree::KdTree;

use nalgebra::{Matrix3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fusion::TriangleMesh;
use crate::geometry::{CameraIntrinsics, DepthMap, RigidPose};

/// Default inlier threshold for precision and recall, in centimeters.
pub const DEFAULT_THRESHOLD_CM: f64 = 5.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("no pixel is valid in both maps")]
    NoOverlap,
    #[error("depth maps differ in size")]
    DimensionMismatch,
    #[error("mesh has no triangles")]
    EmptyMesh,
    #[error("point set is empty")]
    EmptySet,
    #[error("correspondences are degenerate (fewer than 3 or collinear)")]
    DegenerateConfiguration,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthMetrics {
    pub abs_diff: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    pub delta_105: f64,
    pub delta_125: f64,
}

/// Errors over pixels valid in both maps, optionally only where `gt <= max_depth`.
pub fn depth_metrics(pred: &DepthMap, gt: &DepthMap, max_depth: Option<f64>) -> Result<DepthMetrics, EvalError> {
    if pred.dims() != gt.dims() {
        return Err(EvalError::DimensionMismatch);
    }
    let mut n = 0usize;
    let (mut abs, mut sq_rel, mut sq) = (0.0, 0.0, 0.0);
    let (mut d105, mut d125) = (0usize, 0usize);
    for (p, g) in pred.as_slice().iter().zip(gt.as_slice()) {
        if *p <= 0.0 || *g <= 0.0 || max_depth.is_some_and(|m| *g > m) {
            continue;
        }
        let e = p - g;
        n += 1;
        abs += e.abs();
        sq_rel += e * e / g;
        sq += e * e;
        let ratio = (p / g).max(g / p);
        d105 += usize::from(ratio < 1.05);
        d125 += usize::from(ratio < 1.25);
    }
    if n == 0 {
        return Err(EvalError::NoOverlap);
    }
    let n_f = n as f64;
    Ok(DepthMetrics {
        abs_diff: abs / n_f,
        sq_rel: sq_rel / n_f,
        rmse: (sq / n_f).sqrt(),
        delta_105: 100.0 * d105 as f64 / n_f,
        delta_125: 100.0 * d125 as f64 / n_f,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeshMetrics {
    pub accuracy: f64,
    pub completeness: f64,
    pub chamfer: f64,
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
    pub threshold: f64,
}

fn to_vec3(v: [f32; 3]) -> Vector3<f64> {
    Vector3::new(v[0] as f64, v[1] as f64, v[2] as f64)
}

/// Area-weighted uniform samples on the mesh surface.
pub fn sample_mesh(mesh: &TriangleMesh, count: usize, seed: u64) -> Result<Vec<Vector3<f64>>, EvalError> {
    let corners: Vec<[Vector3<f64>; 3]> = mesh
        .triangles
        .iter()
        .map(|t| t.map(|i| to_vec3(mesh.vertices[i as usize])))
        .collect();
    let mut cumulative = Vec::with_capacity(corners.len());
    let mut total = 0.0;
    for [a, b, c] in &corners {
        total += 0.5 * (b - a).cross(&(c - a)).norm();
        cumulative.push(total);
    }
    if !(total > 0.0) {
        return Err(EvalError::EmptyMesh);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count)
        .map(|_| {
            let pick = rng.random::<f64>() * total;
            let i = cumulative.partition_point(|c| *c <= pick).min(corners.len() - 1);
            let (r1, r2): (f64, f64) = (rng.random(), rng.random());
            let s = r1.sqrt();
            let [a, b, c] = corners[i];
            a * (1.0 - s) + b * (s * (1.0 - r2)) + c * (s * r2)
        })
        .collect())
}

/// Nearest-neighbor distance from every query point to `targets`.
pub fn nearest_distances(queries: &[Vector3<f64>], targets: &KdTree) -> Vec<f64> {
    queries
        .par_iter()
        .map(|q| targets.nearest(q).map_or(f64::INFINITY, |(_, d)| d.sqrt()))
        .collect()
}

/// Point-to-point reconstruction metrics; points in meters, results in
/// centimeters and percent.
pub fn mesh_metrics(pred: &[Vector3<f64>], gt: &[Vector3<f64>], threshold_cm: f64) -> Result<MeshMetrics, EvalError> {
    if pred.is_empty() || gt.is_empty() {
        return Err(EvalError::EmptySet);
    }
    let to_gt = nearest_distances(pred, &KdTree::new(gt));
    let to_pred = nearest_distances(gt, &KdTree::new(pred));
    Ok(metrics_from_distances(&to_gt, &to_pred, threshold_cm))
}

/// Assembles metrics from pred-to-gt and gt-to-pred distances in meters.
pub fn metrics_from_distances(to_gt: &[f64], to_pred: &[f64], threshold_cm: f64) -> MeshMetrics {
    let mean_cm = |d: &[f64]| 100.0 * d.iter().sum::<f64>() / d.len() as f64;
    let within = |d: &[f64]| 100.0 * d.iter().filter(|v| 100.0 * **v < threshold_cm).count() as f64 / d.len() as f64;
    let accuracy = mean_cm(to_gt);
    let completeness = mean_cm(to_pred);
    let precision = within(to_gt);
    let recall = within(to_pred);
    let f_score = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    MeshMetrics {
        accuracy,
        completeness,
        chamfer: (accuracy + completeness) / 2.0,
        precision,
        recall,
        f_score,
        threshold: threshold_cm,
    }
}

/// Least-squares rigid transform taking `pred` onto `gt` over index pairs
/// `(pred_index, gt_index)`.
pub fn align_se3(pred: &[Vector3<f64>], gt: &[Vector3<f64>], correspondences: &[(usize, usize)]) -> Result<RigidPose, EvalError> {
    if correspondences.len() < 3 {
        return Err(EvalError::DegenerateConfiguration);
    }
    let pairs: Vec<(Vector3<f64>, Vector3<f64>)> = correspondences
        .iter()
        .map(|&(i, j)| (pred[i], gt[j]))
        .collect();
    let n = pairs.len() as f64;
    let mu_p = pairs.iter().map(|(p, _)| p).sum::<Vector3<f64>>() / n;
    let mu_g = pairs.iter().map(|(_, g)| g).sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    let mut spread_p = Matrix3::zeros();
    for (p, g) in &pairs {
        let (dp, dg) = (p - mu_p, g - mu_g);
        cov += dg * dp.transpose();
        spread_p += dp * dp.transpose();
    }
    let sv = spread_p.symmetric_eigenvalues();
    let mut sorted = [sv[0], sv[1], sv[2]];
    sorted.sort_by(f64::total_cmp);
    if !(sorted[1] > 1e-12 * sorted[2].max(f64::MIN_POSITIVE)) {
        return Err(EvalError::DegenerateConfiguration);
    }
    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
    let sign = (u * v_t).determinant().signum();
    let rotation = u * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, sign)) * v_t;
    Ok(RigidPose {
        rotation,
        translation: mu_g - rotation * mu_p,
    })
}

/// Keeps points that project inside at least one camera's image at depth in
/// `(0, max_depth]`.
pub fn prune_to_frustums(points: &[Vector3<f64>], poses: &[RigidPose], intr: &CameraIntrinsics, max_depth: f64) -> Vec<Vector3<f64>> {
    let cams: Vec<RigidPose> = poses.iter().map(RigidPose::inverse).collect();
    points
        .iter()
        .filter(|p| {
            cams.iter().any(|cam| {
                let c = cam.transform_point(p);
                if !(c.z > 0.0 && c.z <= max_depth) {
                    return false;
                }
                let px = Vector2::new(intr.fx * c.x / c.z + intr.cx, intr.fy * c.y / c.z + intr.cy);
                px.x >= -0.5 && px.y >= -0.5 && px.x < intr.width as f64 - 0.5 && px.y < intr.height as f64 - 0.5
            })
        })
        .copied()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn ramp(w: usize, h: usize) -> DepthMap {
        DepthMap::from_vec(w, h, (0..w * h).map(|i| 1.0 + 0.01 * i as f64).collect()).unwrap()
    }

    #[test]
    fn identical_maps_are_perfect() {
        let gt = ramp(6, 4);
        let m = depth_metrics(&gt, &gt, None).unwrap();
        assert_eq!((m.abs_diff, m.sq_rel, m.rmse), (0.0, 0.0, 0.0));
        assert_eq!((m.delta_105, m.delta_125), (100.0, 100.0));
    }

    #[test]
    fn scaled_prediction() {
        let gt = ramp(6, 4);
        let pred = DepthMap::from_vec(6, 4, gt.as_slice().iter().map(|g| 1.2 * g).collect()).unwrap();
        let m = depth_metrics(&pred, &gt, None).unwrap();
        assert_eq!(m.delta_125, 100.0);
        assert_eq!(m.delta_105, 0.0);
        let expected = gt.as_slice().iter().map(|g| 0.04 * g).sum::<f64>() / 24.0;
        assert!((m.sq_rel - expected).abs() < 1e-12);
    }

    #[test]
    fn max_depth_excludes_far_pixels() {
        let gt = DepthMap::from_vec(2, 1, vec![2.0, 4.0]).unwrap();
        let pred = DepthMap::from_vec(2, 1, vec![2.5, 1.0]).unwrap();
        let m = depth_metrics(&pred, &gt, Some(3.0)).unwrap();
        assert_eq!(m.abs_diff, 0.5);
        assert_eq!(depth_metrics(&pred, &gt, None).unwrap().abs_diff, 1.75);
    }

    #[test]
    fn no_overlap_is_an_error() {
        let gt = DepthMap::invalid(3, 3);
        assert_eq!(depth_metrics(&ramp(3, 3), &gt, None), Err(EvalError::NoOverlap));
        assert_eq!(depth_metrics(&ramp(3, 3), &ramp(2, 3), None), Err(EvalError::DimensionMismatch));
    }

    #[test]
    fn metrics_serialize_with_field_names() {
        let m = DepthMetrics {
            abs_diff: 0.1,
            sq_rel: 0.2,
            rmse: 0.3,
            delta_105: 50.0,
            delta_125: 90.0,
        };
        let v = serde_json::to_value(m).unwrap();
        for k in ["abs_diff", "sq_rel", "rmse", "delta_105", "delta_125"] {
            assert!(v.get(k).is_some(), "{k}");
        }
    }

    #[test]
    fn single_point_pair() {
        let m = mesh_metrics(&[Vector3::new(0.04, 0.0, 0.0)], &[Vector3::zeros()], DEFAULT_THRESHOLD_CM).unwrap();
        assert!((m.accuracy - 4.0).abs() < 1e-12);
        assert_eq!((m.precision, m.recall, m.f_score), (100.0, 100.0, 100.0));
    }

    #[test]
    fn empty_sets_are_rejected() {
        assert_eq!(mesh_metrics(&[], &[Vector3::zeros()], 5.0), Err(EvalError::EmptySet));
    }

    #[test]
    fn samples_stay_on_single_triangle() {
        let mesh = TriangleMesh {
            vertices: vec![[0.0, 0.0, 1.0], [1.0, 0.0, 1.0], [0.0, 1.0, 1.0]],
            triangles: vec![[0, 1, 2]],
            normals: None,
        };
        for p in sample_mesh(&mesh, 500, 3).unwrap() {
            assert!((p.z - 1.0).abs() < 1e-12);
            assert!(p.x >= 0.0 && p.y >= 0.0 && p.x + p.y <= 1.0 + 1e-12);
        }
        assert_eq!(sample_mesh(&TriangleMesh::default(), 10, 0), Err(EvalError::EmptyMesh));
    }

    #[test]
    fn samples_follow_area() {
        let mesh = TriangleMesh {
            vertices: vec![[0.0, 0.0, 0.0], [3.0, 0.0, 0.0], [0.0, 1.0, 0.0], [10.0, 0.0, 0.0], [11.0, 0.0, 0.0], [10.0, 1.0, 0.0]],
            triangles: vec![[0, 1, 2], [3, 4, 5]],
            normals: None,
        };
        let pts = sample_mesh(&mesh, 100_000, 11).unwrap();
        let first = pts.iter().filter(|p| p.x < 5.0).count() as f64;
        assert!((first - 75_000.0).abs() < 0.02 * 75_000.0, "{first}");
        assert_eq!(pts, sample_mesh(&mesh, 100_000, 11).unwrap());
    }

    #[test]
    fn alignment_recovers_constructed_transform() {
        let gt: Vec<Vector3<f64>> = vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, 2.0, 0.0),
            Vector3::new(0.3, 0.1, 1.5),
        ];
        let rot = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        let pred: Vec<Vector3<f64>> = gt.iter().map(|p| rot * p + Vector3::new(1.0, 0.0, 0.0)).collect();
        let pairs: Vec<(usize, usize)> = (0..4).map(|i| (i, i)).collect();
        let t = align_se3(&pred, &gt, &pairs).unwrap();
        assert!((t.rotation - rot.transpose()).norm() < 1e-9);
        for (p, g) in pred.iter().zip(&gt) {
            assert!((t.transform_point(p) - g).norm() < 1e-9);
        }
        let same = align_se3(&gt, &gt, &pairs).unwrap();
        assert!((same.rotation - Matrix3::identity()).norm() < 1e-12);
        assert!(same.translation.norm() < 1e-12);
    }

    #[test]
    fn collinear_points_are_degenerate() {
        let pts: Vec<Vector3<f64>> = (0..3).map(|i| Vector3::new(i as f64, 2.0 * i as f64, 0.0)).collect();
        let pairs = [(0, 0), (1, 1), (2, 2)];
        assert_eq!(align_se3(&pts, &pts, &pairs), Err(EvalError::DegenerateConfiguration));
        assert_eq!(align_se3(&pts, &pts, &pairs[..2]), Err(EvalError::DegenerateConfiguration));
    }

    #[test]
    fn frustum_pruning_keeps_visible_points() {
        let intr = CameraIntrinsics::centered(100.0, 64, 48);
        let pts = vec![Vector3::new(0.0, 0.0, 2.0), Vector3::new(0.0, 0.0, -2.0), Vector3::new(5.0, 0.0, 2.0), Vector3::new(0.0, 0.0, 9.0)];
        let kept = prune_to_frustums(&pts, &[RigidPose::identity()], &intr, 5.0);
        assert_eq!(kept, vec![pts[0]]);
    }

    fn cloud() -> impl Strategy<Value = Vec<Vector3<f64>>> {
        prop::collection::vec(prop::array::uniform3(-1.0f64..1.0), 1..60)
            .prop_map(|v| v.into_iter().map(Vector3::from).collect())
    }

    proptest! {
        #[test]
        fn self_comparison_is_perfect(a in cloud()) {
            let m = mesh_metrics(&a, &a, 5.0).unwrap();
            prop_assert_eq!((m.accuracy, m.completeness, m.chamfer), (0.0, 0.0, 0.0));
            prop_assert_eq!((m.precision, m.recall, m.f_score), (100.0, 100.0, 100.0));
        }

        #[test]
        fn swapping_sets_swaps_directions(a in cloud(), b in cloud()) {
            let ab = mesh_metrics(&a, &b, 5.0).unwrap();
            let ba = mesh_metrics(&b, &a, 5.0).unwrap();
            prop_assert_eq!(ab.accuracy, ba.completeness);
            prop_assert_eq!(ab.precision, ba.recall);
            prop_assert!((ab.chamfer - ba.chamfer).abs() < 1e-12);
            prop_assert!((ab.f_score - ba.f_score).abs() < 1e-12);
        }

        #[test]
        fn depth_metrics_scale(s in 0.1f64..10.0, seed in 0u64..100) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let gt: Vec<f64> = (0..30).map(|_| rng.random_range(0.5..5.0)).collect();
            let pred: Vec<f64> = gt.iter().map(|g| g * rng.random_range(0.8..1.2)).collect();
            let base = depth_metrics(&DepthMap::from_vec(6, 5, pred.clone()).unwrap(), &DepthMap::from_vec(6, 5, gt.clone()).unwrap(), None).unwrap();
            let scaled = depth_metrics(
                &DepthMap::from_vec(6, 5, pred.iter().map(|v| v * s).collect()).unwrap(),
                &DepthMap::from_vec(6, 5, gt.iter().map(|v| v * s).collect()).unwrap(),
                None,
            ).unwrap();
            prop_assert!((scaled.abs_diff - s * base.abs_diff).abs() < 1e-9 * s);
            prop_assert!((scaled.rmse - s * base.rmse).abs() < 1e-9 * s);
            prop_assert!((scaled.sq_rel - s * base.sq_rel).abs() < 1e-9 * s);
            prop_assert_eq!(scaled.delta_105, base.delta_105);
            prop_assert_eq!(scaled.delta_125, base.delta_125);
        }
    }
}
