use nalgebra::{Rotation3, Vector3};
use priormap::eval::*;
use priormap::fusion::{extract_mesh, FusionConfig, TsdfVolume};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sphere_points(count: usize, radius: f64, seed: u64) -> Vec<Vector3<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| loop {
            let v = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let n = v.norm();
            if n > 1e-3 && n <= 1.0 {
                break v / n * radius;
            }
        })
        .collect()
}

fn sphere_mesh() -> priormap::fusion::TriangleMesh {
    let mut vol = TsdfVolume::new(FusionConfig::default()).unwrap();
    let r = Vector3::repeat(0.7);
    vol.fill_analytic(&-r, &r, |p| p.norm() - 0.5);
    extract_mesh(&vol)
}

#[test]
fn extracted_sphere_scores_against_analytic_samples() {
    let pred = sample_mesh(&sphere_mesh(), 20_000, 1).unwrap();
    let gt = sphere_points(20_000, 0.5, 2);
    let m = mesh_metrics(&pred, &gt, DEFAULT_THRESHOLD_CM).unwrap();
    assert!(m.accuracy < 1.0, "{m:?}");
    assert!(m.completeness < 1.0, "{m:?}");
    assert_eq!(m.threshold, 5.0);
    assert!(m.f_score > 99.0, "{m:?}");
}

#[test]
fn shifted_mesh_is_penalized_and_alignment_undoes_it() {
    let gt = sample_mesh(&sphere_mesh(), 5_000, 3).unwrap();
    let rot = Rotation3::from_euler_angles(0.1, -0.2, 0.3);
    let offset = Vector3::new(0.2, 0.0, -0.1);
    let moved: Vec<Vector3<f64>> = gt.iter().map(|p| rot * p + offset).collect();
    let before = mesh_metrics(&moved, &gt, DEFAULT_THRESHOLD_CM).unwrap();
    assert!(before.chamfer > 5.0, "{before:?}");
    let pairs: Vec<(usize, usize)> = (0..gt.len()).map(|i| (i, i)).collect();
    let t = align_se3(&moved, &gt, &pairs).unwrap();
    let aligned: Vec<Vector3<f64>> = moved.iter().map(|p| t.transform_point(p)).collect();
    let after = mesh_metrics(&aligned, &gt, DEFAULT_THRESHOLD_CM).unwrap();
    assert!(after.chamfer < 1e-6, "{after:?}");
}

#[test]
fn metrics_json_uses_field_names() {
    let m = mesh_metrics(&[Vector3::zeros()], &[Vector3::new(0.0, 0.1, 0.0)], 5.0).unwrap();
    let v = serde_json::to_value(m).unwrap();
    for k in ["accuracy", "completeness", "chamfer", "precision", "recall", "f_score", "threshold"] {
        assert!(v.get(k).is_some(), "{k}");
    }
    assert_eq!(v["f_score"], 0.0);
}
