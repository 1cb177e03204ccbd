use nalgebra::{Vector2, Vector3};
use rayon::prelude::*;

use super::TsdfVolume;
use crate::geometry::{CameraIntrinsics, DepthMap, RigidPose};

/// Ray parameter interval inside an axis-aligned box, for `origin + t * dir`.
fn slab(origin: &Vector3<f64>, dir: &Vector3<f64>, min: &Vector3<f64>, max: &Vector3<f64>) -> Option<(f64, f64)> {
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    for axis in 0..3 {
        if dir[axis] == 0.0 {
            if origin[axis] < min[axis] || origin[axis] > max[axis] {
                return None;
            }
            continue;
        }
        let a = (min[axis] - origin[axis]) / dir[axis];
        let b = (max[axis] - origin[axis]) / dir[axis];
        t0 = t0.max(a.min(b));
        t1 = t1.min(a.max(b));
    }
    (t0 <= t1).then_some((t0, t1))
}

/// Marches one unit-z ray and returns the depth of the first outside-to-inside crossing.
fn march(vol: &TsdfVolume, origin: &Vector3<f64>, dir: &Vector3<f64>, bounds: &(Vector3<f64>, Vector3<f64>)) -> Option<f64> {
    let (mut t, end) = slab(origin, dir, &bounds.0, &bounds.1)?;
    t = t.max(1e-3);
    let len = dir.norm();
    let vs = vol.config().voxel_size;
    let tau = vol.config().truncation;
    let fine = 0.5 * vs / len;
    let mut prev: Option<(f64, f64)> = None;
    while t <= end {
        let p = origin + dir * t;
        let block = vol.block_of_point(&p);
        if !vol.contains_block(block) {
            prev = None;
            let (lo, hi) = vol.block_bounds(block);
            let (_, exit) = slab(origin, dir, &lo, &hi)?;
            t = exit.max(t) + fine * 1e-3;
            continue;
        }
        match vol.sample(&p) {
            None => {
                prev = None;
                t += fine;
            }
            Some(s) => {
                if let Some((tp, sp)) = prev {
                    if sp > 0.0 && s <= 0.0 {
                        return Some(tp + (t - tp) * sp / (sp - s));
                    }
                }
                prev = Some((t, s));
                t += (0.5 * s * tau / len).max(fine);
            }
        }
    }
    None
}

/// Ray-cast depth of the fused surface; pixels without a crossing are invalid.
pub fn render_depth(vol: &TsdfVolume, pose: &RigidPose, intr: &CameraIntrinsics) -> DepthMap {
    let (w, h) = (intr.width, intr.height);
    let Some(bounds) = vol.allocated_bounds() else {
        return DepthMap::invalid(w, h);
    };
    let depths: Vec<f64> = (0..w * h)
        .into_par_iter()
        .map(|i| {
            let dir = pose.rotation * intr.ray(&Vector2::new((i % w) as f64, (i / w) as f64));
            march(vol, &pose.translation, &dir, &bounds).unwrap_or(0.0)
        })
        .collect();
    DepthMap::from_vec(w, h, depths).expect("dimensions match intrinsics")
}
