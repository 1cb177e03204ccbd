//! Independent reference implementations shared by integration tests.

#![allow(dead_code)]

use std::collections::HashSet;

use nalgebra::{Rotation3, Vector3};
use priormap::geometry::RigidPose;
use priormap::keyframe::{DistanceFilterMode, KeyframeRecord, SelectionConfig};
use rand::Rng;

/// One window-selection problem.
pub struct WindowInstance {
    pub reference: KeyframeRecord,
    pub candidates: Vec<KeyframeRecord>,
    pub cfg: SelectionConfig,
}

fn random_pose<R: Rng>(rng: &mut R) -> RigidPose {
    let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    let angle = rng.random_range(0.0..0.6);
    let rot = if axis.norm() > 1e-6 {
        Rotation3::new(axis.normalize() * angle)
    } else {
        Rotation3::identity()
    };
    let t = Vector3::new(rng.random_range(-0.6..0.6), rng.random_range(-0.3..0.3), rng.random_range(-0.6..0.6));
    RigidPose::new(*rot.matrix(), t).unwrap()
}

/// Up to 50 candidates with overlapping landmark sets, repeated poses and
/// repeated timestamps so that ties occur.
pub fn random_instance<R: Rng>(rng: &mut R) -> WindowInstance {
    let n = rng.random_range(0..=50usize);
    let landmarks = |rng: &mut R| -> HashSet<u64> {
        let lo = rng.random_range(0..40u64);
        let len = rng.random_range(0..40u64);
        (lo..lo + len).collect()
    };
    let mut poses: Vec<RigidPose> = Vec::with_capacity(n);
    let mut candidates = Vec::with_capacity(n);
    let mut t = 0.0;
    for id in 0..n as u64 {
        let pose = if !poses.is_empty() && rng.random_bool(0.2) {
            poses[rng.random_range(0..poses.len())]
        } else {
            random_pose(rng)
        };
        poses.push(pose);
        if rng.random_bool(0.7) {
            t += 0.1;
        }
        candidates.push(KeyframeRecord {
            id,
            pose,
            landmark_ids: landmarks(rng),
            timestamp: t,
        });
    }
    let reference = KeyframeRecord {
        id: 1000,
        pose: random_pose(rng),
        landmark_ids: landmarks(rng),
        timestamp: t + 0.1,
    };
    let alpha_far = rng.random_range(0.5..2.0);
    let cfg = SelectionConfig {
        p_th: rng.random_range(0.05..0.8),
        t_th: rng.random_range(0.05..0.5),
        alpha_near: alpha_far + rng.random_range(0.0..5.0),
        alpha_far,
        min_covisibility: rng.random_range(0..20),
        window_size: rng.random_range(2..=8),
        distance_filter_mode: if rng.random_bool(0.5) {
            DistanceFilterMode::MinSeparation
        } else {
            DistanceFilterMode::MaxDistance
        },
    };
    WindowInstance {
        reference,
        candidates,
        cfg,
    }
}

/// Filter every candidate, sort all survivors, keep the best. Ids of the
/// sources, or `None` when too few survive.
pub fn brute_force_window(inst: &WindowInstance) -> Option<Vec<u64>> {
    let cfg = &inst.cfg;
    let r = &inst.reference;
    let world_to_ref = r.pose.inverse();
    let mut survivors: Vec<(f64, f64, u64)> = Vec::new();
    for c in &inst.candidates {
        if c.id == r.id {
            continue;
        }
        let shared = r.landmark_ids.intersection(&c.landmark_ids).count();
        if shared < cfg.min_covisibility {
            continue;
        }
        let rel = world_to_ref.compose(&c.pose);
        let t = rel.translation.norm();
        let rot = (3.0 - rel.rotation.trace()).max(0.0);
        let dist = (t + 2.0 / 3.0 * rot).sqrt();
        let keep = match cfg.distance_filter_mode {
            DistanceFilterMode::MinSeparation => dist >= cfg.p_th,
            DistanceFilterMode::MaxDistance => dist <= cfg.p_th,
        };
        if !keep {
            continue;
        }
        let alpha = if t <= cfg.t_th { cfg.alpha_near } else { cfg.alpha_far };
        let penalty = alpha * (t - cfg.t_th).powi(2) + 2.0 / 3.0 * rot;
        survivors.push((penalty, c.timestamp, c.id));
    }
    let need = cfg.window_size - 1;
    if survivors.len() < need {
        return None;
    }
    survivors.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.total_cmp(&a.1)).then(a.2.cmp(&b.2)));
    Some(survivors.into_iter().take(need).map(|s| s.2).collect())
}
