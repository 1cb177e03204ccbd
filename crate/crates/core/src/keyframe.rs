//! MVS window selection: covisibility and pose-distance filtering, then
//! ranking by the translation/rotation penalty.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{relative_pose, GeometryError, RigidPose};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KeyframeError {
    #[error("only {available} candidate keyframes survive filtering, {needed} needed")]
    InsufficientKeyframes { needed: usize, available: usize },
    #[error("invalid selection config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct KeyframeRecord {
    pub id: u64,
    /// World-from-camera.
    pub pose: RigidPose,
    pub landmark_ids: HashSet<u64>,
    pub timestamp: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DistanceFilterMode {
    /// Drop candidates closer than `p_th`.
    #[default]
    MinSeparation,
    /// Drop candidates farther than `p_th`.
    MaxDistance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionConfig {
    pub p_th: f64,
    pub t_th: f64,
    pub alpha_near: f64,
    pub alpha_far: f64,
    pub min_covisibility: usize,
    pub window_size: usize,
    pub distance_filter_mode: DistanceFilterMode,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            p_th: 0.20,
            t_th: 0.25,
            alpha_near: 5.0,
            alpha_far: 1.0,
            min_covisibility: 15,
            window_size: 8,
            distance_filter_mode: DistanceFilterMode::MinSeparation,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<(), KeyframeError> {
        if self.window_size < 2 {
            return Err(KeyframeError::InvalidConfig("window_size must be >= 2".into()));
        }
        if !(self.p_th > 0.0) || !(self.t_th > 0.0) {
            return Err(KeyframeError::InvalidConfig("p_th and t_th must be positive".into()));
        }
        if !(self.alpha_far > 0.0) || self.alpha_near < self.alpha_far {
            return Err(KeyframeError::InvalidConfig(
                "need alpha_near >= alpha_far > 0".into(),
            ));
        }
        Ok(())
    }
}

/// `tr(I - R)`, clamped at zero against rounding.
fn rotation_term(rel: &RigidPose) -> f64 {
    (3.0 - rel.rotation.trace()).max(0.0)
}

/// `sqrt(|t| + 2/3 tr(I - R))` for a relative pose.
pub fn pose_distance(rel: &RigidPose) -> f64 {
    (rel.translation.norm() + 2.0 / 3.0 * rotation_term(rel)).sqrt()
}

pub fn penalty(rel: &RigidPose, cfg: &SelectionConfig) -> f64 {
    let t = rel.translation.norm();
    let alpha = if t <= cfg.t_th {
        cfg.alpha_near
    } else {
        cfg.alpha_far
    };
    alpha * (t - cfg.t_th).powi(2) + 2.0 / 3.0 * rotation_term(rel)
}

pub fn covisibility(a: &KeyframeRecord, b: &KeyframeRecord) -> usize {
    let (small, large) = if a.landmark_ids.len() <= b.landmark_ids.len() {
        (&a.landmark_ids, &b.landmark_ids)
    } else {
        (&b.landmark_ids, &a.landmark_ids)
    };
    small.iter().filter(|id| large.contains(id)).count()
}

/// Whether `candidate` passes the covisibility and distance filters against `reference`.
pub fn passes_filters(
    reference: &KeyframeRecord,
    candidate: &KeyframeRecord,
    cfg: &SelectionConfig,
) -> Result<bool, KeyframeError> {
    if covisibility(reference, candidate) < cfg.min_covisibility {
        return Ok(false);
    }
    let dist = pose_distance(&relative_pose(&reference.pose, &candidate.pose)?);
    Ok(match cfg.distance_filter_mode {
        DistanceFilterMode::MinSeparation => dist >= cfg.p_th,
        DistanceFilterMode::MaxDistance => dist <= cfg.p_th,
    })
}

/// Ordering key: lower penalty first, then more recent, then smaller id.
#[derive(Debug, Clone, Copy)]
struct RankKey {
    penalty: f64,
    timestamp: f64,
    id: u64,
    index: usize,
}

impl Ord for RankKey {
    fn cmp(&self, other: &Self) -> Ordering {
        self.penalty
            .total_cmp(&other.penalty)
            .then_with(|| other.timestamp.total_cmp(&self.timestamp))
            .then_with(|| self.id.cmp(&other.id))
    }
}

impl PartialOrd for RankKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for RankKey {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for RankKey {}

/// Picks the reference plus its `window_size - 1` best-ranked sources.
///
/// The returned window starts with `reference`.
pub fn select_window<'a>(
    reference: &'a KeyframeRecord,
    candidates: &'a [KeyframeRecord],
    cfg: &SelectionConfig,
) -> Result<Vec<&'a KeyframeRecord>, KeyframeError> {
    cfg.validate()?;
    let sources = cfg.window_size - 1;
    // max-heap holding the `sources` best keys seen so far
    let mut best: BinaryHeap<RankKey> = BinaryHeap::with_capacity(sources + 1);
    let mut survivors = 0usize;
    for (index, cand) in candidates.iter().enumerate() {
        if cand.id == reference.id || !passes_filters(reference, cand, cfg)? {
            continue;
        }
        survivors += 1;
        let rel = relative_pose(&reference.pose, &cand.pose)?;
        best.push(RankKey {
            penalty: penalty(&rel, cfg),
            timestamp: cand.timestamp,
            id: cand.id,
            index,
        });
        if best.len() > sources {
            best.pop();
        }
    }
    if survivors < sources {
        return Err(KeyframeError::InsufficientKeyframes {
            needed: sources,
            available: survivors,
        });
    }
    let mut window = Vec::with_capacity(cfg.window_size);
    window.push(reference);
    window.extend(best.into_sorted_vec().into_iter().map(|k| &candidates[k.index]));
    Ok(window)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Rotation3, Vector3};
    use proptest::prelude::*;

    fn record(id: u64, pose: RigidPose, landmarks: impl IntoIterator<Item = u64>) -> KeyframeRecord {
        KeyframeRecord {
            id,
            pose,
            landmark_ids: landmarks.into_iter().collect(),
            timestamp: id as f64,
        }
    }

    fn translated(x: f64) -> RigidPose {
        RigidPose::from_translation(Vector3::new(x, 0.0, 0.0))
    }

    #[test]
    fn pose_distance_examples() {
        assert_eq!(pose_distance(&RigidPose::identity()), 0.0);
        assert!((pose_distance(&translated(0.04)) - 0.2).abs() < 1e-15);
        let half_turn = RigidPose::new(
            *Rotation3::from_axis_angle(&Vector3::z_axis(), std::f64::consts::PI).matrix(),
            Vector3::zeros(),
        )
        .unwrap();
        assert!((pose_distance(&half_turn) - (8.0f64 / 3.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn penalty_examples() {
        let cfg = SelectionConfig::default();
        assert!((penalty(&RigidPose::identity(), &cfg) - 0.3125).abs() < 1e-15);
        assert_eq!(penalty(&translated(0.25), &cfg), 0.0);
        assert!((penalty(&translated(0.5), &cfg) - 0.0625).abs() < 1e-15);
    }

    #[test]
    fn penalty_limits_at_threshold() {
        let cfg = SelectionConfig::default();
        let rot = *Rotation3::from_axis_angle(&Vector3::y_axis(), 0.3).matrix();
        let at = |t: f64| penalty(&RigidPose::new(rot, Vector3::new(t, 0.0, 0.0)).unwrap(), &cfg);
        let rot_only = at(cfg.t_th);
        for eps in [1e-3, 1e-5, 1e-7] {
            let left = at(cfg.t_th - eps);
            let right = at(cfg.t_th + eps);
            assert!((left - rot_only - cfg.alpha_near * eps * eps).abs() < 1e-12);
            assert!((right - rot_only - cfg.alpha_far * eps * eps).abs() < 1e-12);
        }
    }

    #[test]
    fn covisibility_examples() {
        let a = record(0, RigidPose::identity(), [1, 2, 3]);
        let b = record(1, RigidPose::identity(), [2, 3, 4]);
        let c = record(2, RigidPose::identity(), [7, 8]);
        assert_eq!(covisibility(&a, &a), 3);
        assert_eq!(covisibility(&a, &b), 2);
        assert_eq!(covisibility(&a, &c), 0);
    }

    #[test]
    fn ties_prefer_recent_frames() {
        let reference = record(100, translated(0.0), 0..50);
        let candidates: Vec<_> = (0..12).map(|i| record(i, translated(0.3), 0..50)).collect();
        let window = select_window(&reference, &candidates, &SelectionConfig::default()).unwrap();
        let ids: Vec<u64> = window.iter().map(|k| k.id).collect();
        assert_eq!(ids, vec![100, 11, 10, 9, 8, 7, 6, 5]);
    }

    #[test]
    fn too_few_survivors() {
        let reference = record(100, translated(0.0), 0..50);
        let mut candidates: Vec<_> = (0..3).map(|i| record(i, translated(0.3), 0..50)).collect();
        // too close and too little overlap
        candidates.push(record(3, translated(0.01), 0..50));
        candidates.push(record(4, translated(0.3), 0..5));
        let err = select_window(&reference, &candidates, &SelectionConfig::default()).unwrap_err();
        assert_eq!(
            err,
            KeyframeError::InsufficientKeyframes {
                needed: 7,
                available: 3
            }
        );
    }

    #[test]
    fn max_distance_mode_keeps_near_frames() {
        let cfg = SelectionConfig {
            distance_filter_mode: DistanceFilterMode::MaxDistance,
            window_size: 2,
            ..Default::default()
        };
        let reference = record(100, translated(0.0), 0..50);
        let candidates = vec![record(0, translated(0.3), 0..50), record(1, translated(0.03), 0..50)];
        let window = select_window(&reference, &candidates, &cfg).unwrap();
        assert_eq!(window[1].id, 1);
    }

    #[test]
    fn invalid_config_rejected() {
        let reference = record(0, RigidPose::identity(), []);
        let bad = SelectionConfig {
            alpha_near: 0.5,
            ..Default::default()
        };
        assert!(matches!(
            select_window(&reference, &[], &bad),
            Err(KeyframeError::InvalidConfig(_))
        ));
    }

    proptest! {
        #[test]
        fn distance_zero_only_at_identity(angle in 0.0..3.0f64, t in prop::array::uniform3(-1.0..1.0f64)) {
            let pose = RigidPose::new(
                *Rotation3::from_axis_angle(&Vector3::x_axis(), angle).matrix(),
                Vector3::from(t),
            ).unwrap();
            let d = pose_distance(&pose);
            prop_assert!(d >= 0.0);
            if angle > 1e-4 || Vector3::from(t).norm() > 1e-8 {
                prop_assert!(d > 1e-9);
            }
        }

        #[test]
        fn argmin_invariant_under_translation_scaling(
            ts in prop::collection::vec(0.01..1.0f64, 2..20),
            scale in 0.1..10.0f64,
        ) {
            let cfg = SelectionConfig::default();
            let scaled = SelectionConfig { t_th: cfg.t_th * scale, ..cfg.clone() };
            let argmin = |cfg: &SelectionConfig, s: f64| {
                ts.iter()
                    .enumerate()
                    .map(|(i, t)| (penalty(&translated(t * s), cfg), i))
                    .min_by(|a, b| a.0.total_cmp(&b.0))
                    .unwrap()
            };
            let (p0, i0) = argmin(&cfg, 1.0);
            let (_, i1) = argmin(&scaled, scale);
            // exact ties may resolve either way after rescaling
            let tied = ts.iter().filter(|t| (penalty(&translated(**t), &cfg) - p0).abs() < 1e-12).count() > 1;
            prop_assert!(tied || i0 == i1);
        }
    }
}
