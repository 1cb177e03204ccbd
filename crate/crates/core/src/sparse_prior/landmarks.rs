use std::collections::HashMap;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::geometry::{project, CameraIntrinsics, DepthMap, RigidPose};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub keyframe_id: u64,
    pub pixel: Vector2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Landmark {
    pub id: u64,
    /// World frame, meters.
    pub position: Vector3<f64>,
    pub observations: Vec<Observation>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LandmarkFilterConfig {
    /// Depth upper threshold (m).
    pub d_th: f64,
    /// Mean reprojection error threshold (px).
    pub r_th: f64,
}

impl Default for LandmarkFilterConfig {
    fn default() -> Self {
        Self { d_th: 5.0, r_th: 2.0 }
    }
}

/// Depth raster that is zero everywhere except at a few measured pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseDepthMap(DepthMap);

impl SparseDepthMap {
    pub fn new(width: usize, height: usize) -> Self {
        Self(DepthMap::invalid(width, height))
    }

    pub fn from_depth_map(map: DepthMap) -> Self {
        Self(map)
    }

    pub fn depth_map(&self) -> &DepthMap {
        &self.0
    }

    pub fn into_inner(self) -> DepthMap {
        self.0
    }

    pub fn valid_count(&self) -> usize {
        self.0.valid_count()
    }

    /// Writes `depth` at `(x, y)`, keeping the nearer value on collisions.
    pub fn insert_nearest(&mut self, x: usize, y: usize, depth: f64) {
        match self.0.get(x, y) {
            Some(existing) if existing <= depth => {}
            _ => self.0.set(x, y, depth),
        }
    }

    /// Drops entries deeper than `d_th`.
    pub fn clip_far(&mut self, d_th: f64) {
        let far: Vec<_> = self
            .0
            .iter_valid()
            .filter(|(_, _, d)| *d > d_th)
            .map(|(x, y, _)| (x, y))
            .collect();
        for (x, y) in far {
            self.0.invalidate(x, y);
        }
    }
}

/// Rounds a pixel to the raster cell containing it.
pub(crate) fn pixel_cell(pixel: &Vector2<f64>, width: usize, height: usize) -> Option<(usize, usize)> {
    let x = pixel.x.round();
    let y = pixel.y.round();
    (x >= 0.0 && y >= 0.0 && x < width as f64 && y < height as f64).then(|| (x as usize, y as usize))
}

fn mean_reprojection_error(
    landmark: &Landmark,
    intr: &CameraIntrinsics,
    poses: &HashMap<u64, RigidPose>,
) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for obs in &landmark.observations {
        let Some(pose) = poses.get(&obs.keyframe_id) else {
            continue;
        };
        count += 1;
        match project(&pose.inverse().transform_point(&landmark.position), intr) {
            Ok((px, _)) => total += (px - obs.pixel).norm(),
            Err(_) => return f64::INFINITY,
        }
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

/// Projects world landmarks into the reference view.
///
/// Landmarks are dropped when they fall outside the image, lie behind the
/// camera or beyond `d_th`, or when their mean reprojection error over the
/// observations whose keyframe pose is known in `observer_poses` exceeds
/// `r_th`. Collisions keep the nearer depth.
pub fn project_landmarks(
    landmarks: &[Landmark],
    ref_pose: &RigidPose,
    intr: &CameraIntrinsics,
    cfg: &LandmarkFilterConfig,
    observer_poses: &HashMap<u64, RigidPose>,
) -> SparseDepthMap {
    let mut sparse = SparseDepthMap::new(intr.width, intr.height);
    let cam_from_world = ref_pose.inverse();
    for lm in landmarks {
        let Ok((px, depth)) = project(&cam_from_world.transform_point(&lm.position), intr) else {
            continue;
        };
        if depth > cfg.d_th {
            continue;
        }
        let Some((x, y)) = pixel_cell(&px, intr.width, intr.height) else {
            continue;
        };
        if mean_reprojection_error(lm, intr, observer_poses) > cfg.r_th {
            continue;
        }
        sparse.insert_nearest(x, y, depth);
    }
    sparse
}

#[cfg(test)]
mod tests {
    use super::*;

    fn intr() -> CameraIntrinsics {
        CameraIntrinsics::new(100.0, 100.0, 50.0, 40.0, 100, 80).unwrap()
    }

    fn landmark(id: u64, p: [f64; 3]) -> Landmark {
        Landmark {
            id,
            position: Vector3::from(p),
            observations: vec![],
        }
    }

    fn run(lms: &[Landmark], poses: &HashMap<u64, RigidPose>) -> SparseDepthMap {
        project_landmarks(
            lms,
            &RigidPose::identity(),
            &intr(),
            &LandmarkFilterConfig::default(),
            poses,
        )
    }

    #[test]
    fn keeps_in_range_point() {
        let sparse = run(&[landmark(0, [0.0, 0.0, 2.0])], &HashMap::new());
        assert_eq!(sparse.depth_map().get(50, 40), Some(2.0));
        assert_eq!(sparse.valid_count(), 1);
    }

    #[test]
    fn drops_far_and_behind_points() {
        let sparse = run(
            &[landmark(0, [0.0, 0.0, 6.0]), landmark(1, [0.0, 0.0, -1.0])],
            &HashMap::new(),
        );
        assert_eq!(sparse.valid_count(), 0);
    }

    #[test]
    fn drops_high_reprojection_error() {
        let mut poses = HashMap::new();
        poses.insert(7, RigidPose::identity());
        let mut lm = landmark(0, [0.0, 0.0, 2.0]);
        lm.observations.push(Observation {
            keyframe_id: 7,
            pixel: Vector2::new(53.0, 40.0),
        });
        assert_eq!(run(&[lm.clone()], &poses).valid_count(), 0);
        lm.observations[0].pixel = Vector2::new(51.5, 40.0);
        assert_eq!(run(&[lm], &poses).valid_count(), 1);
    }

    #[test]
    fn collisions_keep_nearer_depth() {
        let sparse = run(
            &[landmark(0, [0.0, 0.0, 3.0]), landmark(1, [0.0, 0.0, 2.0]), landmark(2, [0.0, 0.0, 2.5])],
            &HashMap::new(),
        );
        assert_eq!(sparse.depth_map().get(50, 40), Some(2.0));
    }

    #[test]
    fn drops_points_outside_image() {
        let sparse = run(&[landmark(0, [5.0, 0.0, 2.0])], &HashMap::new());
        assert_eq!(sparse.valid_count(), 0);
    }
}
