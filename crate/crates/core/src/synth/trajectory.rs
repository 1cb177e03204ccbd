use nalgebra::{Matrix3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::scene::Scene;
use super::SynthError;
use crate::geometry::{project, CameraIntrinsics, RigidPose};
use crate::sparse_prior::{Landmark, Observation};

/// Seconds between consecutive orbit frames.
pub const FRAME_INTERVAL: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryFrame {
    pub timestamp: f64,
    pub pose: RigidPose,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Trajectory {
    pub frames: Vec<TrajectoryFrame>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn poses(&self) -> impl Iterator<Item = &RigidPose> {
        self.frames.iter().map(|f| &f.pose)
    }
}

/// Camera at `position` looking at `target`, with world `+y` as image down.
fn look_at(position: Vector3<f64>, target: Vector3<f64>) -> RigidPose {
    let f = (target - position).normalize();
    let mut x = Vector3::y().cross(&f);
    if x.norm() < 1e-9 {
        x = Vector3::x();
    }
    let x = x.normalize();
    let y = f.cross(&x);
    RigidPose {
        rotation: Matrix3::from_columns(&[x, y, f]),
        translation: position,
    }
}

/// Poses on a horizontal arc around the scene centroid, each fixating it,
/// with straight-line spacing `baseline` between neighbors.
pub fn orbit_trajectory(scene: &Scene, frame_count: usize, baseline: f64) -> Result<Trajectory, SynthError> {
    if frame_count < 2 {
        return Err(SynthError::InvalidFrameCount(frame_count));
    }
    let radius = scene.orbit.radius;
    if !(radius > 0.0) || !(baseline > 0.0) || baseline > 2.0 * radius {
        return Err(SynthError::InvalidScene(format!(
            "orbit radius {radius} cannot carry baseline {baseline}"
        )));
    }
    let center = scene.centroid();
    let step = 2.0 * (baseline / (2.0 * radius)).asin();
    let frames = (0..frame_count)
        .map(|i| {
            let phi = scene.orbit.start_angle + step * i as f64;
            let position = center + Vector3::new(radius * phi.sin(), scene.orbit.height, -radius * phi.cos());
            TrajectoryFrame {
                timestamp: i as f64 * FRAME_INTERVAL,
                pose: look_at(position, center),
            }
        })
        .collect();
    Ok(Trajectory { frames })
}

/// Relative tolerance for treating a re-cast hit as the same surface point.
const VISIBILITY_TOLERANCE: f64 = 1e-6;

fn observe(scene: &Scene, point: &Vector3<f64>, pose: &RigidPose, intr: &CameraIntrinsics) -> Option<Vector2<f64>> {
    let cam = pose.inverse().transform_point(point);
    let (pixel, depth) = project(&cam, intr).ok()?;
    if !intr.contains(&pixel) {
        return None;
    }
    let (hit, _) = scene.cast_pixel(pose, intr, &pixel)?;
    ((hit - depth).abs() <= VISIBILITY_TOLERANCE * depth.max(1.0)).then_some(pixel)
}

/// Up to `count` surface points, each seen unoccluded from at least two
/// trajectory poses, with exact observations.
///
/// Points are sampled through random pixels of random frames; sampling stops
/// after `64 * count` attempts.
pub fn scene_landmarks(
    scene: &Scene,
    traj: &Trajectory,
    intr: &CameraIntrinsics,
    count: usize,
    seed: u64,
) -> Result<Vec<Landmark>, SynthError> {
    if count == 0 || traj.is_empty() {
        return Err(SynthError::NoVisibleSurface);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut landmarks = Vec::with_capacity(count);
    for _ in 0..64 * count {
        if landmarks.len() == count {
            break;
        }
        let frame = &traj.frames[rng.random_range(0..traj.len())];
        let pixel = Vector2::new(
            rng.random_range(0.0..(intr.width - 1) as f64),
            rng.random_range(0.0..(intr.height - 1) as f64),
        );
        let dir = frame.pose.rotation * intr.ray(&pixel);
        let Some((t, _)) = scene.cast(&frame.pose.translation, &dir) else {
            continue;
        };
        let point = frame.pose.translation + dir * t;
        let observations: Vec<Observation> = traj
            .frames
            .iter()
            .enumerate()
            .filter_map(|(i, f)| {
                observe(scene, &point, &f.pose, intr).map(|pixel| Observation {
                    keyframe_id: i as u64,
                    pixel,
                })
            })
            .collect();
        if observations.len() >= 2 {
            landmarks.push(Landmark {
                id: landmarks.len() as u64,
                position: point,
                observations,
            });
        }
    }
    if landmarks.is_empty() {
        return Err(SynthError::NoVisibleSurface);
    }
    Ok(landmarks)
}
