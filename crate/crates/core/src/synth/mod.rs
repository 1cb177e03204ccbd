//! Procedural scenes with exact ray-cast rendering, orbit trajectories and
//! ground-truth landmarks.

mod scene;
mod texture;
mod trajectory;

pub use scene::{render, Aabb, OrbitSpec, Primitive, Scene};
pub use texture::Texture;
pub use trajectory::{FRAME_INTERVAL, orbit_trajectory, scene_landmarks, Trajectory, TrajectoryFrame};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("a trajectory needs at least 2 frames, got {0}")]
    InvalidFrameCount(usize),
    #[error("no surface point is visible from two or more poses")]
    NoVisibleSurface,
    #[error("invalid scene: {0}")]
    InvalidScene(String),
}
