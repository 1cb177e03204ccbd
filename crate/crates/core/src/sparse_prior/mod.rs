//! Sparse depth from landmarks, VIO-like noise simulation, densification of
//! the sparse map into a single-view prior, and the prior quality objectives.

mod densify;
mod landmarks;
mod loss;
mod noise;

pub use densify::{densify, DensifierConfig, Fallback};
pub use landmarks::{project_landmarks, Landmark, LandmarkFilterConfig, Observation, SparseDepthMap};
pub use loss::{combined_loss, reconstruction_loss, smoothness_loss};
pub use noise::{corner_response, simulate_noisy_sparse, NoiseConfig, PointPerturbation};

use thiserror::Error;

use crate::geometry::GeometryError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PriorError {
    #[error("no keypoint has a valid ground-truth depth")]
    NoValidKeypoints,
    #[error("sparse depth map has no valid entries")]
    EmptyPrior,
    #[error("prediction and ground truth share no valid pixels")]
    NoOverlap,
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}
