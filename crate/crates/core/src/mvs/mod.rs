//! Plane-sweep multi-view stereo over a keyframe window, with either uniform
//! planes or per-pixel surfaces centered on a dense depth prior.

mod cost;
mod extract;
mod hypotheses;
mod sweep;

pub use cost::{photometric_cost, CostFunction, MatchingConfig, MAX_PATCH_RADIUS, NEUTRAL_ZNCC_COST};
pub use extract::{estimate_pixel, extract_depth, ConfidenceMap, PixelEstimate};
pub use hypotheses::{build_hypotheses, HypothesisConfig, HypothesisMode, Hypotheses};
pub use sweep::{sweep, CostVolume, SourceView};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{CameraIntrinsics, DepthMap, Image};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MvsError {
    #[error("at least one source view is required")]
    NoSources,
    #[error("prior-guided hypotheses need a depth prior")]
    MissingPrior,
    #[error("prior depth at pixel {pixel} is not a finite positive value")]
    InvalidPrior { pixel: usize },
    #[error("inputs disagree on image size")]
    DimensionMismatch,
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MvsConfig {
    pub hypothesis: HypothesisConfig,
    pub matching: MatchingConfig,
    /// Estimates below this confidence are dropped.
    pub min_confidence: f32,
}

impl Default for MvsConfig {
    fn default() -> Self {
        Self {
            hypothesis: HypothesisConfig::default(),
            matching: MatchingConfig::default(),
            min_confidence: 0.05,
        }
    }
}

/// Dense depth for `reference` from its window of source views.
pub fn predict(
    reference: &Image,
    sources: &[SourceView<'_>],
    intr: &CameraIntrinsics,
    prior: Option<&DepthMap>,
    cfg: &MvsConfig,
) -> Result<(DepthMap, ConfidenceMap), MvsError> {
    if sources.is_empty() {
        return Err(MvsError::NoSources);
    }
    let hyp = build_hypotheses(prior, reference.width(), reference.height(), &cfg.hypothesis)?;
    let volume = sweep(reference, sources, intr, hyp, &cfg.matching)?;
    let (mut depth, conf) = extract_depth(&volume);
    let w = depth.width();
    for (i, c) in conf.values().iter().enumerate() {
        if *c < cfg.min_confidence {
            depth.invalidate(i % w, i / w);
        }
    }
    Ok((depth, conf))
}
