use serde::{Deserialize, Serialize};

use super::MvsError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CostFunction {
    /// Mean absolute difference.
    Sad,
    /// `1 - zncc`, in `[0, 2]`.
    #[default]
    ZnccNegated,
}

/// Largest patch radius whose window count fits in a byte.
pub const MAX_PATCH_RADIUS: usize = 7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchingConfig {
    pub patch_radius: usize,
    pub cost: CostFunction,
    pub min_valid_sources: usize,
    /// Patches with intensity variance below this get the neutral cost.
    pub zncc_epsilon: f32,
    /// Spread the sweep over the rayon pool.
    pub parallel: bool,
}

impl Default for MatchingConfig {
    fn default() -> Self {
        Self {
            patch_radius: 3,
            cost: CostFunction::ZnccNegated,
            min_valid_sources: 1,
            zncc_epsilon: 1e-6,
            parallel: true,
        }
    }
}

impl MatchingConfig {
    pub fn validate(&self) -> Result<(), MvsError> {
        if !(1..=MAX_PATCH_RADIUS).contains(&self.patch_radius) {
            return Err(MvsError::InvalidConfig(format!(
                "patch_radius must be in 1..={MAX_PATCH_RADIUS}"
            )));
        }
        if self.min_valid_sources < 1 {
            return Err(MvsError::InvalidConfig("min_valid_sources must be >= 1".into()));
        }
        if !(self.zncc_epsilon >= 0.0) {
            return Err(MvsError::InvalidConfig("zncc_epsilon must be >= 0".into()));
        }
        Ok(())
    }
}

/// Cost assigned when either patch has no usable variance.
pub const NEUTRAL_ZNCC_COST: f32 = 1.0;

/// Matching cost between two equally sized patches; lower is better.
pub fn photometric_cost(
    ref_patch: &[f32],
    src_patch: &[f32],
    cfg: &MatchingConfig,
) -> Result<f32, MvsError> {
    if ref_patch.len() != src_patch.len() || ref_patch.is_empty() {
        return Err(MvsError::DimensionMismatch);
    }
    let n = ref_patch.len() as f32;
    Ok(match cfg.cost {
        CostFunction::Sad => {
            ref_patch
                .iter()
                .zip(src_patch)
                .map(|(a, b)| (a - b).abs())
                .sum::<f32>()
                / n
        }
        CostFunction::ZnccNegated => {
            // two-pass form for the standalone API
            let mr = ref_patch.iter().sum::<f32>() / n;
            let ms = src_patch.iter().sum::<f32>() / n;
            let (mut vr, mut vs, mut cov) = (0.0f32, 0.0f32, 0.0f32);
            for (a, b) in ref_patch.iter().zip(src_patch) {
                let (da, db) = (a - mr, b - ms);
                vr += da * da;
                vs += db * db;
                cov += da * db;
            }
            let (vr, vs, cov) = (vr / n, vs / n, cov / n);
            if vr <= cfg.zncc_epsilon || vs <= cfg.zncc_epsilon {
                NEUTRAL_ZNCC_COST
            } else {
                1.0 - (cov / (vr * vs).sqrt()).clamp(-1.0, 1.0)
            }
        }
    })
}
