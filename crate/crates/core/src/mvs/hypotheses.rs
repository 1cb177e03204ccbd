use serde::{Deserialize, Serialize};

use super::MvsError;
use crate::geometry::DepthMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum HypothesisMode {
    /// Fronto-parallel planes evenly spaced over `[min_depth, max_depth]`.
    Uniform,
    /// Per-pixel surfaces at fixed offsets around the depth prior.
    #[default]
    PriorGuided,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HypothesisConfig {
    pub mode: HypothesisMode,
    pub plane_count: usize,
    /// Spacing between guided surfaces (m).
    pub interval: f64,
    /// Surfaces below the prior.
    pub n1: usize,
    /// Surfaces above the prior.
    pub n2: usize,
    pub min_depth: f64,
    pub max_depth: f64,
}

impl Default for HypothesisConfig {
    fn default() -> Self {
        Self {
            mode: HypothesisMode::PriorGuided,
            plane_count: 64,
            interval: 0.04,
            n1: 31,
            n2: 32,
            min_depth: 0.25,
            max_depth: 5.0,
        }
    }
}

impl HypothesisConfig {
    pub fn uniform() -> Self {
        Self {
            mode: HypothesisMode::Uniform,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), MvsError> {
        let bad = |msg: &str| Err(MvsError::InvalidConfig(msg.to_string()));
        if self.plane_count < 2 {
            return bad("plane_count must be >= 2");
        }
        if !(self.min_depth > 0.0) {
            return bad("min_depth must be positive");
        }
        match self.mode {
            HypothesisMode::PriorGuided => {
                if self.n1 + self.n2 + 1 != self.plane_count {
                    return bad("n1 + n2 + 1 must equal plane_count");
                }
                if !(self.interval > 0.0) || !self.interval.is_finite() {
                    return bad("interval must be positive");
                }
            }
            HypothesisMode::Uniform => {
                if !(self.max_depth > self.min_depth) || !self.max_depth.is_finite() {
                    return bad("max_depth must exceed min_depth");
                }
            }
        }
        Ok(())
    }

    /// Spacing of the uniform planes.
    pub fn uniform_step(&self) -> f64 {
        (self.max_depth - self.min_depth) / (self.plane_count - 1) as f64
    }
}

/// Per-pixel hypothesis depths, strictly increasing along the hypothesis axis.
#[derive(Debug, Clone, PartialEq)]
pub enum Hypotheses {
    /// Same depths at every pixel.
    Planes {
        width: usize,
        height: usize,
        depths: Vec<f64>,
    },
    /// Layout `[k * width * height + pixel]`.
    PerPixel {
        width: usize,
        height: usize,
        count: usize,
        depths: Vec<f64>,
    },
}

impl Hypotheses {
    pub fn width(&self) -> usize {
        match self {
            Self::Planes { width, .. } | Self::PerPixel { width, .. } => *width,
        }
    }

    pub fn height(&self) -> usize {
        match self {
            Self::Planes { height, .. } | Self::PerPixel { height, .. } => *height,
        }
    }

    pub fn count(&self) -> usize {
        match self {
            Self::Planes { depths, .. } => depths.len(),
            Self::PerPixel { count, .. } => *count,
        }
    }

    #[inline]
    pub fn depth(&self, k: usize, pixel: usize) -> f64 {
        match self {
            Self::Planes { depths, .. } => depths[k],
            Self::PerPixel {
                width,
                height,
                depths,
                ..
            } => depths[k * width * height + pixel],
        }
    }

    /// Hypotheses at one pixel, shallowest first.
    pub fn at_pixel(&self, pixel: usize) -> Vec<f64> {
        (0..self.count()).map(|k| self.depth(k, pixel)).collect()
    }
}

/// Guided surfaces `prior + (k - n1) * interval`, with any prefix below
/// `min_depth` re-spaced evenly from `min_depth` up to the first surface
/// that was not clamped.
fn guided_column(prior: f64, cfg: &HypothesisConfig, out: &mut [f64]) {
    for (k, slot) in out.iter_mut().enumerate() {
        *slot = prior + (k as f64 - cfg.n1 as f64) * cfg.interval;
    }
    if out[0] >= cfg.min_depth {
        return;
    }
    match out.iter().position(|d| *d > cfg.min_depth) {
        Some(first) => {
            let top = out[first];
            let step = (top - cfg.min_depth) / first as f64;
            for (i, slot) in out[..first].iter_mut().enumerate() {
                *slot = cfg.min_depth + i as f64 * step;
            }
        }
        None => {
            for (i, slot) in out.iter_mut().enumerate() {
                *slot = cfg.min_depth + i as f64 * cfg.interval;
            }
        }
    }
}

pub fn build_hypotheses(
    prior: Option<&DepthMap>,
    width: usize,
    height: usize,
    cfg: &HypothesisConfig,
) -> Result<Hypotheses, MvsError> {
    cfg.validate()?;
    match cfg.mode {
        HypothesisMode::Uniform => {
            let step = cfg.uniform_step();
            let depths = (0..cfg.plane_count)
                .map(|k| cfg.min_depth + k as f64 * step)
                .collect();
            Ok(Hypotheses::Planes {
                width,
                height,
                depths,
            })
        }
        HypothesisMode::PriorGuided => {
            let prior = prior.ok_or(MvsError::MissingPrior)?;
            if prior.dims() != (width, height) {
                return Err(MvsError::DimensionMismatch);
            }
            let npix = width * height;
            let count = cfg.plane_count;
            let mut depths = vec![0.0; count * npix];
            let mut column = vec![0.0; count];
            for (pixel, &d) in prior.as_slice().iter().enumerate() {
                if !(d > 0.0) {
                    return Err(MvsError::InvalidPrior { pixel });
                }
                guided_column(d, cfg, &mut column);
                for (k, v) in column.iter().enumerate() {
                    depths[k * npix + pixel] = *v;
                }
            }
            Ok(Hypotheses::PerPixel {
                width,
                height,
                count,
                depths,
            })
        }
    }
}
