use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::PipelineError;
use crate::eval::DEFAULT_THRESHOLD_CM;
use crate::fusion::FusionConfig;
use crate::keyframe::SelectionConfig;
use crate::mvs::MvsConfig;
use crate::sparse_prior::{DensifierConfig, LandmarkFilterConfig, NoiseConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PriorSource {
    /// Landmarks when the dataset has them, otherwise simulation from ground-truth depth.
    #[default]
    Auto,
    Landmarks,
    Simulated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Ground truth beyond this depth (m) is ignored.
    pub max_depth: f64,
    /// Points sampled on the predicted mesh.
    pub mesh_samples: usize,
    /// Inlier threshold for precision and recall (cm).
    pub threshold_cm: f64,
    /// Ground-truth depth is back-projected on every n-th pixel in x and y.
    pub gt_pixel_stride: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            max_depth: 5.0,
            mesh_samples: 20_000,
            threshold_cm: DEFAULT_THRESHOLD_CM,
            gt_pixel_stride: 8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub selection: SelectionConfig,
    pub landmark_filter: LandmarkFilterConfig,
    /// Used only when priors are simulated. The seed is offset by the frame index.
    pub noise: NoiseConfig,
    pub densifier: DensifierConfig,
    pub mvs: MvsConfig,
    pub fusion: FusionConfig,
    pub eval: EvalConfig,
    pub prior_source: PriorSource,
    /// Every n-th frame is used as a reference.
    pub stride: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            selection: SelectionConfig::default(),
            landmark_filter: LandmarkFilterConfig::default(),
            noise: NoiseConfig::default(),
            densifier: DensifierConfig::default(),
            mvs: MvsConfig::default(),
            fusion: FusionConfig::default(),
            eval: EvalConfig::default(),
            prior_source: PriorSource::Auto,
            stride: 1,
        }
    }
}

fn config_error(msg: impl std::fmt::Display) -> PipelineError {
    PipelineError::Config(msg.to_string())
}

/// Recursively writes `patch` into `base`. Every key in `patch` must already exist.
fn merge(base: &mut Value, patch: &Value, path: &str) -> Result<(), PipelineError> {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                let key = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                let slot = b.get_mut(k).ok_or_else(|| config_error(format!("unknown key `{key}`")))?;
                merge(slot, v, &key)?;
            }
            Ok(())
        }
        (b, p) => {
            *b = p.clone();
            Ok(())
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        self.selection.validate().map_err(config_error)?;
        self.noise.validate().map_err(config_error)?;
        self.densifier.validate().map_err(config_error)?;
        self.mvs.hypothesis.validate().map_err(config_error)?;
        self.mvs.matching.validate().map_err(config_error)?;
        self.fusion.validate().map_err(config_error)?;
        let lf = &self.landmark_filter;
        if !(lf.d_th > 0.0) || !(lf.r_th > 0.0) {
            return Err(config_error("landmark_filter thresholds must be positive"));
        }
        let ev = &self.eval;
        if !(ev.max_depth > 0.0) || !(ev.threshold_cm > 0.0) || ev.mesh_samples == 0 || ev.gt_pixel_stride == 0 {
            return Err(config_error("eval parameters must be positive"));
        }
        if self.stride == 0 {
            return Err(config_error("stride must be >= 1"));
        }
        Ok(())
    }

    /// Defaults overridden by a JSON document. Unknown keys are rejected.
    pub fn from_json_str(text: &str) -> Result<Self, PipelineError> {
        let patch: Value = serde_json::from_str(text).map_err(config_error)?;
        let mut cfg = Self::default();
        cfg.merge_value(&patch)?;
        Ok(cfg)
    }

    fn merge_value(&mut self, patch: &Value) -> Result<(), PipelineError> {
        let mut value = serde_json::to_value(&*self).map_err(config_error)?;
        merge(&mut value, patch, "")?;
        *self = serde_json::from_value(value).map_err(config_error)?;
        Ok(())
    }

    /// Sets one dotted key such as `mvs.hypothesis.interval`. The value is read
    /// as JSON, falling back to a plain string.
    pub fn set(&mut self, key: &str, raw: &str) -> Result<(), PipelineError> {
        if key.is_empty() || key.split('.').any(str::is_empty) {
            return Err(config_error(format!("malformed key `{key}`")));
        }
        let leaf = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        let patch = key.rsplit('.').fold(leaf, |inner, k| {
            let mut obj = serde_json::Map::new();
            obj.insert(k.to_string(), inner);
            Value::Object(obj)
        });
        self.merge_value(&patch)
    }

    /// Applies `key=value` assignments in order.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, assignments: &[S]) -> Result<(), PipelineError> {
        for a in assignments {
            let a = a.as_ref();
            let (k, v) = a
                .split_once('=')
                .ok_or_else(|| config_error(format!("override `{a}` is not key=value")))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mvs::HypothesisMode;

    #[test]
    fn defaults_validate() {
        PipelineConfig::default().validate().unwrap();
    }

    #[test]
    fn dotted_override_reaches_nested_fields() {
        let mut cfg = PipelineConfig::default();
        cfg.apply_overrides(&["mvs.hypothesis.interval=0.02", "mvs.hypothesis.mode=uniform", "stride=3"])
            .unwrap();
        assert_eq!(cfg.mvs.hypothesis.interval, 0.02);
        assert_eq!(cfg.mvs.hypothesis.mode, HypothesisMode::Uniform);
        assert_eq!(cfg.stride, 3);
        assert_eq!(cfg.fusion, FusionConfig::default());
    }

    #[test]
    fn unknown_key_is_a_config_error() {
        let mut cfg = PipelineConfig::default();
        let err = cfg.set("mvs.hypothesis.planes", "3").unwrap_err();
        assert!(matches!(err, PipelineError::Config(ref m) if m.contains("mvs.hypothesis.planes")), "{err}");
        assert!(matches!(cfg.set("stride", "\"x\""), Err(PipelineError::Config(_))));
        assert!(matches!(cfg.apply_overrides(&["stride"]), Err(PipelineError::Config(_))));
        assert!(matches!(cfg.set("a..b", "1"), Err(PipelineError::Config(_))));
    }

    #[test]
    fn file_overrides_only_what_it_names() {
        let cfg = PipelineConfig::from_json_str(r#"{"selection": {"window_size": 4}, "eval": {"seed": 9}}"#).unwrap();
        assert_eq!(cfg.selection.window_size, 4);
        assert_eq!(cfg.selection.p_th, SelectionConfig::default().p_th);
        assert_eq!(cfg.eval.seed, 9);
        assert!(PipelineConfig::from_json_str(r#"{"bogus": 1}"#).is_err());
        assert!(PipelineConfig::from_json_str("not json").is_err());
    }

    #[test]
    fn serialized_config_round_trips() {
        let mut cfg = PipelineConfig::default();
        cfg.set("noise.seed", "42").unwrap();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(PipelineConfig::from_json_str(&text).unwrap(), cfg);
    }
}
