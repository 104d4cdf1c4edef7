//! Simulation configuration and its JSON loader.
//!
//! Field names in the JSON document match the struct fields, with the two
//! cache capacities spelled `N_S` and `N_L`. Missing fields take the
//! defaults below; unknown fields are rejected. `N_L: null` means the
//! long-term span is unbounded.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid config: {field} {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error("config parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl ConfigError {
    fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        ConfigError::Invalid {
            field,
            reason: reason.into(),
        }
    }

    /// The offending field, when the error is a violated invariant.
    pub fn field(&self) -> Option<&'static str> {
        match self {
            ConfigError::Invalid { field, .. } => Some(field),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Frames sampled per second of video.
    pub fps: f64,
    pub tokens_per_frame: usize,
    /// Shared model dimension for visual, text and marker tokens.
    pub d: usize,
    /// Maximum number of frames held in the short-term span.
    #[serde(rename = "N_S")]
    pub n_s: usize,
    /// Maximum number of verbalized steps held in the long-term span.
    #[serde(rename = "N_L")]
    pub n_l: Option<usize>,
    /// Dedup window, counted in prediction events.
    pub tau: usize,
    pub mean_step_s: f64,
    pub step_s_jitter: f64,
    pub vocab_size: usize,
    pub seed: u64,
    pub lambda_1: f64,

    /// Mean text tokens per verbalized step (marker excluded).
    pub tokens_per_step: f64,
    pub n_heads: usize,
    pub n_layers: usize,
    pub num_step_classes: usize,
    /// Std-dev of the Gaussian noise added to step prototypes.
    pub feature_noise: f64,
    /// Probability that the oracle predictor emits a random step id.
    pub predictor_noise: f64,
    /// Pinned instruction tokens entered before the first frame.
    pub prompt_tokens: usize,
    /// A strategy run aborts once its live token count exceeds this.
    pub max_live_tokens: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            fps: 4.0,
            tokens_per_frame: 1,
            d: 32,
            n_s: 64,
            n_l: Some(5),
            // A guess; no reference value is known.
            tau: 8,
            mean_step_s: 32.0,
            step_s_jitter: 8.0,
            vocab_size: 128,
            seed: 0,
            // Also a guess.
            lambda_1: 2.0,
            tokens_per_step: 5.7,
            n_heads: 4,
            n_layers: 2,
            num_step_classes: 20,
            feature_noise: 0.5,
            predictor_noise: 0.0,
            prompt_tokens: 4,
            // Roughly where the unbounded visual cache hit the 8GB budget.
            max_live_tokens: 40_000,
        }
    }
}

/// Integer fields that would otherwise fail deserialization with an error
/// that does not name the field.
const UNSIGNED_FIELDS: &[&str] = &[
    "tokens_per_frame",
    "d",
    "N_S",
    "N_L",
    "tau",
    "vocab_size",
    "seed",
    "n_heads",
    "n_layers",
    "num_step_classes",
    "prompt_tokens",
    "max_live_tokens",
];

impl SimConfig {
    /// Parses and validates a JSON config document.
    pub fn from_json_str(s: &str) -> Result<Self, ConfigError> {
        let raw: serde_json::Value = serde_json::from_str(s)?;
        if let Some(map) = raw.as_object() {
            for &field in UNSIGNED_FIELDS {
                if let Some(v) = map.get(field) {
                    if v.as_f64().is_some_and(|x| x < 0.0) {
                        return Err(ConfigError::invalid(
                            field,
                            format!("must be ≥ 0 (got {v})"),
                        ));
                    }
                }
            }
        }
        let cfg: SimConfig = serde_json::from_value(raw)?;
        validate_config(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json_str(&text)
    }

    /// Long-term capacity with `None` mapped to "never evict".
    pub fn long_capacity(&self) -> usize {
        self.n_l.unwrap_or(usize::MAX)
    }

    pub fn frame_period_s(&self) -> f64 {
        1.0 / self.fps
    }
}

/// Returns `cfg` unchanged when every invariant holds.
pub fn validate_config(cfg: SimConfig) -> Result<SimConfig, ConfigError> {
    if !(cfg.fps.is_finite() && cfg.fps > 0.0) {
        return Err(ConfigError::invalid("fps", "must be > 0"));
    }
    if cfg.n_s < 1 {
        return Err(ConfigError::invalid("N_S", "must be ≥ 1"));
    }
    if cfg.tokens_per_frame < 1 {
        return Err(ConfigError::invalid("tokens_per_frame", "must be ≥ 1"));
    }
    if cfg.d < 1 {
        return Err(ConfigError::invalid("d", "must be ≥ 1"));
    }
    if cfg.n_heads < 1 {
        return Err(ConfigError::invalid("n_heads", "must be ≥ 1"));
    }
    if !cfg.d.is_multiple_of(cfg.n_heads) {
        return Err(ConfigError::invalid(
            "n_heads",
            format!("must divide d ({} % {} ≠ 0)", cfg.d, cfg.n_heads),
        ));
    }
    if cfg.n_layers < 1 {
        return Err(ConfigError::invalid("n_layers", "must be ≥ 1"));
    }
    if !(cfg.mean_step_s.is_finite() && cfg.mean_step_s > 0.0) {
        return Err(ConfigError::invalid("mean_step_s", "must be > 0"));
    }
    if !(cfg.step_s_jitter.is_finite() && cfg.step_s_jitter >= 0.0) {
        return Err(ConfigError::invalid("step_s_jitter", "must be ≥ 0"));
    }
    if cfg.vocab_size < 2 {
        return Err(ConfigError::invalid("vocab_size", "must be ≥ 2"));
    }
    if !(cfg.lambda_1.is_finite() && cfg.lambda_1 >= 0.0) {
        return Err(ConfigError::invalid("lambda_1", "must be ≥ 0"));
    }
    if !(cfg.tokens_per_step.is_finite() && cfg.tokens_per_step >= 1.0) {
        return Err(ConfigError::invalid("tokens_per_step", "must be ≥ 1"));
    }
    if cfg.num_step_classes < 2 {
        return Err(ConfigError::invalid("num_step_classes", "must be ≥ 2"));
    }
    if !(cfg.feature_noise.is_finite() && cfg.feature_noise >= 0.0) {
        return Err(ConfigError::invalid("feature_noise", "must be ≥ 0"));
    }
    if !(0.0..=1.0).contains(&cfg.predictor_noise) {
        return Err(ConfigError::invalid("predictor_noise", "must lie in [0, 1]"));
    }
    if cfg.max_live_tokens < 1 {
        return Err(ConfigError::invalid("max_live_tokens", "must be ≥ 1"));
    }
    Ok(cfg)
}
