//! Pipeline configuration: one TOML file, environment variables override
//! credentials only.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ektools::AdapterSpec;
use crate::lvlm::mock::MockBehavior;
use crate::prompting::PromptMode;

pub const ENV_API_KEY: &str = "LAVID_API_KEY";
pub const ENV_API_BASE: &str = "LAVID_API_BASE";
pub const ENV_MODEL_ID: &str = "LAVID_MODEL_ID";

pub const DEFAULT_EXTRACTION_COMMAND: &str =
    "ffmpeg -y -hide_banner -loglevel error -i {input} -frames:v {max_frames} -start_number 0 {out_dir}/frame_%05d.png";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {0}: {1}")]
    Read(PathBuf, std::io::Error),
    #[error("cannot parse config {0}: {1}")]
    Parse(PathBuf, String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Mock,
    Http,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    /// Chat-completions base URL; `LAVID_API_BASE` overrides.
    pub endpoint: String,
    /// Model identifier sent with every request; `LAVID_MODEL_ID` overrides.
    pub model_id: String,
    pub rate_limit_per_min: u32,
    pub max_images: usize,
    /// Whether the provider supports schema-constrained output natively.
    pub native_structured: bool,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig {
            kind: ProviderKind::Mock,
            endpoint: String::new(),
            model_id: "mock-lvlm".into(),
            rate_limit_per_min: 60,
            max_images: 16,
            native_structured: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub provider: ProviderConfig,
    /// Blend between weighted F1 and the self-assessment score.
    pub alpha: f64,
    /// Fraction of the manifest held out as the selection reference set.
    pub reference_fraction: f64,
    /// Frames per detection window (the middle of the clip).
    pub window: usize,
    /// Consecutive frames kept from the start of each video.
    pub max_frames: usize,
    pub batch_size_per_class: usize,
    pub f1_threshold: f64,
    pub rewrite_budget: usize,
    pub attempts_per_slot: usize,
    pub seed: u64,
    pub mode: PromptMode,
    pub video_specific: bool,
    pub repeats: usize,
    pub jobs: usize,
    /// Score tools by macro-averaged F1 instead of real-positive F1.
    pub macro_f1: bool,
    pub extraction_command: String,
    pub refusal_patterns_path: Option<PathBuf>,
    pub prohibited_fields: Vec<String>,
    pub adapters: BTreeMap<String, AdapterSpec>,
    pub mock: MockBehavior,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            provider: ProviderConfig::default(),
            alpha: 0.5,
            reference_fraction: 0.25,
            window: 8,
            max_frames: 100,
            batch_size_per_class: 25,
            f1_threshold: 0.8,
            rewrite_budget: 20,
            attempts_per_slot: 5,
            seed: 0,
            mode: PromptMode::Structured,
            video_specific: false,
            repeats: 1,
            jobs: 1,
            macro_f1: false,
            extraction_command: DEFAULT_EXTRACTION_COMMAND.into(),
            refusal_patterns_path: None,
            prohibited_fields: Vec::new(),
            adapters: BTreeMap::new(),
            mock: MockBehavior::default(),
        }
    }
}

impl PipelineConfig {
    /// Load a TOML config; unknown keys are rejected. Credentials come from
    /// the environment, never the file.
    pub fn load(path: &Path) -> Result<PipelineConfig, ConfigError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| ConfigError::Read(path.to_path_buf(), e))?;
        let mut config: PipelineConfig = toml::from_str(&text)
            .map_err(|e| ConfigError::Parse(path.to_path_buf(), e.to_string()))?;
        config.apply_env_overrides();
        config.validate()?;
        Ok(config)
    }

    pub fn apply_env_overrides(&mut self) {
        if let Ok(base) = std::env::var(ENV_API_BASE) {
            if !base.is_empty() {
                self.provider.endpoint = base;
            }
        }
        if let Ok(model) = std::env::var(ENV_MODEL_ID) {
            if !model.is_empty() {
                self.provider.model_id = model;
            }
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(ConfigError::Invalid(format!("alpha {} outside [0,1]", self.alpha)));
        }
        if !(self.reference_fraction > 0.0 && self.reference_fraction < 1.0) {
            return Err(ConfigError::Invalid(format!(
                "reference_fraction {} outside (0,1)",
                self.reference_fraction
            )));
        }
        if self.window == 0 || self.max_frames == 0 {
            return Err(ConfigError::Invalid("window and max_frames must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.f1_threshold) {
            return Err(ConfigError::Invalid(format!(
                "f1_threshold {} outside [0,1]",
                self.f1_threshold
            )));
        }
        if self.repeats == 0 {
            return Err(ConfigError::Invalid("repeats must be >= 1".into()));
        }
        if self.provider.kind == ProviderKind::Http && self.provider.endpoint.is_empty() {
            return Err(ConfigError::Invalid(
                format!("http provider needs provider.endpoint or {ENV_API_BASE}"),
            ));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_pipeline_constants() {
        let c = PipelineConfig::default();
        assert_eq!(c.alpha, 0.5);
        assert_eq!(c.reference_fraction, 0.25);
        assert_eq!(c.window, 8);
        assert_eq!(c.max_frames, 100);
        assert_eq!(c.batch_size_per_class, 25);
        assert_eq!(c.f1_threshold, 0.8);
        assert_eq!(c.rewrite_budget, 20);
        assert_eq!(c.attempts_per_slot, 5);
        assert_eq!(c.repeats, 1);
        assert_eq!(c.mode, PromptMode::Structured);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = toml::from_str::<PipelineConfig>("alphaa = 0.5").unwrap_err();
        assert!(err.to_string().contains("alphaa"));
    }

    #[test]
    fn round_trips_through_toml() {
        let c = PipelineConfig::default();
        let text = c.to_toml();
        let back: PipelineConfig = toml::from_str(&text).unwrap();
        assert_eq!(back.alpha, c.alpha);
        assert_eq!(back.window, c.window);
        assert_eq!(back.extraction_command, c.extraction_command);
    }

    #[test]
    fn validation_catches_bad_values() {
        let mut c = PipelineConfig::default();
        c.alpha = 1.5;
        assert!(c.validate().is_err());
        let mut c = PipelineConfig::default();
        c.reference_fraction = 0.0;
        assert!(c.validate().is_err());
        let mut c = PipelineConfig::default();
        c.provider.kind = ProviderKind::Http;
        assert!(c.validate().is_err());
    }
}
