//! TOML configuration. The shipped defaults live in `config/simforge.toml`.

use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{GatewayConfig, ModelTier, ModelsConfig, TierKind};
use crate::orchestrator::PipelineConfig;
use crate::sandbox::SandboxConfig;

pub const DEFAULT_CONFIG_TOML: &str = include_str!("../config/simforge.toml");

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEntry {
    pub model_name: String,
    pub input_price_per_mtok: f64,
    pub output_price_per_mtok: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelsSection {
    pub reasoning: ModelEntry,
    pub classification: ModelEntry,
}

impl Default for ModelsSection {
    fn default() -> Self {
        let models = ModelsConfig::default();
        let entry = |t: &ModelTier| ModelEntry {
            model_name: t.model_name.clone(),
            input_price_per_mtok: t.input_price_per_mtok,
            output_price_per_mtok: t.output_price_per_mtok,
        };
        Self { reasoning: entry(&models.reasoning), classification: entry(&models.classification) }
    }
}

impl ModelsSection {
    pub fn to_models(&self) -> ModelsConfig {
        let tier = |kind, e: &ModelEntry| ModelTier {
            tier: kind,
            model_name: e.model_name.clone(),
            input_price_per_mtok: e.input_price_per_mtok,
            output_price_per_mtok: e.output_price_per_mtok,
        };
        ModelsConfig {
            reasoning: tier(TierKind::Reasoning, &self.reasoning),
            classification: tier(TierKind::Classification, &self.classification),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GatewaySection {
    pub base_url: String,
    pub api_key_env: String,
    pub max_retries: u32,
    pub backoff_initial_ms: u64,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub request_timeout_s: u64,
}

impl Default for GatewaySection {
    fn default() -> Self {
        let g = GatewayConfig::default();
        Self {
            base_url: "https://api.anthropic.com".into(),
            api_key_env: "ANTHROPIC_API_KEY".into(),
            max_retries: g.max_retries,
            backoff_initial_ms: g.backoff_initial.as_millis() as u64,
            temperature: g.temperature,
            max_output_tokens: g.max_output_tokens,
            request_timeout_s: 300,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub models: ModelsSection,
    pub gateway: GatewaySection,
    pub pipeline: PipelineConfig,
    pub sandbox: SandboxConfig,
}

impl Config {
    /// Shipped defaults.
    pub fn shipped() -> Self {
        Self::from_toml(DEFAULT_CONFIG_TOML).expect("shipped config is valid")
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let config: Config = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Read { path: path.display().to_string(), source })?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let models = self.models.to_models();
        for tier in [&models.reasoning, &models.classification] {
            if tier.input_price_per_mtok < 0.0 || tier.output_price_per_mtok < 0.0 {
                return Err(ConfigError::Invalid(format!("{} has a negative price", tier.model_name)));
            }
        }
        self.pipeline.validate().map_err(ConfigError::Invalid)?;
        self.sandbox.validate().map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn gateway_config(&self) -> GatewayConfig {
        GatewayConfig {
            models: self.models.to_models(),
            max_retries: self.gateway.max_retries,
            backoff_initial: Duration::from_millis(self.gateway.backoff_initial_ms),
            expected_image_count: self.sandbox.frame_count as usize,
            max_output_tokens: self.gateway.max_output_tokens,
            temperature: self.gateway.temperature,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_file_matches_code_defaults() {
        let shipped = Config::shipped();
        let mut defaults = Config::default();
        // The temp-dir default is environment specific and not in the file.
        defaults.sandbox.workdir_root = shipped.sandbox.workdir_root.clone();
        assert_eq!(shipped, defaults);
        assert_eq!(shipped.pipeline.threshold, 0.85);
        assert_eq!(shipped.pipeline.max_iterations, 10);
        assert_eq!(shipped.pipeline.max_attempts, 5);
        assert_eq!(shipped.sandbox.timeout_seconds, 30.0);
        assert_eq!(shipped.sandbox.frame_count, 8);
    }

    #[test]
    fn partial_file_overrides_only_given_keys() {
        let c = Config::from_toml("[pipeline]\nthreshold = 0.9\n[sandbox]\ntimeout_seconds = 5.0\n").unwrap();
        assert_eq!(c.pipeline.threshold, 0.9);
        assert_eq!(c.pipeline.max_iterations, 10);
        assert_eq!(c.sandbox.timeout_seconds, 5.0);
        assert_eq!(c.models.reasoning.model_name, "claude-sonnet-4-5");
    }

    #[test]
    fn rejects_invalid_values() {
        assert!(Config::from_toml("[pipeline]\nthreshold = 0.0\n").is_err());
        assert!(Config::from_toml("[sandbox]\ntimeout_seconds = -1.0\n").is_err());
        assert!(Config::from_toml("[models.reasoning]\nmodel_name = \"m\"\ninput_price_per_mtok = -1.0\noutput_price_per_mtok = 1.0\n[models.classification]\nmodel_name = \"c\"\ninput_price_per_mtok = 1.0\noutput_price_per_mtok = 1.0\n").is_err());
    }
}
