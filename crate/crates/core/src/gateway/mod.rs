//! The single path by which any stage talks to a model.
//!
//! A [`Gateway`] owns the transport, the cost ledger, and optionally a
//! transcript to record to or replay from. In replay mode the transport is
//! never touched.

pub mod ledger;
pub mod transcript;
pub mod transport;

use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{debug, warn};

use crate::imaging::decode_png;
use crate::prompts::RenderedPrompt;
pub use ledger::{summarize_costs, token_cost, CostLedger, CostRow, CostTable, ExchangeSummary};
use transcript::{ReplayKey, ReplayStore, TranscriptRecord, TranscriptWriter, SCHEMA_VERSION};
pub use transport::{
    AnthropicTransport, FailingTransport, ModelRequest, ModelResponse, StubTransport, Transport, TransportError,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AgentLabel {
    Agent1,
    Agent1A,
    Agent2,
    #[serde(rename = "Agent3-Context")]
    Agent3Context,
    #[serde(rename = "Agent3-Diagnosis")]
    Agent3Diagnosis,
    #[serde(rename = "Agent3-Perception")]
    Agent3Perception,
}

impl AgentLabel {
    pub const ALL: [AgentLabel; 6] = [
        AgentLabel::Agent1,
        AgentLabel::Agent1A,
        AgentLabel::Agent2,
        AgentLabel::Agent3Context,
        AgentLabel::Agent3Diagnosis,
        AgentLabel::Agent3Perception,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AgentLabel::Agent1 => "Agent1",
            AgentLabel::Agent1A => "Agent1A",
            AgentLabel::Agent2 => "Agent2",
            AgentLabel::Agent3Context => "Agent3-Context",
            AgentLabel::Agent3Diagnosis => "Agent3-Diagnosis",
            AgentLabel::Agent3Perception => "Agent3-Perception",
        }
    }

    /// Diagnosis runs on the cheap tier; everything else needs reasoning.
    pub fn tier(self) -> TierKind {
        match self {
            AgentLabel::Agent3Diagnosis => TierKind::Classification,
            _ => TierKind::Reasoning,
        }
    }
}

impl std::fmt::Display for AgentLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TierKind {
    Reasoning,
    Classification,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelTier {
    pub tier: TierKind,
    pub model_name: String,
    pub input_price_per_mtok: f64,
    pub output_price_per_mtok: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelsConfig {
    pub reasoning: ModelTier,
    pub classification: ModelTier,
}

impl Default for ModelsConfig {
    fn default() -> Self {
        Self {
            reasoning: ModelTier {
                tier: TierKind::Reasoning,
                model_name: "claude-sonnet-4-5".into(),
                input_price_per_mtok: 3.0,
                output_price_per_mtok: 15.0,
            },
            classification: ModelTier {
                tier: TierKind::Classification,
                model_name: "claude-haiku-4-5".into(),
                input_price_per_mtok: 1.0,
                output_price_per_mtok: 5.0,
            },
        }
    }
}

impl ModelsConfig {
    pub fn tier(&self, kind: TierKind) -> &ModelTier {
        match kind {
            TierKind::Reasoning => &self.reasoning,
            TierKind::Classification => &self.classification,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GatewayConfig {
    pub models: ModelsConfig,
    /// Retries after the first failed attempt, for transient errors only.
    pub max_retries: u32,
    /// Backoff before retry `n` is `backoff_initial * 2^n`.
    pub backoff_initial: Duration,
    pub expected_image_count: usize,
    pub max_output_tokens: u32,
    pub temperature: f64,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            models: ModelsConfig::default(),
            max_retries: 3,
            backoff_initial: Duration::from_secs(1),
            expected_image_count: crate::model::DEFAULT_FRAME_COUNT as usize,
            max_output_tokens: 8192,
            temperature: 0.0,
        }
    }
}

/// A full model exchange, before it is reduced to a ledger entry and a
/// transcript record.
#[derive(Debug, Clone, PartialEq)]
pub struct LlmExchange {
    pub agent_label: AgentLabel,
    pub tier: ModelTier,
    pub prompt_text: String,
    pub attached_images: Vec<Vec<u8>>,
    pub response_text: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub cost_usd: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub cost_usd: f64,
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("{agent}: transport failed after {attempts} attempt(s): {message}")]
    Transport { agent: AgentLabel, attempts: u32, message: String },
    #[error("{agent}: no recorded exchange for prompt {prompt_sha256} ({images} image(s))")]
    ReplayMiss { agent: AgentLabel, prompt_sha256: String, images: usize },
    #[error("invalid model input: {0}")]
    Input(String),
    #[error("transcript {path}: {message}")]
    Transcript { path: PathBuf, message: String },
    #[error("transcript schema version {found} does not match supported version {expected}")]
    SchemaVersion { found: u64, expected: u32 },
}

impl GatewayError {
    fn transcript(path: &Path, err: impl std::fmt::Display) -> Self {
        GatewayError::Transcript { path: path.to_path_buf(), message: err.to_string() }
    }
}

enum Mode {
    Live,
    Record { writer: Mutex<TranscriptWriter>, path: PathBuf },
    Replay(Mutex<ReplayStore>),
}

pub struct Gateway {
    transport: Box<dyn Transport>,
    config: GatewayConfig,
    mode: Mode,
    ledger: Mutex<CostLedger>,
}

impl Gateway {
    /// Live gateway: every call goes to `transport`.
    pub fn new(transport: impl Transport + 'static, config: GatewayConfig) -> Self {
        Self { transport: Box::new(transport), config, mode: Mode::Live, ledger: Mutex::new(CostLedger::new()) }
    }

    /// Appends every exchange to the transcript at `path`.
    pub fn record_mode(mut self, path: &Path) -> Result<Self, GatewayError> {
        let writer = TranscriptWriter::open(path)?;
        self.mode = Mode::Record { writer: Mutex::new(writer), path: path.to_path_buf() };
        Ok(self)
    }

    /// Serves exchanges from the transcript at `path`; the transport is
    /// never called.
    pub fn replay_mode(mut self, path: &Path) -> Result<Self, GatewayError> {
        let store = ReplayStore::load(path)?;
        self.mode = Mode::Replay(Mutex::new(store));
        Ok(self)
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    pub fn models(&self) -> &ModelsConfig {
        &self.config.models
    }

    pub fn is_replay(&self) -> bool {
        matches!(self.mode, Mode::Replay(_))
    }

    pub fn ledger(&self) -> CostLedger {
        self.ledger.lock().unwrap().clone()
    }

    pub fn ledger_len(&self) -> usize {
        self.ledger.lock().unwrap().len()
    }

    pub fn total_since(&self, entries: usize) -> f64 {
        self.ledger.lock().unwrap().total_since(entries)
    }

    pub fn complete(
        &self,
        agent: AgentLabel,
        tier: TierKind,
        prompt: &RenderedPrompt,
    ) -> Result<Completion, GatewayError> {
        self.dispatch(agent, tier, prompt, Vec::new())
    }

    /// As [`Gateway::complete`] with PNG attachments. The image count must
    /// match the configured count and every image must decode.
    pub fn complete_with_images(
        &self,
        agent: AgentLabel,
        tier: TierKind,
        prompt: &RenderedPrompt,
        images: &[Vec<u8>],
    ) -> Result<Completion, GatewayError> {
        if images.len() != self.config.expected_image_count {
            return Err(GatewayError::Input(format!(
                "expected {} images, got {}",
                self.config.expected_image_count,
                images.len()
            )));
        }
        for (i, image) in images.iter().enumerate() {
            decode_png(image).map_err(|e| GatewayError::Input(format!("image {i} is not a valid PNG: {e}")))?;
        }
        self.dispatch(agent, tier, prompt, images.to_vec())
    }

    fn dispatch(
        &self,
        agent: AgentLabel,
        tier_kind: TierKind,
        prompt: &RenderedPrompt,
        images: Vec<Vec<u8>>,
    ) -> Result<Completion, GatewayError> {
        if prompt.text.trim().is_empty() {
            return Err(GatewayError::Input("prompt is empty".into()));
        }
        let tier = self.config.models.tier(tier_kind).clone();
        let response = match &self.mode {
            Mode::Replay(store) => {
                let key = ReplayKey::new(agent, &prompt.text, &images);
                let record = store.lock().unwrap().take(&key).ok_or_else(|| GatewayError::ReplayMiss {
                    agent,
                    prompt_sha256: key.prompt_sha256.clone(),
                    images: images.len(),
                })?;
                ModelResponse {
                    text: record.response_text,
                    input_tokens: record.input_tokens,
                    output_tokens: record.output_tokens,
                }
            }
            Mode::Live | Mode::Record { .. } => self.send_with_retry(agent, &tier, &prompt.text, &images)?,
        };

        let cost_usd = token_cost(&tier, response.input_tokens, response.output_tokens);
        let exchange = LlmExchange {
            agent_label: agent,
            tier,
            prompt_text: prompt.text.clone(),
            attached_images: images,
            response_text: response.text,
            input_tokens: response.input_tokens,
            output_tokens: response.output_tokens,
            cost_usd,
        };

        if let Mode::Record { writer, path } = &self.mode {
            let record = TranscriptRecord {
                schema_version: SCHEMA_VERSION,
                agent_label: agent,
                template_version: prompt.template.clone(),
                prompt_sha256: transcript::sha256_hex(exchange.prompt_text.as_bytes()),
                image_sha256s: exchange.attached_images.iter().map(|i| transcript::sha256_hex(i)).collect(),
                response_text: exchange.response_text.clone(),
                input_tokens: exchange.input_tokens,
                output_tokens: exchange.output_tokens,
            };
            writer.lock().unwrap().append(&record).map_err(|e| GatewayError::transcript(path, e))?;
        }

        self.ledger.lock().unwrap().append(ExchangeSummary {
            agent_label: agent,
            tier: exchange.tier.tier,
            model_name: exchange.tier.model_name.clone(),
            input_tokens: exchange.input_tokens,
            output_tokens: exchange.output_tokens,
            image_count: exchange.attached_images.len(),
            cost_usd,
        });
        debug!(agent = %agent, template = %prompt.template, cost_usd, "model exchange");

        Ok(Completion {
            text: exchange.response_text,
            input_tokens: exchange.input_tokens,
            output_tokens: exchange.output_tokens,
            cost_usd,
        })
    }

    fn send_with_retry(
        &self,
        agent: AgentLabel,
        tier: &ModelTier,
        prompt: &str,
        images: &[Vec<u8>],
    ) -> Result<ModelResponse, GatewayError> {
        let request = ModelRequest {
            agent,
            model: tier.model_name.clone(),
            prompt: prompt.to_string(),
            images: images.to_vec(),
            max_tokens: self.config.max_output_tokens,
            temperature: self.config.temperature,
        };
        let mut attempt = 0;
        loop {
            attempt += 1;
            match self.transport.send(&request) {
                Ok(response) => return Ok(response),
                Err(err) if err.transient && attempt <= self.config.max_retries => {
                    let delay = self.config.backoff_initial * 2u32.pow(attempt - 1);
                    warn!(agent = %agent, attempt, ?delay, error = %err, "transient model error, retrying");
                    std::thread::sleep(delay);
                }
                Err(err) => {
                    return Err(GatewayError::Transport { agent, attempts: attempt, message: err.message });
                }
            }
        }
    }
}
