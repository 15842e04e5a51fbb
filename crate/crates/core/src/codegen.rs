//! Agent 2: requirements → animation script, with an execute-and-repair
//! loop bounded by the attempt budget.

use thiserror::Error;
use tracing::{info, warn};

use crate::gateway::{AgentLabel, Gateway, GatewayError};
use crate::model::{
    ExecutionOutcome, ExecutionStatus, FrameSet, GeneratedScript, RepairSource, RouteTarget, TechnicalRequirements,
};
use crate::prompts::{RenderedPrompt, AGENT2_GENERATE, AGENT2_REFORMAT, AGENT2_REPAIR, AGENT2_REVISION};
use crate::requirements::{failing_criteria_block, Revision};
use crate::sandbox::{SandboxError, ScriptRunner};
use crate::structured::first_code_block;

pub const DEFAULT_MAX_ATTEMPTS: u32 = 5;

pub const SYNTAX_DIRECTIVE: &str =
    "SYNTAX ERROR: the script could not be parsed. Fix the syntax. The parser reported:";
pub const RUNTIME_DIRECTIVE: &str =
    "RUNTIME ERROR: the script raised an error while running. Fix the cause. The last lines of stderr were:";
pub const TIMEOUT_DIRECTIVE: &str = "TIMEOUT: the script ran past its time limit and was killed. Reduce the \
computational cost (coarser grids, fewer time steps, vectorized updates, render only the required frames) \
while preserving the physics.";
pub const SILENT_DIRECTIVE: &str = "SILENT FAILURE: the script exited cleanly but produced no usable frames. \
Emit the frame files: save exactly FRAME_COUNT PNG images with savefig into FRAMES_DIR.";

const STDERR_TAIL_LINES: usize = 40;
const EVIDENCE_MAX_CHARS: usize = 6000;

#[derive(Debug, Error)]
pub enum CodegenError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Sandbox(#[from] SandboxError),
    #[error("code reply had no usable code block after reformat retry")]
    Unparseable { raw: String },
    #[error("attempt budget of {max_attempts} exhausted")]
    BudgetExhausted { max_attempts: u32 },
    #[error("repair requested for a successful outcome")]
    NothingToRepair,
    #[error("feedback routed to {0:?} cannot revise code")]
    MisroutedFeedback(RouteTarget),
}

#[derive(Debug, Clone)]
pub struct AttemptRecord {
    pub script: GeneratedScript,
    pub outcome: ExecutionOutcome,
    pub workdir: Option<std::path::PathBuf>,
}

/// Result of one generate-and-validate loop.
#[derive(Debug, Clone)]
pub struct CodegenRun {
    pub script: GeneratedScript,
    pub outcome: ExecutionOutcome,
    pub frames: Option<FrameSet>,
    pub attempts: Vec<AttemptRecord>,
    /// Set when the loop stopped early because a repair reply was unusable.
    pub repair_error: Option<String>,
}

impl CodegenRun {
    pub fn sandbox_runs(&self) -> u32 {
        self.attempts.len() as u32
    }
}

#[derive(Debug, Clone)]
pub struct CodegenSettings {
    pub max_attempts: u32,
    pub timeout_seconds: f64,
    pub frame_filename_pattern: String,
}

impl Default for CodegenSettings {
    fn default() -> Self {
        Self { max_attempts: DEFAULT_MAX_ATTEMPTS, timeout_seconds: 30.0, frame_filename_pattern: "frame_%03d.png".into() }
    }
}

/// Directive line for a failure class.
pub fn repair_directive(status: ExecutionStatus) -> Option<&'static str> {
    match status {
        ExecutionStatus::SyntaxError => Some(SYNTAX_DIRECTIVE),
        ExecutionStatus::RuntimeError => Some(RUNTIME_DIRECTIVE),
        ExecutionStatus::Timeout => Some(TIMEOUT_DIRECTIVE),
        ExecutionStatus::SilentFailure => Some(SILENT_DIRECTIVE),
        ExecutionStatus::Success => None,
    }
}

fn tail(text: &str, lines: usize) -> String {
    let all: Vec<&str> = text.lines().collect();
    let start = all.len().saturating_sub(lines);
    let joined = all[start..].join("\n");
    if joined.len() > EVIDENCE_MAX_CHARS {
        let cut = joined.len() - EVIDENCE_MAX_CHARS;
        let cut = (cut..joined.len()).find(|i| joined.is_char_boundary(*i)).unwrap_or(joined.len());
        joined[cut..].to_string()
    } else {
        joined
    }
}

fn evidence(outcome: &ExecutionOutcome) -> String {
    let note = outcome.diagnostic.as_deref().map(|d| format!("Checker note: {d}\n")).unwrap_or_default();
    let body = match outcome.status {
        ExecutionStatus::SyntaxError => outcome.stderr.trim_end().to_string(),
        ExecutionStatus::RuntimeError => tail(&outcome.stderr, STDERR_TAIL_LINES),
        ExecutionStatus::Timeout => format!(
            "Last output:\n{}\nLast errors:\n{}",
            tail(&outcome.stdout, 10),
            tail(&outcome.stderr, 10)
        ),
        ExecutionStatus::SilentFailure => format!(
            "Files produced: {}. Last output:\n{}",
            outcome.produced_files.len(),
            tail(&outcome.stdout, 10)
        ),
        ExecutionStatus::Success => String::new(),
    };
    format!("{note}{body}")
}

pub struct CodeGenerator<'a> {
    gateway: &'a Gateway,
    settings: CodegenSettings,
}

impl<'a> CodeGenerator<'a> {
    pub fn new(gateway: &'a Gateway, settings: CodegenSettings) -> Self {
        Self { gateway, settings }
    }

    pub fn build_generate_prompt(
        &self,
        requirements: &TechnicalRequirements,
        revision: Option<Revision<'_, GeneratedScript>>,
    ) -> RenderedPrompt {
        let revision = revision.map(|r| {
            AGENT2_REVISION
                .render(&[
                    ("rationale", &r.feedback.diagnosis.rationale),
                    ("accuracy", &format!("{:.3}", r.feedback.report.accuracy)),
                    ("threshold", &format!("{:.2}", r.feedback.report.threshold)),
                    ("failing", &failing_criteria_block(r.feedback, &requirements.criteria)),
                    ("previous", &r.previous.source_text),
                ])
                .text
        });
        AGENT2_GENERATE.render(&[
            ("language", "Python"),
            ("frame_pattern", &self.settings.frame_filename_pattern),
            ("timeout", &format!("{}", self.settings.timeout_seconds)),
            ("requirements", &serde_json::to_string_pretty(requirements).expect("requirements serialize")),
            ("revision", revision.as_deref().unwrap_or("")),
        ])
    }

    pub fn build_repair_prompt(&self, script: &GeneratedScript, outcome: &ExecutionOutcome) -> Option<RenderedPrompt> {
        let directive = repair_directive(outcome.status)?;
        Some(AGENT2_REPAIR.render(&[
            ("attempt", &script.attempt_index.to_string()),
            ("max_attempts", &self.settings.max_attempts.to_string()),
            ("directive", directive),
            ("evidence", &evidence(outcome)),
            ("script", &script.source_text),
            ("frame_pattern", &self.settings.frame_filename_pattern),
        ]))
    }

    /// First attempt, optionally revising a script that failed validation.
    pub fn generate_script(
        &self,
        requirements: &TechnicalRequirements,
        revision: Option<Revision<'_, GeneratedScript>>,
    ) -> Result<GeneratedScript, CodegenError> {
        if let Some(r) = revision {
            if r.feedback.diagnosis.route_target != RouteTarget::Agent2 {
                return Err(CodegenError::MisroutedFeedback(r.feedback.diagnosis.route_target));
            }
        }
        let source_text = self.request_code(&self.build_generate_prompt(requirements, revision))?;
        Ok(GeneratedScript { source_text, attempt_index: 1, repaired_from: None })
    }

    /// Next attempt after a failed execution. The new script replaces the
    /// old one wholesale.
    pub fn repair_script(
        &self,
        script: &GeneratedScript,
        outcome: &ExecutionOutcome,
    ) -> Result<GeneratedScript, CodegenError> {
        if script.attempt_index >= self.settings.max_attempts {
            return Err(CodegenError::BudgetExhausted { max_attempts: self.settings.max_attempts });
        }
        let prompt = self.build_repair_prompt(script, outcome).ok_or(CodegenError::NothingToRepair)?;
        let source_text = self.request_code(&prompt)?;
        Ok(GeneratedScript {
            source_text,
            attempt_index: script.attempt_index + 1,
            repaired_from: Some(RepairSource { attempt_index: script.attempt_index, status: outcome.status }),
        })
    }

    fn request_code(&self, prompt: &RenderedPrompt) -> Result<String, CodegenError> {
        let agent = AgentLabel::Agent2;
        let reply = self.gateway.complete(agent, agent.tier(), prompt)?;
        if let Some(code) = first_code_block(&reply.text) {
            return Ok(code.to_string());
        }
        warn!("code reply had no code block, asking for reformat");
        let reply = self.gateway.complete(agent, agent.tier(), &AGENT2_REFORMAT.render(&[("reply", &reply.text)]))?;
        first_code_block(&reply.text).map(str::to_string).ok_or(CodegenError::Unparseable { raw: reply.text })
    }

    /// Generate, execute, classify, repair; at most `max_attempts` sandbox
    /// runs. Returns the successful attempt or the last failure.
    pub fn generate_and_validate(
        &self,
        requirements: &TechnicalRequirements,
        revision: Option<Revision<'_, GeneratedScript>>,
        runner: &dyn ScriptRunner,
    ) -> Result<CodegenRun, CodegenError> {
        let mut script = self.generate_script(requirements, revision)?;
        let mut attempts = Vec::new();
        loop {
            let run = runner.run(&script, requirements)?;
            info!(attempt = script.attempt_index, status = ?run.outcome.status, "sandbox attempt");
            attempts.push(AttemptRecord {
                script: script.clone(),
                outcome: run.outcome.clone(),
                workdir: run.workdir.clone(),
            });
            let finished = |script, repair_error| CodegenRun {
                script,
                outcome: run.outcome.clone(),
                frames: run.frames.clone(),
                attempts: attempts.clone(),
                repair_error,
            };
            if run.outcome.status.is_success() || script.attempt_index >= self.settings.max_attempts {
                return Ok(finished(script, None));
            }
            match self.repair_script(&script, &run.outcome) {
                Ok(next) => script = next,
                Err(CodegenError::Unparseable { .. }) => {
                    warn!(attempt = script.attempt_index, "repair reply unusable; keeping last failure");
                    return Ok(finished(script, Some("repair reply had no usable code block".into())));
                }
                Err(other) => return Err(other),
            }
        }
    }
}
