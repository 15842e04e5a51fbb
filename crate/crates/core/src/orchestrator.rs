//! The convergence loop: interpret once, then iterate requirements → code →
//! validation → diagnosis until the threshold, a plateau, or the budget.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{info, warn};

use crate::codegen::{CodeGenerator, CodegenError, CodegenRun, CodegenSettings};
use crate::gateway::{summarize_costs, CostTable, Gateway, GatewayError};
use crate::interpreter::{InterpretError, Interpreter};
use crate::model::{
    select_best, update_plateau, AnimationDescription, Diagnosis, ErrorSource, ExecutionStatus, Feedback,
    GeneratedScript, IterationRecord, PipelineResult, RouteTarget, StopReason, TechnicalRequirements, UserRequest,
    ValidationReport, DEFAULT_THRESHOLD,
};
use crate::requirements::{RequirementsError, RequirementsGenerator, Revision};
use crate::sandbox::{FramePattern, SandboxError, SandboxConfig, ScriptRunner};
use crate::validator::{PerceptualValidator, ValidationError, ValidatorSettings};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub threshold: f64,
    pub max_iterations: u32,
    pub max_attempts: u32,
    pub context_enrichment: bool,
    /// Extension for stored attempt scripts; not `.py` so stored attempts
    /// are never picked up as importable modules.
    pub attempt_extension: String,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            max_iterations: 10,
            max_attempts: crate::codegen::DEFAULT_MAX_ATTEMPTS,
            context_enrichment: true,
            attempt_extension: "py-src".into(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(format!("threshold must be in (0, 1], got {}", self.threshold));
        }
        if self.max_iterations == 0 {
            return Err("max_iterations must be at least 1".into());
        }
        if self.max_attempts == 0 {
            return Err("max_attempts must be at least 1".into());
        }
        if self.attempt_extension.is_empty() || self.attempt_extension.contains(['/', '.']) {
            return Err(format!("bad attempt_extension `{}`", self.attempt_extension));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("interpretation failed: {0}")]
    Interpret(#[from] InterpretError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("sandbox unavailable: {0}")]
    Sandbox(#[from] SandboxError),
    #[error("cannot write {path}: {message}")]
    Store { path: PathBuf, message: String },
    #[error("invalid pipeline configuration: {0}")]
    Config(String),
    #[error("internal error: {0}")]
    Internal(String),
}

/// Writes run artifacts under `<root>/<request_id>/`.
#[derive(Debug, Clone)]
pub struct RunStore {
    dir: PathBuf,
}

impl RunStore {
    pub fn create(root: &Path, request_id: &str) -> Result<Self, PipelineError> {
        let dir = root.join(request_id);
        std::fs::create_dir_all(&dir).map_err(|e| store_error(&dir, e))?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write_bytes(&self, relative: impl AsRef<Path>, bytes: &[u8]) -> Result<PathBuf, PipelineError> {
        let path = self.dir.join(relative);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| store_error(parent, e))?;
        }
        std::fs::write(&path, bytes).map_err(|e| store_error(&path, e))?;
        Ok(path)
    }

    pub fn write_json<T: Serialize + ?Sized>(&self, relative: impl AsRef<Path>, value: &T) -> Result<PathBuf, PipelineError> {
        let text = serde_json::to_string_pretty(value).map_err(|e| PipelineError::Internal(e.to_string()))?;
        self.write_bytes(relative, format!("{text}\n").as_bytes())
    }
}

fn store_error(path: &Path, e: std::io::Error) -> PipelineError {
    PipelineError::Store { path: path.to_path_buf(), message: e.to_string() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosisSummary {
    pub error_source: ErrorSource,
    pub route_target: RouteTarget,
    pub degraded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationSummary {
    pub index: u32,
    pub accuracy: f64,
    pub passed: bool,
    pub attempts: u32,
    pub final_status: Option<ExecutionStatus>,
    pub diagnosis: Option<DiagnosisSummary>,
    pub cost_usd: f64,
}

/// Run digest without ids, timestamps, wall times or paths, so identical
/// model replies give byte-identical files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub request: String,
    pub stop_reason: StopReason,
    pub best_iteration: u32,
    pub best_accuracy: f64,
    pub threshold: f64,
    pub iterations: Vec<IterationSummary>,
    pub total_cost_usd: f64,
    pub sandbox_executions: u32,
    pub cost_table: CostTable,
}

impl RunSummary {
    pub fn new(request: &UserRequest, result: &PipelineResult, threshold: f64, cost_table: CostTable) -> Self {
        let iterations = result
            .iterations
            .iter()
            .map(|r| IterationSummary {
                index: r.index,
                accuracy: r.accuracy(),
                passed: r.report.passed,
                attempts: r.attempts,
                final_status: r.final_status,
                diagnosis: r.diagnosis.as_ref().map(|d| DiagnosisSummary {
                    error_source: d.error_source,
                    route_target: d.route_target,
                    degraded: d.degraded,
                }),
                cost_usd: r.cost_usd,
            })
            .collect();
        Self {
            request: request.text.clone(),
            stop_reason: result.stop_reason,
            best_iteration: result.best_iteration,
            best_accuracy: result.best_report.accuracy,
            threshold,
            iterations,
            total_cost_usd: result.total_cost_usd,
            sandbox_executions: result.iterations.iter().map(|r| r.attempts).sum(),
            cost_table,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub description: AnimationDescription,
    pub result: PipelineResult,
    pub summary: RunSummary,
    pub run_dir: Option<PathBuf>,
}

pub struct Pipeline<'a> {
    gateway: &'a Gateway,
    runner: &'a dyn ScriptRunner,
    config: PipelineConfig,
    frame_count: u32,
    codegen: CodegenSettings,
    runs_root: Option<PathBuf>,
}

/// What one iteration produced before routing.
struct Stage {
    report: ValidationReport,
    script: Option<GeneratedScript>,
    attempts: u32,
    final_status: Option<ExecutionStatus>,
    /// Set when the iteration failed in a way that makes the route obvious
    /// without asking the classifier.
    diagnosis: Option<Diagnosis>,
}

impl<'a> Pipeline<'a> {
    pub fn new(
        gateway: &'a Gateway,
        runner: &'a dyn ScriptRunner,
        config: PipelineConfig,
        sandbox: &SandboxConfig,
    ) -> Result<Self, PipelineError> {
        config.validate().map_err(PipelineError::Config)?;
        FramePattern::parse(&sandbox.frame_filename_pattern)?;
        let codegen = CodegenSettings {
            max_attempts: config.max_attempts,
            timeout_seconds: sandbox.timeout_seconds,
            frame_filename_pattern: sandbox.frame_filename_pattern.clone(),
        };
        Ok(Self { gateway, runner, config, frame_count: sandbox.frame_count, codegen, runs_root: None })
    }

    /// Persist artifacts under `root/<request_id>/`.
    pub fn with_runs_root(mut self, root: impl Into<PathBuf>) -> Self {
        self.runs_root = Some(root.into());
        self
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn run(&self, request: &UserRequest) -> Result<RunOutput, PipelineError> {
        let store = match &self.runs_root {
            Some(root) => Some(RunStore::create(root, &request.request_id)?),
            None => None,
        };
        if let Some(s) = &store {
            s.write_json("request.json", request)?;
        }

        info!(request_id = %request.request_id, "interpreting request");
        let description = Interpreter::new(self.gateway).interpret(request)?;
        if let Some(s) = &store {
            s.write_json("description.json", &description)?;
        }

        let requirements_gen = RequirementsGenerator::new(self.gateway, self.frame_count);
        let codegen = CodeGenerator::new(self.gateway, self.codegen.clone());
        let validator = PerceptualValidator::new(
            self.gateway,
            ValidatorSettings { threshold: self.config.threshold, context_enrichment: self.config.context_enrichment },
        );

        let mut requirements: Option<TechnicalRequirements> = None;
        let mut last_script: Option<GeneratedScript> = None;
        let mut feedback: Option<Feedback> = None;
        let mut iterations: Vec<IterationRecord> = Vec::new();
        let mut best: Option<f64> = None;
        let mut plateau_count = 0;
        let mut stop_reason = StopReason::BudgetExhausted;

        for index in 1..=self.config.max_iterations {
            let ledger_mark = self.gateway.ledger_len();
            let iter_dir = PathBuf::from(format!("iteration_{index}"));
            info!(iteration = index, "starting iteration");

            let stage = self.iteration(
                &description,
                &requirements_gen,
                &codegen,
                &validator,
                &mut requirements,
                &mut last_script,
                feedback.as_ref(),
                store.as_ref().map(|s| (s, iter_dir.as_path())),
            )?;

            let report = stage.report;
            let diagnosis = if report.passed || index >= self.config.max_iterations {
                None
            } else if let Some(d) = stage.diagnosis {
                Some(d)
            } else {
                let reqs = requirements.as_ref().expect("validated iterations have requirements");
                let script = stage.script.as_ref().expect("validated iterations have a script");
                Some(match validator.diagnose(&report, reqs, script) {
                    Ok(d) => d,
                    Err(ValidationError::Gateway(e)) => return Err(e.into()),
                    Err(other) => return Err(PipelineError::Internal(other.to_string())),
                })
            };

            let record = IterationRecord {
                index,
                report: report.clone(),
                script: stage.script,
                diagnosis: diagnosis.clone(),
                cost_usd: self.gateway.total_since(ledger_mark),
                attempts: stage.attempts,
                final_status: stage.final_status,
            };
            info!(
                iteration = index,
                accuracy = record.accuracy(),
                passed = report.passed,
                route = ?diagnosis.as_ref().map(|d| d.route_target),
                cost_usd = record.cost_usd,
                "iteration finished"
            );
            if let Some(s) = &store {
                s.write_json(iter_dir.join("report.json"), &record.report)?;
                if let Some(d) = &record.diagnosis {
                    s.write_json(iter_dir.join("diagnosis.json"), d)?;
                }
            }
            let accuracy = record.accuracy();
            iterations.push(record);

            if report.passed {
                stop_reason = StopReason::ThresholdMet;
                break;
            }
            let update = update_plateau(accuracy, best, plateau_count);
            plateau_count = update.plateau_count;
            best = Some(best.map_or(accuracy, |b| b.max(accuracy)));
            if update.should_stop {
                info!(iteration = index, plateau_count, "accuracy plateaued");
                stop_reason = StopReason::Plateau;
                break;
            }
            feedback = diagnosis.map(|diagnosis| Feedback { diagnosis, report });
        }

        let best_record = select_best(&iterations).map_err(|e| PipelineError::Internal(e.to_string()))?.clone();
        let ledger = self.gateway.ledger();
        let result = PipelineResult {
            best_iteration: best_record.index,
            best_script: best_record.script,
            best_report: best_record.report,
            iterations,
            total_cost_usd: ledger.grand_total(),
            stop_reason,
        };
        let summary =
            RunSummary::new(request, &result, self.config.threshold, summarize_costs(&ledger, self.gateway.models()));
        info!(stop_reason = ?result.stop_reason, best_iteration = result.best_iteration, total_cost_usd = result.total_cost_usd, "run finished");
        if let Some(s) = &store {
            s.write_json("ledger.json", &ledger)?;
            s.write_json("result.json", &result)?;
            s.write_json("summary.json", &summary)?;
        }
        Ok(RunOutput { description, result, summary, run_dir: store.map(|s| s.dir().to_path_buf()) })
    }

    #[allow(clippy::too_many_arguments)]
    fn iteration(
        &self,
        description: &AnimationDescription,
        requirements_gen: &RequirementsGenerator<'_>,
        codegen: &CodeGenerator<'_>,
        validator: &PerceptualValidator<'_>,
        requirements: &mut Option<TechnicalRequirements>,
        last_script: &mut Option<GeneratedScript>,
        feedback: Option<&Feedback>,
        store: Option<(&RunStore, &Path)>,
    ) -> Result<Stage, PipelineError> {
        let threshold = self.config.threshold;
        let to_requirements = feedback.is_some_and(|f| f.diagnosis.route_target == RouteTarget::Agent1A);

        if requirements.is_none() || to_requirements {
            let revision = match (requirements.as_ref(), feedback) {
                (Some(previous), Some(feedback)) if to_requirements => Some(Revision { previous, feedback }),
                _ => None,
            };
            match requirements_gen.generate_requirements(description, revision) {
                Ok(fresh) => {
                    *requirements = Some(fresh);
                    // New requirements start code generation from scratch.
                    *last_script = None;
                }
                Err(RequirementsError::Gateway(e)) => return Err(e.into()),
                Err(RequirementsError::Unparseable { reason, .. }) => {
                    warn!(%reason, "requirements generation failed");
                    let criteria = requirements.as_ref().map(|r| r.criteria.as_slice()).unwrap_or(&[]);
                    return Ok(Stage {
                        report: ValidationReport::failed(criteria, threshold, "no usable requirements"),
                        script: None,
                        attempts: 0,
                        final_status: None,
                        diagnosis: Some(Diagnosis::new(
                            ErrorSource::RequirementsError,
                            format!("requirements reply unusable: {reason}"),
                        )),
                    });
                }
                Err(RequirementsError::MisroutedFeedback(t)) => {
                    return Err(PipelineError::Internal(format!("feedback for {t:?} sent to requirements")))
                }
            }
        }
        let reqs = requirements.as_ref().expect("set above");
        if let Some((s, dir)) = store {
            s.write_json(dir.join("requirements.json"), reqs)?;
        }

        let code_revision = match (feedback, last_script.as_ref()) {
            (Some(feedback), Some(previous)) if feedback.diagnosis.route_target == RouteTarget::Agent2 => {
                Some(Revision { previous, feedback })
            }
            _ => None,
        };
        let run = match codegen.generate_and_validate(reqs, code_revision, self.runner) {
            Ok(run) => run,
            Err(CodegenError::Gateway(e)) => return Err(e.into()),
            Err(CodegenError::Sandbox(e)) => return Err(e.into()),
            Err(CodegenError::Unparseable { .. }) => {
                warn!("code generation reply unusable");
                return Ok(Stage {
                    report: ValidationReport::failed(&reqs.criteria, threshold, "no usable script"),
                    script: None,
                    attempts: 0,
                    final_status: None,
                    diagnosis: Some(Diagnosis::new(ErrorSource::ImplementationError, "code reply had no code block")),
                });
            }
            Err(other) => return Err(PipelineError::Internal(other.to_string())),
        };
        if let Some((s, dir)) = store {
            self.store_attempts(s, dir, &run)?;
        }
        *last_script = Some(run.script.clone());
        let attempts = run.sandbox_runs();
        let final_status = Some(run.outcome.status);

        let Some(frames) = run.frames.as_ref().filter(|_| run.outcome.status.is_success()) else {
            let reason = format!(
                "no frames: last of {attempts} attempt(s) ended in {:?}",
                run.outcome.status
            );
            return Ok(Stage {
                report: ValidationReport::failed(&reqs.criteria, threshold, &reason),
                script: Some(run.script),
                attempts,
                final_status,
                diagnosis: Some(Diagnosis::new(ErrorSource::ImplementationError, reason)),
            });
        };
        if let Some((s, dir)) = store {
            let pattern = FramePattern::parse(&self.codegen.frame_filename_pattern)?;
            for (i, bytes) in frames.frames().iter().enumerate() {
                s.write_bytes(dir.join("frames").join(pattern.format(i as u32)), bytes)?;
            }
        }

        match validator.validate(frames, reqs) {
            Ok(report) => Ok(Stage { report, script: Some(run.script), attempts, final_status, diagnosis: None }),
            Err(ValidationError::Gateway(e)) => Err(e.into()),
            Err(other) => {
                warn!(error = %other, "validation reply unusable");
                let mut diagnosis =
                    Diagnosis::new(ErrorSource::ImplementationError, format!("validation unusable: {other}"));
                diagnosis.degraded = true;
                Ok(Stage {
                    report: ValidationReport::failed(&reqs.criteria, threshold, "validation reply unusable"),
                    script: Some(run.script),
                    attempts,
                    final_status,
                    diagnosis: Some(diagnosis),
                })
            }
        }
    }

    fn store_attempts(&self, store: &RunStore, dir: &Path, run: &CodegenRun) -> Result<(), PipelineError> {
        let ext = &self.config.attempt_extension;
        for attempt in &run.attempts {
            let j = attempt.script.attempt_index;
            let base = dir.join("attempts");
            store.write_bytes(base.join(format!("attempt_{j}.{ext}")), attempt.script.source_text.as_bytes())?;
            store.write_json(base.join(format!("attempt_{j}.outcome.json")), &attempt.outcome)?;
        }
        Ok(())
    }
}
