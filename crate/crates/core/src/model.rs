//! Shared domain types and the pure functions over them.
//!
//! Every other module depends on this one. Nothing here performs IO; all
//! values serialize to lower_snake_case JSON with upper-case enum strings.

use std::collections::{HashMap, HashSet};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Accuracy at or above which an iteration is accepted.
pub const DEFAULT_THRESHOLD: f64 = 0.85;
/// Consecutive non-improving iterations that stop the loop.
pub const PLATEAU_LIMIT: u32 = 3;
pub const DEFAULT_FPS: u32 = 24;
pub const DEFAULT_FRAME_COUNT: u32 = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("request text is empty")]
    EmptyRequest,
    #[error("no verdict for criterion `{0}`")]
    MissingVerdict(String),
    #[error("more than one verdict for criterion `{0}`")]
    DuplicateVerdict(String),
    #[error("verdict references unknown criterion `{0}`")]
    UnknownCriterion(String),
    #[error("criterion `{0}` has non-positive weight")]
    NonPositiveWeight(String),
    #[error("invalid animation description: {0}")]
    InvalidDescription(String),
    #[error("invalid technical requirements: {0}")]
    InvalidRequirements(String),
    #[error("invalid frame set: {0}")]
    InvalidFrameSet(String),
    #[error("threshold {0} outside (0, 1]")]
    InvalidThreshold(f64),
    #[error("no iterations to select from")]
    NoIterations,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserRequest {
    pub text: String,
    pub request_id: String,
    pub created_at: DateTime<Utc>,
}

impl UserRequest {
    pub fn new(text: impl Into<String>) -> Result<Self, ModelError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(ModelError::EmptyRequest);
        }
        Ok(Self {
            text,
            request_id: uuid::Uuid::new_v4().to_string(),
            created_at: Utc::now(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnimationDescription {
    pub narrative: String,
    pub physics_concepts: Vec<String>,
    pub motion_specs: String,
    pub visualization_guidance: String,
}

impl AnimationDescription {
    pub fn validate(&self) -> Result<(), ModelError> {
        let blank = |s: &str| s.trim().is_empty();
        if self.physics_concepts.is_empty() || self.physics_concepts.iter().any(|c| blank(c)) {
            return Err(ModelError::InvalidDescription(
                "physics_concepts must name at least one concept".into(),
            ));
        }
        for (name, value) in [
            ("narrative", &self.narrative),
            ("motion_specs", &self.motion_specs),
            ("visualization_guidance", &self.visualization_guidance),
        ] {
            if blank(value) {
                return Err(ModelError::InvalidDescription(format!("{name} is empty")));
            }
        }
        Ok(())
    }
}

/// A numeric value with its unit string, e.g. `2.0 Hz`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quantity {
    pub value: f64,
    pub unit: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaledParameter {
    pub name: String,
    pub real_value: Quantity,
    pub scaled_value: Quantity,
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationCriterion {
    pub id: String,
    pub description: String,
    pub priority_weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TechnicalRequirements {
    pub parameters: Vec<ScaledParameter>,
    pub duration_seconds: f64,
    pub frames_per_second: u32,
    pub time_step_seconds: f64,
    pub canvas_spec: String,
    pub numerical_notes: String,
    pub criteria: Vec<ValidationCriterion>,
}

impl TechnicalRequirements {
    /// Checks structural invariants; `frame_count` is the number of frames
    /// the capture protocol will ask for.
    pub fn validate(&self, frame_count: u32) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::InvalidRequirements(msg));
        if self.frames_per_second == 0 {
            return bad("frames_per_second must be positive".into());
        }
        if !(self.duration_seconds.is_finite() && self.duration_seconds > 0.0) {
            return bad(format!("duration_seconds {} must be > 0", self.duration_seconds));
        }
        let total_frames = self.duration_seconds * f64::from(self.frames_per_second);
        if total_frames + 1e-9 < f64::from(frame_count) {
            return bad(format!(
                "animation has {total_frames} frames, fewer than the {frame_count} to capture"
            ));
        }
        if !self.time_step_seconds.is_finite() {
            return bad("time_step_seconds must be finite".into());
        }
        if self.criteria.is_empty() {
            return bad("at least one validation criterion is required".into());
        }
        let mut seen = HashSet::new();
        for c in &self.criteria {
            if c.id.trim().is_empty() {
                return bad("criterion id is empty".into());
            }
            if !seen.insert(c.id.as_str()) {
                return bad(format!("duplicate criterion id `{}`", c.id));
            }
            if !(c.priority_weight.is_finite() && c.priority_weight > 0.0) {
                return Err(ModelError::NonPositiveWeight(c.id.clone()));
            }
        }
        for p in &self.parameters {
            let scaled = p.scaled_value.value;
            if !scaled.is_finite() || (p.real_value.value != 0.0 && scaled == 0.0) {
                return bad(format!("parameter `{}` has unusable scaled value {scaled}", p.name));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ExecutionStatus {
    Success,
    SyntaxError,
    RuntimeError,
    Timeout,
    SilentFailure,
}

impl ExecutionStatus {
    pub fn is_success(self) -> bool {
        self == ExecutionStatus::Success
    }
}

/// Points back at the attempt a script was repaired from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepairSource {
    pub attempt_index: u32,
    pub status: ExecutionStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedScript {
    pub source_text: String,
    pub attempt_index: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repaired_from: Option<RepairSource>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionOutcome {
    pub status: ExecutionStatus,
    pub stdout: String,
    pub stderr: String,
    pub produced_files: Vec<std::path::PathBuf>,
    pub wall_time_seconds: f64,
    pub exit_code: Option<i32>,
    /// Classifier note, e.g. a frame-contract violation that downgraded a run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
}

/// The rendered frames handed to the vision model, in temporal order.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSet {
    frames: Vec<Vec<u8>>,
    timestamps_seconds: Vec<f64>,
}

impl FrameSet {
    /// Builds a frame set, enforcing count and uniform strictly-increasing
    /// timestamps (spacing deviation at most one frame period).
    pub fn new(
        frames: Vec<Vec<u8>>,
        timestamps_seconds: Vec<f64>,
        expected_count: usize,
        frames_per_second: u32,
    ) -> Result<Self, ModelError> {
        if frames.len() != expected_count || timestamps_seconds.len() != expected_count {
            return Err(ModelError::InvalidFrameSet(format!(
                "expected {expected_count} frames and timestamps, got {} and {}",
                frames.len(),
                timestamps_seconds.len()
            )));
        }
        if timestamps_seconds.windows(2).any(|w| w[1] <= w[0]) {
            return Err(ModelError::InvalidFrameSet("timestamps not strictly increasing".into()));
        }
        let deviation = spacing_deviation(&timestamps_seconds);
        if frames_per_second > 0 && deviation > 1.0 / f64::from(frames_per_second) + 1e-12 {
            return Err(ModelError::InvalidFrameSet(format!(
                "timestamp spacing deviates by {deviation}s"
            )));
        }
        Ok(Self { frames, timestamps_seconds })
    }

    pub fn frames(&self) -> &[Vec<u8>] {
        &self.frames
    }

    pub fn timestamps_seconds(&self) -> &[f64] {
        &self.timestamps_seconds
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Largest difference between any two consecutive-timestamp gaps.
pub fn spacing_deviation(timestamps: &[f64]) -> f64 {
    let gaps: Vec<f64> = timestamps.windows(2).map(|w| w[1] - w[0]).collect();
    let max = gaps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = gaps.iter().copied().fold(f64::INFINITY, f64::min);
    if gaps.is_empty() {
        0.0
    } else {
        max - min
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Verdict {
    Pass,
    Fail,
    Uncertain,
}

impl Verdict {
    /// Score used in the weighted accuracy. UNCERTAIN counts as half
    /// regardless of the stated confidence.
    pub fn score(self) -> f64 {
        match self {
            Verdict::Pass => 1.0,
            Verdict::Fail => 0.0,
            Verdict::Uncertain => 0.5,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Pass => "PASS",
            Verdict::Fail => "FAIL",
            Verdict::Uncertain => "UNCERTAIN",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionVerdict {
    pub criterion_id: String,
    pub verdict: Verdict,
    pub confidence: f64,
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub verdicts: Vec<CriterionVerdict>,
    pub accuracy: f64,
    pub threshold: f64,
    pub passed: bool,
}

impl ValidationReport {
    /// Aggregates verdicts against the criteria. Verdicts are reordered to
    /// follow the criteria order.
    pub fn new(
        mut verdicts: Vec<CriterionVerdict>,
        criteria: &[ValidationCriterion],
        threshold: f64,
    ) -> Result<Self, ModelError> {
        if !(threshold > 0.0 && threshold <= 1.0) {
            return Err(ModelError::InvalidThreshold(threshold));
        }
        let accuracy = compute_accuracy(&verdicts, criteria)?;
        let order: HashMap<&str, usize> =
            criteria.iter().enumerate().map(|(i, c)| (c.id.as_str(), i)).collect();
        verdicts.sort_by_key(|v| order[v.criterion_id.as_str()]);
        Ok(Self { verdicts, accuracy, threshold, passed: accuracy >= threshold })
    }

    /// Report for an iteration that produced nothing to judge: every
    /// criterion fails with full confidence.
    pub fn failed(criteria: &[ValidationCriterion], threshold: f64, reason: &str) -> Self {
        let verdicts = criteria
            .iter()
            .map(|c| CriterionVerdict {
                criterion_id: c.id.clone(),
                verdict: Verdict::Fail,
                confidence: 1.0,
                rationale: reason.to_string(),
            })
            .collect();
        Self { verdicts, accuracy: 0.0, threshold, passed: false }
    }

    pub fn failing(&self) -> impl Iterator<Item = &CriterionVerdict> {
        self.verdicts.iter().filter(|v| v.verdict != Verdict::Pass)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ErrorSource {
    RequirementsError,
    ImplementationError,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RouteTarget {
    #[serde(rename = "AGENT1A")]
    Agent1A,
    #[serde(rename = "AGENT2")]
    Agent2,
}

impl ErrorSource {
    pub fn route_target(self) -> RouteTarget {
        match self {
            ErrorSource::RequirementsError => RouteTarget::Agent1A,
            ErrorSource::ImplementationError => RouteTarget::Agent2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnosis {
    pub error_source: ErrorSource,
    pub rationale: String,
    pub route_target: RouteTarget,
    /// Set when the classifier reply could not be parsed and the default
    /// route was taken.
    #[serde(default)]
    pub degraded: bool,
}

impl Diagnosis {
    pub fn new(error_source: ErrorSource, rationale: impl Into<String>) -> Self {
        Self {
            error_source,
            rationale: rationale.into(),
            route_target: error_source.route_target(),
            degraded: false,
        }
    }
}

/// What a routed stage receives: why the last iteration failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Feedback {
    pub diagnosis: Diagnosis,
    pub report: ValidationReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub index: u32,
    pub report: ValidationReport,
    /// Absent when requirements generation failed before any code existed.
    pub script: Option<GeneratedScript>,
    pub diagnosis: Option<Diagnosis>,
    pub cost_usd: f64,
    /// Sandbox executions spent in this iteration.
    pub attempts: u32,
    pub final_status: Option<ExecutionStatus>,
}

impl IterationRecord {
    pub fn accuracy(&self) -> f64 {
        self.report.accuracy
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum StopReason {
    ThresholdMet,
    Plateau,
    BudgetExhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineResult {
    pub best_iteration: u32,
    pub best_script: Option<GeneratedScript>,
    pub best_report: ValidationReport,
    pub iterations: Vec<IterationRecord>,
    pub total_cost_usd: f64,
    pub stop_reason: StopReason,
}

/// Priority-weighted accuracy: Σ wᵢ·sᵢ / Σ wᵢ over exactly one verdict per
/// criterion.
pub fn compute_accuracy(
    verdicts: &[CriterionVerdict],
    criteria: &[ValidationCriterion],
) -> Result<f64, ModelError> {
    let mut by_id: HashMap<&str, &CriterionVerdict> = HashMap::with_capacity(verdicts.len());
    for v in verdicts {
        if by_id.insert(v.criterion_id.as_str(), v).is_some() {
            return Err(ModelError::DuplicateVerdict(v.criterion_id.clone()));
        }
    }
    let mut weighted = 0.0;
    let mut total = 0.0;
    for c in criteria {
        if !(c.priority_weight.is_finite() && c.priority_weight > 0.0) {
            return Err(ModelError::NonPositiveWeight(c.id.clone()));
        }
        let v = by_id
            .remove(c.id.as_str())
            .ok_or_else(|| ModelError::MissingVerdict(c.id.clone()))?;
        weighted += c.priority_weight * v.verdict.score();
        total += c.priority_weight;
    }
    if let Some(id) = by_id.keys().next() {
        return Err(ModelError::UnknownCriterion((*id).to_string()));
    }
    if total == 0.0 {
        // No criteria means nothing was validated.
        return Ok(0.0);
    }
    Ok((weighted / total).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlateauUpdate {
    pub plateau_count: u32,
    pub should_stop: bool,
}

/// Advances the plateau counter after one iteration.
///
/// The counter increments whenever `latest` does not strictly exceed the
/// best accuracy seen so far and is never reset. With no prior result there
/// is nothing to plateau against.
pub fn update_plateau(latest: f64, best_so_far: Option<f64>, plateau_count: u32) -> PlateauUpdate {
    let plateau_count = match best_so_far {
        Some(best) if latest <= best => plateau_count + 1,
        _ => plateau_count,
    };
    PlateauUpdate { plateau_count, should_stop: plateau_count >= PLATEAU_LIMIT }
}

/// Highest-accuracy record; the earliest wins ties.
pub fn select_best(iterations: &[IterationRecord]) -> Result<&IterationRecord, ModelError> {
    let mut best: Option<&IterationRecord> = None;
    for record in iterations {
        match best {
            Some(b) if record.accuracy() <= b.accuracy() => {}
            _ => best = Some(record),
        }
    }
    best.ok_or(ModelError::NoIterations)
}
