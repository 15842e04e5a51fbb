//! Agent 1A: description → scaled technical requirements and criteria.
//!
//! Scaling is left to the model. [`check_scaling`] only lints the result
//! against the usual visibility bands and never blocks the pipeline.

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use crate::gateway::{AgentLabel, Gateway, GatewayError};
use crate::model::{
    AnimationDescription, Feedback, RouteTarget, ScaledParameter, TechnicalRequirements, ValidationCriterion,
    DEFAULT_FPS,
};
use crate::prompts::{AGENT1A_REFORMAT, AGENT1A_REQUIREMENTS, AGENT1A_REVISION};
use crate::structured::first_json_block;

#[derive(Debug, Error)]
pub enum RequirementsError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("requirements reply unusable after reformat retry: {reason}")]
    Unparseable { reason: String, raw: String },
    #[error("feedback routed to {0:?} cannot revise requirements")]
    MisroutedFeedback(RouteTarget),
}

/// A previous artifact plus the feedback explaining why it failed.
#[derive(Debug)]
pub struct Revision<'a, T> {
    pub previous: &'a T,
    pub feedback: &'a Feedback,
}

impl<T> Clone for Revision<'_, T> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<T> Copy for Revision<'_, T> {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ParameterKind {
    Frequency,
    Speed,
    TimeStep,
}

impl ParameterKind {
    /// Kind implied by a unit string; `None` for units the lint ignores.
    pub fn from_unit(unit: &str) -> Option<Self> {
        let unit: String = unit.chars().filter(|c| !c.is_whitespace()).collect::<String>().to_lowercase();
        match unit.as_str() {
            "hz" | "hertz" => Some(ParameterKind::Frequency),
            "units/s" | "units/second" | "unit/s" | "unit/second" | "units/sec" | "u/s" => Some(ParameterKind::Speed),
            "s/frame" | "seconds/frame" | "second/frame" | "sec/frame" => Some(ParameterKind::TimeStep),
            _ => None,
        }
    }

    /// Inclusive range in which motion of this kind is comfortably visible.
    pub fn visible_band(self) -> (f64, f64) {
        match self {
            ParameterKind::Frequency => (0.1, 5.0),
            ParameterKind::Speed => (0.01, 1.0),
            ParameterKind::TimeStep => (0.04, 0.2),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingWarning {
    pub parameter: String,
    pub kind: ParameterKind,
    pub value: f64,
    pub band: (f64, f64),
}

fn lint(name: &str, kind: ParameterKind, value: f64) -> Option<ScalingWarning> {
    let (lo, hi) = kind.visible_band();
    (value < lo || value > hi).then(|| ScalingWarning { parameter: name.to_string(), kind, value, band: (lo, hi) })
}

/// Flags every scaled value strictly outside its band. The top-level time
/// step is checked as a time step.
pub fn check_scaling(requirements: &TechnicalRequirements) -> Vec<ScalingWarning> {
    let mut warnings: Vec<ScalingWarning> = requirements
        .parameters
        .iter()
        .filter_map(|p| {
            let kind = ParameterKind::from_unit(&p.scaled_value.unit)?;
            lint(&p.name, kind, p.scaled_value.value)
        })
        .collect();
    warnings.extend(lint("time_step_seconds", ParameterKind::TimeStep, requirements.time_step_seconds));
    warnings
}

/// Weight for a qualitative priority label.
pub fn priority_weight(label: &str) -> Option<f64> {
    match label.trim().to_ascii_lowercase().as_str() {
        "high" | "critical" => Some(3.0),
        "medium" | "normal" => Some(2.0),
        "low" => Some(1.0),
        _ => None,
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Priority {
    Weight(f64),
    Label(String),
}

#[derive(Deserialize)]
struct CriterionReply {
    id: String,
    description: String,
    #[serde(default)]
    priority: Option<Priority>,
    #[serde(default)]
    priority_weight: Option<f64>,
}

#[derive(Deserialize)]
struct RequirementsReply {
    #[serde(default)]
    parameters: Vec<ScaledParameter>,
    duration_seconds: f64,
    #[serde(default)]
    frames_per_second: Option<u32>,
    #[serde(default)]
    time_step_seconds: Option<f64>,
    #[serde(default)]
    canvas_spec: String,
    #[serde(default)]
    numerical_notes: String,
    criteria: Vec<CriterionReply>,
}

fn parse_requirements(text: &str, frame_count: u32) -> Result<TechnicalRequirements, String> {
    let reply: RequirementsReply =
        first_json_block(text).ok_or_else(|| "no well-formed requirements block".to_string())?;
    let frames_per_second = reply.frames_per_second.unwrap_or(DEFAULT_FPS);
    let mut criteria = Vec::with_capacity(reply.criteria.len());
    for c in reply.criteria {
        let weight = match (c.priority_weight, c.priority) {
            (Some(w), _) | (None, Some(Priority::Weight(w))) => w,
            (None, Some(Priority::Label(label))) => {
                priority_weight(&label).ok_or_else(|| format!("criterion `{}` has unknown priority `{label}`", c.id))?
            }
            (None, None) => 2.0,
        };
        criteria.push(ValidationCriterion { id: c.id.trim().to_string(), description: c.description, priority_weight: weight });
    }
    let requirements = TechnicalRequirements {
        parameters: reply.parameters,
        duration_seconds: reply.duration_seconds,
        frames_per_second,
        time_step_seconds: reply.time_step_seconds.unwrap_or(1.0 / f64::from(frames_per_second.max(1))),
        canvas_spec: reply.canvas_spec,
        numerical_notes: reply.numerical_notes,
        criteria,
    };
    requirements.validate(frame_count).map_err(|e| e.to_string())?;
    Ok(requirements)
}

/// Bulleted list of the criteria that did not pass, with the judge's
/// reasoning. Shared by every feedback prompt.
pub(crate) fn failing_criteria_block(feedback: &Feedback, criteria: &[ValidationCriterion]) -> String {
    let mut out = String::new();
    for v in feedback.report.failing() {
        let description = criteria
            .iter()
            .find(|c| c.id == v.criterion_id)
            .map(|c| c.description.as_str())
            .unwrap_or("(criterion no longer listed)");
        out.push_str(&format!(
            "- {} [{}, confidence {:.2}]: {} | judge: {}\n",
            v.criterion_id,
            v.verdict.as_str(),
            v.confidence,
            description,
            v.rationale
        ));
    }
    if out.is_empty() {
        out.push_str("- (no criterion verdicts were available)\n");
    }
    out
}

pub struct RequirementsGenerator<'a> {
    gateway: &'a Gateway,
    frame_count: u32,
}

impl<'a> RequirementsGenerator<'a> {
    pub fn new(gateway: &'a Gateway, frame_count: u32) -> Self {
        Self { gateway, frame_count }
    }

    pub fn build_prompt(
        &self,
        description: &AnimationDescription,
        revision: Option<Revision<'_, TechnicalRequirements>>,
    ) -> crate::prompts::RenderedPrompt {
        let description = serde_json::to_string_pretty(description).expect("description serializes");
        let revision = revision.map(|r| {
            AGENT1A_REVISION
                .render(&[
                    ("rationale", &r.feedback.diagnosis.rationale),
                    ("accuracy", &format!("{:.3}", r.feedback.report.accuracy)),
                    ("threshold", &format!("{:.2}", r.feedback.report.threshold)),
                    ("failing", &failing_criteria_block(r.feedback, &r.previous.criteria)),
                    ("previous", &serde_json::to_string_pretty(r.previous).expect("requirements serialize")),
                ])
                .text
        });
        AGENT1A_REQUIREMENTS.render(&[
            ("fps", &DEFAULT_FPS.to_string()),
            ("frame_count", &self.frame_count.to_string()),
            ("description", &description),
            ("revision", revision.as_deref().unwrap_or("")),
        ])
    }

    pub fn generate_requirements(
        &self,
        description: &AnimationDescription,
        revision: Option<Revision<'_, TechnicalRequirements>>,
    ) -> Result<TechnicalRequirements, RequirementsError> {
        if let Some(r) = revision {
            if r.feedback.diagnosis.route_target != RouteTarget::Agent1A {
                return Err(RequirementsError::MisroutedFeedback(r.feedback.diagnosis.route_target));
            }
        }
        let agent = AgentLabel::Agent1A;
        let reply = self.gateway.complete(agent, agent.tier(), &self.build_prompt(description, revision))?;
        let problem = match parse_requirements(&reply.text, self.frame_count) {
            Ok(requirements) => return Ok(self.linted(requirements)),
            Err(problem) => problem,
        };
        warn!(%problem, "requirements reply unusable, asking for reformat");
        let retry = AGENT1A_REFORMAT.render(&[("problem", &problem), ("reply", &reply.text)]);
        let reply = self.gateway.complete(agent, agent.tier(), &retry)?;
        parse_requirements(&reply.text, self.frame_count)
            .map(|r| self.linted(r))
            .map_err(|reason| RequirementsError::Unparseable { reason, raw: reply.text })
    }

    fn linted(&self, requirements: TechnicalRequirements) -> TechnicalRequirements {
        for w in check_scaling(&requirements) {
            warn!(parameter = %w.parameter, value = w.value, band = ?w.band, "scaled value outside visible band");
        }
        requirements
    }
}
