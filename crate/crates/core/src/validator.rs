//! Agent 3: judges rendered frames against the criteria and, on failure,
//! decides which upstream stage is at fault.

use std::collections::HashMap;
use std::sync::OnceLock;

use regex::Regex;
use serde::Deserialize;
use thiserror::Error;
use tracing::warn;

use crate::gateway::{AgentLabel, Gateway, GatewayError};
use crate::model::{
    CriterionVerdict, Diagnosis, ErrorSource, Feedback, FrameSet, GeneratedScript, ModelError,
    TechnicalRequirements, ValidationCriterion, ValidationReport, Verdict,
};
use crate::prompts::{
    RenderedPrompt, AGENT3_CONTEXT, AGENT3_DIAGNOSIS, AGENT3_DIAGNOSIS_REFORMAT, AGENT3_PERCEPTION,
    AGENT3_PERCEPTION_REFORMAT,
};
use crate::requirements::failing_criteria_block;
use crate::structured::first_json_block;

const SCRIPT_SUMMARY_LINES: usize = 60;

#[derive(Debug, Error)]
pub enum ValidationError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("vision reply still missing verdicts for {missing:?} after reformat retry")]
    Protocol { missing: Vec<String> },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("report already passes; nothing to diagnose")]
    NothingToDiagnose,
}

#[derive(Debug, Clone)]
pub struct ValidatorSettings {
    pub threshold: f64,
    /// Run the briefing call before the vision call.
    pub context_enrichment: bool,
}

impl Default for ValidatorSettings {
    fn default() -> Self {
        Self { threshold: crate::model::DEFAULT_THRESHOLD, context_enrichment: true }
    }
}

fn verdict_line() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"(?mi)^[\s>*\-`]*VERDICT\s+([^\s|]+)\s*\|\s*(PASS|FAIL|UNCERTAIN)\s*\|\s*([-+]?[0-9]*\.?[0-9]+(?:[eE][-+]?[0-9]+)?)\s*\|\s*(.*?)\s*$",
        )
        .expect("verdict regex")
    })
}

/// Verdict lines found in `text`, first occurrence per id.
pub fn parse_verdicts(text: &str) -> HashMap<String, CriterionVerdict> {
    let mut found = HashMap::new();
    for caps in verdict_line().captures_iter(text) {
        let id = caps[1].trim_matches(|c: char| c == '`' || c == '*' || c == ':').to_string();
        let verdict = match caps[2].to_ascii_uppercase().as_str() {
            "PASS" => Verdict::Pass,
            "FAIL" => Verdict::Fail,
            _ => Verdict::Uncertain,
        };
        let Ok(raw_confidence) = caps[3].parse::<f64>() else { continue };
        let confidence = raw_confidence.clamp(0.0, 1.0);
        if confidence != raw_confidence {
            warn!(criterion = %id, raw_confidence, "confidence outside [0, 1], clamped");
        }
        found.entry(id.clone()).or_insert(CriterionVerdict {
            criterion_id: id,
            verdict,
            confidence,
            rationale: caps[4].trim_end_matches('`').trim().to_string(),
        });
    }
    found
}

fn criteria_listing(criteria: &[ValidationCriterion]) -> String {
    criteria
        .iter()
        .map(|c| format!("- {} (weight {}): {}", c.id, c.priority_weight, c.description))
        .collect::<Vec<_>>()
        .join("\n")
}

fn timestamps_listing(frames: &FrameSet) -> String {
    frames
        .timestamps_seconds()
        .iter()
        .enumerate()
        .map(|(i, t)| format!("frame {}: t = {t:.3} s", i + 1))
        .collect::<Vec<_>>()
        .join("\n")
}

fn requirements_summary(requirements: &TechnicalRequirements) -> String {
    let mut out = format!(
        "duration {} s at {} fps, time step {} s; canvas: {}\n",
        requirements.duration_seconds,
        requirements.frames_per_second,
        requirements.time_step_seconds,
        requirements.canvas_spec
    );
    for p in &requirements.parameters {
        out.push_str(&format!(
            "- {}: {} {} (real {} {}) because {}\n",
            p.name, p.scaled_value.value, p.scaled_value.unit, p.real_value.value, p.real_value.unit, p.rationale
        ));
    }
    out
}

fn script_summary(script: &GeneratedScript) -> String {
    let lines: Vec<&str> = script.source_text.lines().collect();
    let shown = lines.len().min(SCRIPT_SUMMARY_LINES);
    let mut out = format!("{} lines (attempt {}); first {shown}:\n", lines.len(), script.attempt_index);
    out.push_str(&lines[..shown].join("\n"));
    out
}

#[derive(Deserialize)]
struct DiagnosisReply {
    error_source: String,
    #[serde(default)]
    rationale: String,
}

fn parse_error_source(label: &str) -> Option<ErrorSource> {
    let norm: String = label.chars().filter(|c| c.is_ascii_alphabetic()).collect::<String>().to_ascii_uppercase();
    if norm.starts_with("REQUIREMENT") {
        Some(ErrorSource::RequirementsError)
    } else if norm.starts_with("IMPLEMENTATION") || norm.starts_with("CODE") {
        Some(ErrorSource::ImplementationError)
    } else {
        None
    }
}

fn parse_diagnosis(text: &str) -> Option<Diagnosis> {
    let reply: DiagnosisReply = first_json_block(text)?;
    let source = parse_error_source(&reply.error_source)?;
    Some(Diagnosis::new(source, reply.rationale))
}

pub struct PerceptualValidator<'a> {
    gateway: &'a Gateway,
    settings: ValidatorSettings,
}

impl<'a> PerceptualValidator<'a> {
    pub fn new(gateway: &'a Gateway, settings: ValidatorSettings) -> Self {
        Self { gateway, settings }
    }

    pub fn threshold(&self) -> f64 {
        self.settings.threshold
    }

    fn briefing(&self, requirements: &TechnicalRequirements, frame_count: usize) -> Result<String, GatewayError> {
        if !self.settings.context_enrichment {
            return Ok(String::new());
        }
        let prompt = AGENT3_CONTEXT.render(&[
            ("frame_count", &frame_count.to_string()),
            ("requirements", &serde_json::to_string_pretty(requirements).expect("requirements serialize")),
        ]);
        let agent = AgentLabel::Agent3Context;
        let reply = self.gateway.complete(agent, agent.tier(), &prompt)?;
        Ok(format!("Reviewer briefing:\n{}\n", reply.text.trim()))
    }

    pub fn build_perception_prompt(
        &self,
        frames: &FrameSet,
        requirements: &TechnicalRequirements,
        briefing: &str,
    ) -> RenderedPrompt {
        AGENT3_PERCEPTION.render(&[
            ("frame_count", &frames.len().to_string()),
            ("timestamps", &timestamps_listing(frames)),
            ("context", briefing),
            ("criteria", &criteria_listing(&requirements.criteria)),
        ])
    }

    /// One verdict per criterion from the vision tier, aggregated into a
    /// report. Frames and requirements are only read.
    pub fn validate(
        &self,
        frames: &FrameSet,
        requirements: &TechnicalRequirements,
    ) -> Result<ValidationReport, ValidationError> {
        let briefing = self.briefing(requirements, frames.len())?;
        let prompt = self.build_perception_prompt(frames, requirements, &briefing);
        let agent = AgentLabel::Agent3Perception;
        let reply = self.gateway.complete_with_images(agent, agent.tier(), &prompt, frames.frames())?;
        let mut found = parse_verdicts(&reply.text);
        let missing = |found: &HashMap<String, CriterionVerdict>| -> Vec<String> {
            requirements.criteria.iter().filter(|c| !found.contains_key(&c.id)).map(|c| c.id.clone()).collect()
        };
        let mut absent = missing(&found);
        if !absent.is_empty() {
            warn!(?absent, "vision reply missing verdicts, asking for reformat");
            let retry = AGENT3_PERCEPTION_REFORMAT.render(&[
                ("missing", &absent.join(", ")),
                ("criteria", &criteria_listing(&requirements.criteria)),
                ("reply", &reply.text),
            ]);
            let again = self.gateway.complete(agent, agent.tier(), &retry)?;
            for (id, v) in parse_verdicts(&again.text) {
                found.entry(id).or_insert(v);
            }
            absent = missing(&found);
            if !absent.is_empty() {
                return Err(ValidationError::Protocol { missing: absent });
            }
        }
        let verdicts: Vec<CriterionVerdict> = requirements
            .criteria
            .iter()
            .map(|c| found.remove(&c.id).expect("checked above"))
            .collect();
        for id in found.keys() {
            warn!(criterion = %id, "verdict for unknown criterion ignored");
        }
        Ok(ValidationReport::new(verdicts, &requirements.criteria, self.settings.threshold)?)
    }

    pub fn build_diagnosis_prompt(
        &self,
        report: &ValidationReport,
        requirements: &TechnicalRequirements,
        script: &GeneratedScript,
    ) -> RenderedPrompt {
        // The classifier sees the same failing-criteria block the routed
        // stage will; the diagnosis slot is not filled yet.
        let pending = Feedback { diagnosis: Diagnosis::new(ErrorSource::ImplementationError, ""), report: report.clone() };
        AGENT3_DIAGNOSIS.render(&[
            ("accuracy", &format!("{:.3}", report.accuracy)),
            ("threshold", &format!("{:.2}", report.threshold)),
            ("failing", &failing_criteria_block(&pending, &requirements.criteria)),
            ("requirements", &requirements_summary(requirements)),
            ("script", &script_summary(script)),
        ])
    }

    /// Classifies a failed report as a requirements or an implementation
    /// problem using the classification tier. An unusable reply falls back
    /// to an implementation error flagged as degraded.
    pub fn diagnose(
        &self,
        report: &ValidationReport,
        requirements: &TechnicalRequirements,
        script: &GeneratedScript,
    ) -> Result<Diagnosis, ValidationError> {
        if report.passed {
            return Err(ValidationError::NothingToDiagnose);
        }
        let agent = AgentLabel::Agent3Diagnosis;
        let prompt = self.build_diagnosis_prompt(report, requirements, script);
        let reply = self.gateway.complete(agent, agent.tier(), &prompt)?;
        if let Some(d) = parse_diagnosis(&reply.text) {
            return Ok(d);
        }
        let retry = AGENT3_DIAGNOSIS_REFORMAT.render(&[("reply", &reply.text)]);
        let reply = self.gateway.complete(agent, agent.tier(), &retry)?;
        if let Some(d) = parse_diagnosis(&reply.text) {
            return Ok(d);
        }
        warn!("diagnosis unparseable; defaulting to implementation error");
        let mut fallback =
            Diagnosis::new(ErrorSource::ImplementationError, "classifier reply unparseable; retrying code generation");
        fallback.degraded = true;
        Ok(fallback)
    }
}
