#![allow(dead_code)]

use std::collections::VecDeque;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::{Arc, Mutex};

use simforge_core::gateway::{AgentLabel, Gateway, GatewayConfig, ModelRequest, ModelResponse, StubTransport};
use simforge_core::imaging::solid_png;
use simforge_core::model::{
    ExecutionOutcome, ExecutionStatus, FrameSet, GeneratedScript, TechnicalRequirements, DEFAULT_FRAME_COUNT,
};
use simforge_core::sandbox::{SandboxConfig, SandboxError, SandboxRun, ScriptRunner};

pub const CRITERIA: usize = 20;

pub fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn fixture_script(name: &str) -> String {
    std::fs::read_to_string(fixtures_dir().join("scripts").join(name)).unwrap()
}

pub fn script(source: &str) -> GeneratedScript {
    GeneratedScript { source_text: source.into(), attempt_index: 1, repaired_from: None }
}

pub fn sandbox_config(root: &Path, timeout_seconds: f64) -> SandboxConfig {
    SandboxConfig { workdir_root: root.to_path_buf(), timeout_seconds, ..SandboxConfig::default() }
}

/// Deterministic stand-in for every agent. Perception call k is answered
/// with `accuracies[k]` (last value repeated) as a PASS/FAIL split over
/// [`CRITERIA`] equal-weight criteria; diagnosis call k with
/// `diagnoses[k]` (default implementation error); code call k with
/// `scripts[k]` (last repeated).
pub struct World {
    pub accuracies: Vec<f64>,
    pub diagnoses: Vec<&'static str>,
    pub scripts: Vec<String>,
    perception_calls: AtomicU32,
    diagnosis_calls: AtomicU32,
    requirements_calls: AtomicU32,
    code_calls: AtomicU32,
}

impl World {
    pub fn new(accuracies: &[f64]) -> Arc<Self> {
        Self::with_diagnoses(accuracies, &[])
    }

    pub fn with_diagnoses(accuracies: &[f64], diagnoses: &[&'static str]) -> Arc<Self> {
        Self::build(accuracies, diagnoses, &["happy.py"])
    }

    /// `scripts` are fixture names.
    pub fn build(accuracies: &[f64], diagnoses: &[&'static str], scripts: &[&str]) -> Arc<Self> {
        Arc::new(Self {
            accuracies: accuracies.to_vec(),
            diagnoses: diagnoses.to_vec(),
            scripts: scripts.iter().map(|name| fixture_script(name)).collect(),
            perception_calls: AtomicU32::new(0),
            diagnosis_calls: AtomicU32::new(0),
            requirements_calls: AtomicU32::new(0),
            code_calls: AtomicU32::new(0),
        })
    }

    pub fn respond(&self, request: &ModelRequest) -> ModelResponse {
        let text = match request.agent {
            AgentLabel::Agent1 => description_reply(),
            AgentLabel::Agent1A => {
                let n = self.requirements_calls.fetch_add(1, Ordering::SeqCst) + 1;
                requirements_reply(n)
            }
            AgentLabel::Agent2 => {
                let n = self.code_calls.fetch_add(1, Ordering::SeqCst) as usize;
                let body = &self.scripts[n.min(self.scripts.len() - 1)];
                format!("```python\n{}\n# draft {}\n```\n", body.trim_end(), n + 1)
            }
            AgentLabel::Agent3Context => "Watch the crest position move right between frames.".into(),
            AgentLabel::Agent3Perception => {
                let k = self.perception_calls.fetch_add(1, Ordering::SeqCst) as usize;
                let accuracy = self.accuracies[k.min(self.accuracies.len() - 1)];
                verdicts_reply(accuracy)
            }
            AgentLabel::Agent3Diagnosis => {
                let k = self.diagnosis_calls.fetch_add(1, Ordering::SeqCst) as usize;
                let source = self.diagnoses.get(k).copied().unwrap_or("IMPLEMENTATION_ERROR");
                format!("```json\n{{\"error_source\": \"{source}\", \"rationale\": \"scripted {source}\"}}\n```")
            }
        };
        ModelResponse { text, input_tokens: 1000, output_tokens: 500 }
    }

    pub fn transport(self: &Arc<Self>) -> Arc<StubTransport> {
        let world = Arc::clone(self);
        Arc::new(StubTransport::new(move |r| Ok(world.respond(r))))
    }

    pub fn gateway(self: &Arc<Self>) -> (Gateway, Arc<StubTransport>) {
        let stub = self.transport();
        (Gateway::new(stub.clone(), GatewayConfig::default()), stub)
    }
}

pub fn description_reply() -> String {
    "```json\n{\"narrative\": \"A sinusoidal electromagnetic wave travels left to right.\", \
     \"physics_concepts\": [\"electromagnetic wave propagation\"], \
     \"motion_specs\": \"E and B oscillate in phase, perpendicular to travel\", \
     \"visualization_guidance\": \"two perpendicular traces on a shared axis\"}\n```"
        .into()
}

pub fn requirements_reply(draft: u32) -> String {
    let criteria: Vec<String> = (1..=CRITERIA)
        .map(|i| format!("{{\"id\": \"C{i:02}\", \"description\": \"check {i}\", \"priority\": \"medium\"}}"))
        .collect();
    format!(
        "```json\n{{\"parameters\": [{{\"name\": \"wave frequency\", \
         \"real_value\": {{\"value\": 5.0e14, \"unit\": \"Hz\"}}, \
         \"scaled_value\": {{\"value\": 0.5, \"unit\": \"Hz\"}}, \"rationale\": \"visible\"}}], \
         \"duration_seconds\": 4.0, \"frames_per_second\": 24, \"time_step_seconds\": 0.05, \
         \"canvas_spec\": \"800x400\", \"numerical_notes\": \"draft {draft}\", \"criteria\": [{}]}}\n```",
        criteria.join(", ")
    )
}

pub fn verdicts_reply(accuracy: f64) -> String {
    let passes = (accuracy * CRITERIA as f64).round() as usize;
    (1..=CRITERIA)
        .map(|i| {
            let v = if i <= passes { "PASS" } else { "FAIL" };
            format!("VERDICT C{i:02} | {v} | 0.9 | scripted\n")
        })
        .collect()
}

/// Frames that satisfy the capture contract for `requirements`.
pub fn contract_frames(requirements: &TechnicalRequirements) -> FrameSet {
    let n = DEFAULT_FRAME_COUNT as usize;
    let bin = requirements.duration_seconds / n as f64;
    let frames = (0..n).map(|i| solid_png(8, 8, [i as u8 * 20, 40, 200])).collect();
    let timestamps = (0..n).map(|i| (i as f64 + 0.5) * bin).collect();
    FrameSet::new(frames, timestamps, n, requirements.frames_per_second).unwrap()
}

pub fn outcome(status: ExecutionStatus) -> ExecutionOutcome {
    let failed = !status.is_success();
    ExecutionOutcome {
        status,
        stdout: String::new(),
        stderr: if failed { format!("scripted {status:?} trace") } else { String::new() },
        produced_files: vec![],
        wall_time_seconds: 0.01,
        exit_code: Some(if failed { 1 } else { 0 }),
        diagnostic: None,
    }
}

/// Runner double: answers from a queue of statuses, then `fallback`.
pub struct ScriptedRunner {
    statuses: Mutex<VecDeque<ExecutionStatus>>,
    fallback: ExecutionStatus,
    runs: AtomicU32,
    scripts: Mutex<Vec<GeneratedScript>>,
}

impl ScriptedRunner {
    pub fn new(statuses: &[ExecutionStatus], fallback: ExecutionStatus) -> Self {
        Self {
            statuses: Mutex::new(statuses.iter().copied().collect()),
            fallback,
            runs: AtomicU32::new(0),
            scripts: Mutex::new(Vec::new()),
        }
    }

    pub fn always(status: ExecutionStatus) -> Self {
        Self::new(&[], status)
    }

    pub fn runs(&self) -> u32 {
        self.runs.load(Ordering::SeqCst)
    }

    pub fn scripts(&self) -> Vec<GeneratedScript> {
        self.scripts.lock().unwrap().clone()
    }
}

impl ScriptRunner for ScriptedRunner {
    fn run(&self, script: &GeneratedScript, requirements: &TechnicalRequirements) -> Result<SandboxRun, SandboxError> {
        self.runs.fetch_add(1, Ordering::SeqCst);
        self.scripts.lock().unwrap().push(script.clone());
        let status = self.statuses.lock().unwrap().pop_front().unwrap_or(self.fallback);
        let frames = status.is_success().then(|| contract_frames(requirements));
        Ok(SandboxRun { outcome: outcome(status), frames, workdir: None })
    }
}

/// The requirements the stub's Agent1A emits first.
pub fn stub_requirements() -> TechnicalRequirements {
    let text = requirements_reply(1);
    let body = text.trim_start_matches("```json\n").trim_end_matches("\n```");
    let mut value: serde_json::Value = serde_json::from_str(body).unwrap();
    for c in value["criteria"].as_array_mut().unwrap() {
        c["priority_weight"] = 2.0.into();
    }
    serde_json::from_value(value).unwrap()
}
