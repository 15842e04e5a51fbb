//! Runs generated scripts in a child process and classifies the outcome.
//!
//! Each execution gets a fresh directory under the configured root. The
//! child runs with that directory as cwd and `FRAMES_DIR`, inside its own
//! process group, and is killed with SIGKILL when the wall-clock limit
//! passes. Outcomes are one of the five [`ExecutionStatus`] values.

use std::collections::BTreeMap;
use std::io::Read;
use std::os::unix::process::{CommandExt, ExitStatusExt};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::mpsc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::debug;

use crate::imaging::decode_png;
use crate::model::{ExecutionOutcome, ExecutionStatus, FrameSet, GeneratedScript, TechnicalRequirements};

pub const OUTPUT_CAP_BYTES: usize = 1 << 20;
const POLL_INTERVAL: Duration = Duration::from_millis(5);
const PIPE_DRAIN_GRACE: Duration = Duration::from_millis(500);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SandboxConfig {
    /// Runtime invocation; the script path is appended.
    pub interpreter_command: Vec<String>,
    /// Parse-only check; the script path is appended. Nonzero exit means a
    /// syntax error.
    pub syntax_check_command: Vec<String>,
    pub timeout_seconds: f64,
    pub workdir_root: PathBuf,
    pub frame_count: u32,
    pub frame_filename_pattern: String,
    pub script_filename: String,
    /// Substrings whose presence in the source counts as a save/display
    /// call for silent-failure detection.
    pub output_call_tokens: Vec<String>,
    pub extra_env: BTreeMap<String, String>,
    pub output_cap_bytes: usize,
}

impl Default for SandboxConfig {
    fn default() -> Self {
        Self {
            interpreter_command: vec!["python3".into()],
            syntax_check_command: vec![
                "python3".into(),
                "-c".into(),
                "import ast, sys; ast.parse(open(sys.argv[1], encoding='utf-8').read(), sys.argv[1])".into(),
            ],
            timeout_seconds: 30.0,
            workdir_root: std::env::temp_dir().join("simforge"),
            frame_count: crate::model::DEFAULT_FRAME_COUNT,
            frame_filename_pattern: "frame_%03d.png".into(),
            script_filename: "animation.py".into(),
            output_call_tokens: ["savefig(", ".save(", "imsave(", "imwrite(", ".show(", "show()"]
                .map(String::from)
                .to_vec(),
            extra_env: BTreeMap::from([("MPLBACKEND".to_string(), "Agg".to_string())]),
            output_cap_bytes: OUTPUT_CAP_BYTES,
        }
    }
}

impl SandboxConfig {
    pub fn validate(&self) -> Result<(), SandboxError> {
        let bad = |m: &str| Err(SandboxError::Config(m.to_string()));
        if !(self.timeout_seconds.is_finite() && self.timeout_seconds > 0.0) {
            return bad("timeout_seconds must be positive");
        }
        if self.frame_count == 0 {
            return bad("frame_count must be at least 1");
        }
        if self.interpreter_command.is_empty() {
            return bad("interpreter_command is empty");
        }
        FramePattern::parse(&self.frame_filename_pattern).map(|_| ())
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_seconds)
    }
}

#[derive(Debug, Error)]
pub enum SandboxError {
    /// The runtime itself is unusable; not the script's fault.
    #[error("sandbox environment error: {0}")]
    Environment(String),
    #[error("invalid sandbox configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("frame contract violated: {message}")]
pub struct FrameContractError {
    pub message: String,
    pub file: Option<PathBuf>,
}

/// A printf-style `prefix%0Nd suffix` filename pattern.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FramePattern {
    prefix: String,
    width: usize,
    suffix: String,
}

impl FramePattern {
    pub fn parse(pattern: &str) -> Result<Self, SandboxError> {
        let bad = || SandboxError::Config(format!("frame pattern `{pattern}` needs exactly one %d or %0Nd"));
        let start = pattern.find('%').ok_or_else(bad)?;
        let rest = &pattern[start + 1..];
        let d = rest.find('d').ok_or_else(bad)?;
        let spec = &rest[..d];
        let width = if spec.is_empty() {
            0
        } else if let Some(w) = spec.strip_prefix('0') {
            w.parse().map_err(|_| bad())?
        } else {
            return Err(bad());
        };
        let suffix = &rest[d + 1..];
        if suffix.contains('%') {
            return Err(bad());
        }
        Ok(Self { prefix: pattern[..start].to_string(), width, suffix: suffix.to_string() })
    }

    pub fn format(&self, index: u32) -> String {
        format!("{}{:0width$}{}", self.prefix, index, self.suffix, width = self.width)
    }

    /// Index encoded in `name`, if it matches the pattern.
    pub fn index_of(&self, name: &str) -> Option<u32> {
        let digits = name.strip_prefix(&self.prefix)?.strip_suffix(&self.suffix)?;
        if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) || digits.len() < self.width {
            return None;
        }
        digits.parse().ok()
    }
}

/// Timing the child learns through `ANIM_DURATION_S` and `ANIM_FPS`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnimationTiming {
    pub duration_seconds: f64,
    pub frames_per_second: u32,
}

impl From<&TechnicalRequirements> for AnimationTiming {
    fn from(r: &TechnicalRequirements) -> Self {
        Self { duration_seconds: r.duration_seconds, frames_per_second: r.frames_per_second }
    }
}

/// Signals the classifier works from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RawResult {
    pub parse_ok: bool,
    pub timed_out: bool,
    pub exit_code: Option<i32>,
    pub frame_files: usize,
}

pub fn has_output_call(source: &str, config: &SandboxConfig) -> bool {
    config.output_call_tokens.iter().any(|t| source.contains(t.as_str()))
}

/// Precedence: syntax error, timeout, runtime error, silent failure,
/// success. A clean exit is silent when no frame file exists or the source
/// has no save/display call.
pub fn classify(script_source: &str, raw: &RawResult, config: &SandboxConfig) -> ExecutionStatus {
    if !raw.parse_ok {
        ExecutionStatus::SyntaxError
    } else if raw.timed_out {
        ExecutionStatus::Timeout
    } else if raw.exit_code != Some(0) {
        ExecutionStatus::RuntimeError
    } else if raw.frame_files == 0 || !has_output_call(script_source, config) {
        ExecutionStatus::SilentFailure
    } else {
        ExecutionStatus::Success
    }
}

struct ChildResult {
    stdout: String,
    stderr: String,
    exit_code: Option<i32>,
    signal: Option<i32>,
    timed_out: bool,
    wall: Duration,
}

fn spawn_reader(
    mut pipe: impl Read + Send + 'static,
    cap: usize,
) -> mpsc::Receiver<Vec<u8>> {
    let (tx, rx) = mpsc::channel();
    std::thread::spawn(move || {
        let mut kept = Vec::new();
        let mut chunk = [0u8; 8192];
        loop {
            match pipe.read(&mut chunk) {
                Ok(0) | Err(_) => break,
                Ok(n) => {
                    let room = cap.saturating_sub(kept.len());
                    kept.extend_from_slice(&chunk[..n.min(room)]);
                }
            }
        }
        let _ = tx.send(kept);
    });
    rx
}

fn run_with_timeout(
    mut command: Command,
    timeout: Duration,
    cap: usize,
) -> Result<ChildResult, std::io::Error> {
    command.stdin(Stdio::null()).stdout(Stdio::piped()).stderr(Stdio::piped()).process_group(0);
    let start = Instant::now();
    let mut child = command.spawn()?;
    let stdout = spawn_reader(child.stdout.take().expect("piped stdout"), cap);
    let stderr = spawn_reader(child.stderr.take().expect("piped stderr"), cap);
    let pid = child.id() as libc::pid_t;

    let (status, timed_out) = loop {
        if let Some(status) = child.try_wait()? {
            break (status, false);
        }
        if start.elapsed() >= timeout {
            // SAFETY: signalling our own child's process group.
            unsafe {
                libc::kill(-pid, libc::SIGKILL);
            }
            let _ = child.kill();
            break (child.wait()?, true);
        }
        std::thread::sleep(POLL_INTERVAL);
    };
    let wall = start.elapsed();
    let drain = |rx: mpsc::Receiver<Vec<u8>>| {
        String::from_utf8_lossy(&rx.recv_timeout(PIPE_DRAIN_GRACE).unwrap_or_default()).into_owned()
    };
    Ok(ChildResult {
        stdout: drain(stdout),
        stderr: drain(stderr),
        exit_code: status.code(),
        signal: status.signal(),
        timed_out,
        wall,
    })
}

fn command_for(argv: &[String], script: &Path, workdir: &Path) -> Result<Command, SandboxError> {
    let (program, args) =
        argv.split_first().ok_or_else(|| SandboxError::Config("empty command".into()))?;
    let mut command = Command::new(program);
    command.args(args).arg(script).current_dir(workdir);
    Ok(command)
}

fn spawn_error(argv: &[String], err: std::io::Error) -> SandboxError {
    SandboxError::Environment(format!("cannot run `{}`: {err}", argv.join(" ")))
}

/// Every regular file in `workdir` except the script, sorted by name.
fn list_files(workdir: &Path, script_filename: &str) -> Vec<PathBuf> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(workdir)
        .into_iter()
        .flatten()
        .flatten()
        .filter(|e| e.file_type().is_ok_and(|t| t.is_file()))
        .filter(|e| e.file_name() != script_filename)
        .map(|e| e.path())
        .collect();
    files.sort();
    files
}

fn count_frame_files(files: &[PathBuf], pattern: &FramePattern) -> usize {
    files
        .iter()
        .filter_map(|p| p.file_name()?.to_str())
        .filter(|name| pattern.index_of(name).is_some())
        .count()
}

fn create_workdir(root: &Path) -> Result<PathBuf, SandboxError> {
    let env_err = |e: std::io::Error| {
        SandboxError::Environment(format!("cannot create workdir under {}: {e}", root.display()))
    };
    std::fs::create_dir_all(root).map_err(env_err)?;
    let dir = tempfile::Builder::new().prefix("exec-").tempdir_in(root).map_err(env_err)?;
    Ok(dir.keep())
}

/// Runs `script` in a fresh workdir and classifies what happened.
pub fn execute(
    script: &GeneratedScript,
    config: &SandboxConfig,
    timing: AnimationTiming,
) -> Result<ExecutionOutcome, SandboxError> {
    execute_in_fresh_workdir(script, config, timing).map(|(outcome, _)| outcome)
}

fn execute_in_fresh_workdir(
    script: &GeneratedScript,
    config: &SandboxConfig,
    timing: AnimationTiming,
) -> Result<(ExecutionOutcome, PathBuf), SandboxError> {
    config.validate()?;
    let pattern = FramePattern::parse(&config.frame_filename_pattern)?;
    let workdir = create_workdir(&config.workdir_root)?;
    let script_path = workdir.join(&config.script_filename);
    std::fs::write(&script_path, &script.source_text)
        .map_err(|e| SandboxError::Environment(format!("cannot write {}: {e}", script_path.display())))?;

    let timeout = config.timeout();
    let cap = config.output_cap_bytes;

    if !config.syntax_check_command.is_empty() {
        let check = command_for(&config.syntax_check_command, &script_path, &workdir)?;
        let result =
            run_with_timeout(check, timeout, cap).map_err(|e| spawn_error(&config.syntax_check_command, e))?;
        if result.timed_out {
            return Err(SandboxError::Environment("syntax check timed out".into()));
        }
        if result.exit_code != Some(0) {
            let raw = RawResult { parse_ok: false, timed_out: false, exit_code: result.exit_code, frame_files: 0 };
            let outcome = ExecutionOutcome {
                status: classify(&script.source_text, &raw, config),
                stdout: scrub_workdir(result.stdout, &workdir),
                stderr: scrub_workdir(result.stderr, &workdir),
                produced_files: Vec::new(),
                wall_time_seconds: result.wall.as_secs_f64(),
                exit_code: result.exit_code,
                diagnostic: Some("parse-only check failed; script not executed".into()),
            };
            return Ok((outcome, workdir));
        }
    }

    let mut command = command_for(&config.interpreter_command, &script_path, &workdir)?;
    command
        .env("FRAMES_DIR", &workdir)
        .env("FRAME_COUNT", config.frame_count.to_string())
        .env("ANIM_DURATION_S", timing.duration_seconds.to_string())
        .env("ANIM_FPS", timing.frames_per_second.to_string())
        .envs(&config.extra_env);
    let result = run_with_timeout(command, timeout, cap).map_err(|e| spawn_error(&config.interpreter_command, e))?;

    let produced_files = list_files(&workdir, &config.script_filename);
    let raw = RawResult {
        parse_ok: true,
        timed_out: result.timed_out,
        exit_code: result.exit_code,
        frame_files: count_frame_files(&produced_files, &pattern),
    };
    let status = classify(&script.source_text, &raw, config);
    let diagnostic = match status {
        ExecutionStatus::Timeout => Some(format!("killed after {:.1}s limit", config.timeout_seconds)),
        ExecutionStatus::RuntimeError if result.exit_code.is_none() => {
            Some(format!("terminated by signal {}", result.signal.unwrap_or_default()))
        }
        ExecutionStatus::SilentFailure if raw.frame_files == 0 => Some("no frame files were written".into()),
        ExecutionStatus::SilentFailure => Some("source contains no save or display call".into()),
        _ => None,
    };
    debug!(?status, wall = result.wall.as_secs_f64(), workdir = %workdir.display(), "script executed");
    let outcome = ExecutionOutcome {
        status,
        stdout: scrub_workdir(result.stdout, &workdir),
        stderr: scrub_workdir(result.stderr, &workdir),
        produced_files,
        wall_time_seconds: result.wall.as_secs_f64(),
        exit_code: result.exit_code,
        diagnostic,
    };
    Ok((outcome, workdir))
}

/// Makes workdir paths in captured output relative, so identical scripts
/// produce identical text across runs.
fn scrub_workdir(text: String, workdir: &Path) -> String {
    let prefix = format!("{}{}", workdir.display(), std::path::MAIN_SEPARATOR);
    if text.contains(&prefix) {
        text.replace(&prefix, "")
    } else {
        text
    }
}

/// Loads exactly `frame_count` frames numbered from zero and stamps them at
/// the centers of equal time bins.
pub fn collect_frames(
    workdir: &Path,
    config: &SandboxConfig,
    timing: AnimationTiming,
) -> Result<FrameSet, FrameContractError> {
    let contract = |message: String, file: Option<PathBuf>| FrameContractError { message, file };
    let pattern = FramePattern::parse(&config.frame_filename_pattern).map_err(|e| contract(e.to_string(), None))?;
    let mut indexed: Vec<(u32, PathBuf)> = list_files(workdir, &config.script_filename)
        .into_iter()
        .filter_map(|p| {
            let index = pattern.index_of(p.file_name()?.to_str()?)?;
            Some((index, p))
        })
        .collect();
    indexed.sort();
    let expected = config.frame_count as usize;
    if indexed.len() != expected {
        return Err(contract(format!("expected {expected} frame files, found {}", indexed.len()), None));
    }
    let mut frames = Vec::with_capacity(expected);
    for (want, (index, path)) in indexed.iter().enumerate() {
        if *index as usize != want {
            return Err(contract(
                format!("frame indices must run 0..{expected}; found {index} at position {want}"),
                Some(path.clone()),
            ));
        }
        let bytes = std::fs::read(path)
            .map_err(|e| contract(format!("cannot read {}: {e}", path.display()), Some(path.clone())))?;
        decode_png(&bytes)
            .map_err(|e| contract(format!("{} is not a valid PNG: {e}", path.display()), Some(path.clone())))?;
        frames.push(bytes);
    }
    let bin = timing.duration_seconds / expected as f64;
    let timestamps = (0..expected).map(|i| (i as f64 + 0.5) * bin).collect();
    FrameSet::new(frames, timestamps, expected, timing.frames_per_second)
        .map_err(|e| contract(e.to_string(), None))
}

/// What one sandbox run yields: the outcome and, on success, the frames.
#[derive(Debug, Clone)]
pub struct SandboxRun {
    pub outcome: ExecutionOutcome,
    pub frames: Option<FrameSet>,
    /// Absent for runs that never touched the filesystem (test doubles).
    pub workdir: Option<PathBuf>,
}

/// Executes scripts on behalf of the code generation loop.
pub trait ScriptRunner {
    fn run(&self, script: &GeneratedScript, requirements: &TechnicalRequirements) -> Result<SandboxRun, SandboxError>;
}

#[derive(Debug, Clone)]
pub struct Sandbox {
    config: SandboxConfig,
}

impl Sandbox {
    pub fn new(config: SandboxConfig) -> Result<Self, SandboxError> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn config(&self) -> &SandboxConfig {
        &self.config
    }

    /// Same configuration with executions placed under `root`.
    pub fn with_workdir_root(&self, root: impl Into<PathBuf>) -> Self {
        Self { config: SandboxConfig { workdir_root: root.into(), ..self.config.clone() } }
    }
}

impl ScriptRunner for Sandbox {
    /// Executes and, on success, collects frames. A frame-contract breach
    /// downgrades the outcome to a silent failure.
    fn run(&self, script: &GeneratedScript, requirements: &TechnicalRequirements) -> Result<SandboxRun, SandboxError> {
        let timing = AnimationTiming::from(requirements);
        let (mut outcome, workdir) = execute_in_fresh_workdir(script, &self.config, timing)?;
        let mut frames = None;
        if outcome.status.is_success() {
            match collect_frames(&workdir, &self.config, timing) {
                Ok(set) => frames = Some(set),
                Err(err) => {
                    outcome.status = ExecutionStatus::SilentFailure;
                    outcome.diagnostic = Some(err.to_string());
                }
            }
        }
        Ok(SandboxRun { outcome, frames, workdir: Some(workdir) })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::solid_png;

    fn fixture(name: &str) -> GeneratedScript {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/scripts").join(name);
        GeneratedScript {
            source_text: std::fs::read_to_string(&path).unwrap(),
            attempt_index: 1,
            repaired_from: None,
        }
    }

    fn config(root: &Path) -> SandboxConfig {
        SandboxConfig { workdir_root: root.to_path_buf(), timeout_seconds: 10.0, ..SandboxConfig::default() }
    }

    const TIMING: AnimationTiming = AnimationTiming { duration_seconds: 4.0, frames_per_second: 24 };

    #[test]
    fn frame_pattern_formats_and_matches() {
        let p = FramePattern::parse("frame_%03d.png").unwrap();
        assert_eq!(p.format(7), "frame_007.png");
        assert_eq!(p.index_of("frame_007.png"), Some(7));
        assert_eq!(p.index_of("frame_1234.png"), Some(1234));
        assert_eq!(p.index_of("frame_07.png"), None);
        assert_eq!(p.index_of("frame_abc.png"), None);
        assert_eq!(p.index_of("other_007.png"), None);
        assert!(FramePattern::parse("frame.png").is_err());
        assert!(FramePattern::parse("f_%3d.png").is_err());
        assert_eq!(FramePattern::parse("f%d.png").unwrap().format(12), "f12.png");
    }

    #[test]
    fn classification_grid_is_total_and_ordered() {
        let cfg = SandboxConfig::default();
        let with_call = "plt.savefig(path)";
        let without = "print('hi')";
        for mask in 0..16u32 {
            for timed_out in [false, true] {
                let parse_ok = mask & 1 != 0;
                let exit_zero = mask & 2 != 0;
                let has_files = mask & 4 != 0;
                let has_tokens = mask & 8 != 0;
                let raw = RawResult {
                    parse_ok,
                    timed_out,
                    exit_code: if exit_zero { Some(0) } else { Some(1) },
                    frame_files: if has_files { 8 } else { 0 },
                };
                let source = if has_tokens { with_call } else { without };
                let expected = if !parse_ok {
                    ExecutionStatus::SyntaxError
                } else if timed_out {
                    ExecutionStatus::Timeout
                } else if !exit_zero {
                    ExecutionStatus::RuntimeError
                } else if !has_files || !has_tokens {
                    ExecutionStatus::SilentFailure
                } else {
                    ExecutionStatus::Success
                };
                assert_eq!(classify(source, &raw, &cfg), expected, "mask {mask:04b} timed_out {timed_out}");
            }
        }
    }

    #[test]
    fn happy_path_writes_eight_frames() {
        let root = tempfile::tempdir().unwrap();
        let cfg = config(root.path());
        let outcome = execute(&fixture("happy.py"), &cfg, TIMING).unwrap();
        assert_eq!(outcome.status, ExecutionStatus::Success, "{outcome:?}");
        assert_eq!(outcome.exit_code, Some(0));
        assert_eq!(outcome.produced_files.len(), 8);
        let workdir = outcome.produced_files[0].parent().unwrap();
        let frames = collect_frames(workdir, &cfg, TIMING).unwrap();
        assert_eq!(frames.len(), 8);
        assert_eq!(frames.timestamps_seconds()[0], 0.25);
        assert_eq!(frames.timestamps_seconds()[7], 3.75);
    }

    #[test]
    fn child_sees_contract_env() {
        let root = tempfile::tempdir().unwrap();
        let script = GeneratedScript {
            source_text: "import os\nprint(os.environ['FRAME_COUNT'], os.environ['ANIM_FPS'], os.environ['ANIM_DURATION_S'], os.environ['FRAMES_DIR'] == os.getcwd())\n".into(),
            attempt_index: 1,
            repaired_from: None,
        };
        let outcome = execute(&script, &config(root.path()), TIMING).unwrap();
        assert_eq!(outcome.status, ExecutionStatus::SilentFailure);
        assert_eq!(outcome.stdout.trim(), "8 24 4 True");
    }

    #[test]
    fn runtime_error_keeps_stderr_and_exit_code() {
        let root = tempfile::tempdir().unwrap();
        let outcome = execute(&fixture("raises.py"), &config(root.path()), TIMING).unwrap();
        assert_eq!(outcome.status, ExecutionStatus::RuntimeError);
        assert_ne!(outcome.exit_code, Some(0));
        assert!(outcome.stderr.contains("ZeroDivisionError"), "{}", outcome.stderr);
        assert!(outcome.stderr.contains("\"animation.py\""), "{}", outcome.stderr);
        assert!(!outcome.stderr.contains(&root.path().display().to_string()));
    }

    #[test]
    fn syntax_error_is_caught_before_execution() {
        let root = tempfile::tempdir().unwrap();
        let outcome = execute(&fixture("parse_error.py"), &config(root.path()), TIMING).unwrap();
        assert_eq!(outcome.status, ExecutionStatus::SyntaxError);
        assert!(outcome.stderr.contains("SyntaxError"), "{}", outcome.stderr);
        // The fixture would write a marker file if it ever ran.
        assert!(outcome.produced_files.is_empty());
    }

    #[test]
    fn output_is_capped() {
        let root = tempfile::tempdir().unwrap();
        let script = GeneratedScript {
            source_text: "import sys\nsys.stdout.write('x' * (3 * 1024 * 1024))\n".into(),
            attempt_index: 1,
            repaired_from: None,
        };
        let outcome = execute(&script, &config(root.path()), TIMING).unwrap();
        assert_eq!(outcome.stdout.len(), OUTPUT_CAP_BYTES);
    }

    #[test]
    fn missing_interpreter_is_environment_error() {
        let root = tempfile::tempdir().unwrap();
        let cfg = SandboxConfig {
            interpreter_command: vec!["/nonexistent/python".into()],
            syntax_check_command: vec![],
            ..config(root.path())
        };
        assert!(matches!(execute(&fixture("happy.py"), &cfg, TIMING), Err(SandboxError::Environment(_))));
    }

    #[test]
    fn workdirs_are_isolated() {
        let root = tempfile::tempdir().unwrap();
        let cfg = config(root.path());
        let (first, dir1) = execute_in_fresh_workdir(&fixture("happy.py"), &cfg, TIMING).unwrap();
        let (second, dir2) = execute_in_fresh_workdir(&fixture("no_frames.py"), &cfg, TIMING).unwrap();
        assert_ne!(dir1, dir2);
        assert_eq!(first.produced_files.len(), 8);
        assert_eq!(second.status, ExecutionStatus::SilentFailure);
        assert!(second.produced_files.is_empty());
    }

    #[test]
    fn collect_rejects_wrong_count_and_corrupt_files() {
        let cfg = SandboxConfig::default();
        let dir = tempfile::tempdir().unwrap();
        let png = solid_png(4, 4, [200, 10, 10]);
        for i in 0..7 {
            std::fs::write(dir.path().join(format!("frame_{i:03}.png")), &png).unwrap();
        }
        let err = collect_frames(dir.path(), &cfg, TIMING).unwrap_err();
        assert!(err.message.contains("expected 8"), "{err}");

        std::fs::write(dir.path().join("frame_007.png"), &png[..png.len() - 10]).unwrap();
        let err = collect_frames(dir.path(), &cfg, TIMING).unwrap_err();
        assert_eq!(err.file.as_deref(), Some(dir.path().join("frame_007.png").as_path()));

        std::fs::write(dir.path().join("frame_007.png"), &png).unwrap();
        assert!(collect_frames(dir.path(), &cfg, TIMING).is_ok());
    }

    #[test]
    fn collect_rejects_gaps_in_numbering() {
        let cfg = SandboxConfig::default();
        let dir = tempfile::tempdir().unwrap();
        let png = solid_png(2, 2, [0, 0, 0]);
        for i in (0..8).map(|i| if i == 3 { 9 } else { i }) {
            std::fs::write(dir.path().join(format!("frame_{i:03}.png")), &png).unwrap();
        }
        assert!(collect_frames(dir.path(), &cfg, TIMING).is_err());
    }

    #[test]
    fn runner_downgrades_contract_breach_to_silent_failure() {
        let root = tempfile::tempdir().unwrap();
        let sandbox = Sandbox::new(config(root.path())).unwrap();
        let requirements = TechnicalRequirements {
            parameters: vec![],
            duration_seconds: 4.0,
            frames_per_second: 24,
            time_step_seconds: 0.04,
            canvas_spec: String::new(),
            numerical_notes: String::new(),
            criteria: vec![],
        };
        let run = sandbox.run(&fixture("seven_frames.py"), &requirements).unwrap();
        assert_eq!(run.outcome.status, ExecutionStatus::SilentFailure);
        assert!(run.frames.is_none());
        assert!(run.outcome.diagnostic.unwrap().contains("expected 8"));
        let run = sandbox.run(&fixture("happy.py"), &requirements).unwrap();
        assert_eq!(run.outcome.status, ExecutionStatus::Success);
        assert_eq!(run.frames.unwrap().len(), 8);
    }

    #[test]
    fn config_validation() {
        assert!(SandboxConfig { timeout_seconds: 0.0, ..SandboxConfig::default() }.validate().is_err());
        assert!(SandboxConfig { frame_count: 0, ..SandboxConfig::default() }.validate().is_err());
        assert!(SandboxConfig::default().validate().is_ok());
    }
}
