use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use simforge_core::config::Config;
use simforge_core::gateway::{AnthropicTransport, FailingTransport, Gateway};
use simforge_core::model::{StopReason, UserRequest};
use simforge_core::orchestrator::{Pipeline, RunSummary};
use simforge_core::sandbox::Sandbox;
use tracing::info;

/// Generate 2D physics animations from natural-language requests.
#[derive(Parser)]
#[command(name = "simforge", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline for one request.
    Run(RunArgs),
    /// Print the iteration history and cost table of a finished run.
    Report {
        /// A run directory containing summary.json.
        run_dir: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Request text, or a path to a file holding it.
    #[arg(long)]
    request: String,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    max_iterations: Option<u32>,
    #[arg(long)]
    max_attempts: Option<u32>,
    /// Per-attempt execution limit in seconds.
    #[arg(long)]
    timeout_s: Option<f64>,
    /// Frames captured per iteration.
    #[arg(long)]
    frames: Option<u32>,
    /// Serve every model call from this transcript; no network access.
    #[arg(long, conflicts_with = "record")]
    replay: Option<PathBuf>,
    /// Call the live API and append every exchange to this transcript.
    #[arg(long)]
    record: Option<PathBuf>,
    #[arg(long, default_value = "runs")]
    out: PathBuf,
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_target(false)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
        )
        .init();

    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(args) => run(args),
        Command::Report { run_dir } => report(&run_dir).map(|_| ExitCode::SUCCESS),
    };
    outcome.unwrap_or_else(|err| {
        eprintln!("error: {err:#}");
        ExitCode::from(1)
    })
}

fn request_text(arg: &str) -> Result<String> {
    let path = Path::new(arg);
    if path.is_file() {
        return std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()));
    }
    Ok(arg.to_string())
}

fn load_config(args: &RunArgs) -> Result<Config> {
    let mut config = match &args.config {
        Some(path) => Config::load(path)?,
        None => Config::shipped(),
    };
    if let Some(t) = args.threshold {
        config.pipeline.threshold = t;
    }
    if let Some(n) = args.max_iterations {
        config.pipeline.max_iterations = n;
    }
    if let Some(n) = args.max_attempts {
        config.pipeline.max_attempts = n;
    }
    if let Some(s) = args.timeout_s {
        config.sandbox.timeout_seconds = s;
    }
    if let Some(n) = args.frames {
        config.sandbox.frame_count = n;
    }
    config.validate()?;
    Ok(config)
}

fn live_transport(config: &Config) -> Result<AnthropicTransport> {
    AnthropicTransport::from_env(
        config.gateway.base_url.clone(),
        &config.gateway.api_key_env,
        Duration::from_secs(config.gateway.request_timeout_s),
    )
    .map_err(anyhow::Error::msg)
}

fn run(args: RunArgs) -> Result<ExitCode> {
    let config = load_config(&args)?;
    let request = UserRequest::new(request_text(&args.request)?.trim())?;

    let gateway = match (&args.replay, &args.record) {
        (Some(transcript), _) => Gateway::new(FailingTransport::default(), config.gateway_config()).replay_mode(transcript)?,
        (None, Some(transcript)) => Gateway::new(live_transport(&config)?, config.gateway_config()).record_mode(transcript)?,
        (None, None) => Gateway::new(live_transport(&config)?, config.gateway_config()),
    };
    let sandbox = Sandbox::new(config.sandbox.clone())?
        .with_workdir_root(args.out.join(&request.request_id).join("exec"));

    info!(request_id = %request.request_id, out = %args.out.display(), "run started");
    let output = Pipeline::new(&gateway, &sandbox, config.pipeline.clone(), &config.sandbox)?
        .with_runs_root(&args.out)
        .run(&request)?;

    print_summary(&output.summary);
    if let Some(dir) = &output.run_dir {
        println!("run directory: {}", dir.display());
    }
    Ok(match output.result.stop_reason {
        StopReason::ThresholdMet => ExitCode::SUCCESS,
        StopReason::Plateau | StopReason::BudgetExhausted => ExitCode::from(2),
    })
}

fn report(run_dir: &Path) -> Result<()> {
    let path = run_dir.join("summary.json");
    if !path.is_file() {
        bail!("{} has no summary.json", run_dir.display());
    }
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let summary: RunSummary = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    print_summary(&summary);
    Ok(())
}

fn print_summary(summary: &RunSummary) {
    println!("request: {}", summary.request);
    println!("{:>4}  {:>8}  {:>6}  {:>8}  {:<15}  {:<22}  {:>10}", "iter", "accuracy", "passed", "attempts", "final status", "routed to", "cost (USD)");
    for it in &summary.iterations {
        let status = it.final_status.map(|s| format!("{s:?}")).unwrap_or_else(|| "-".into());
        let route = it
            .diagnosis
            .as_ref()
            .map(|d| format!("{:?}{}", d.route_target, if d.degraded { " (degraded)" } else { "" }))
            .unwrap_or_else(|| "-".into());
        println!(
            "{:>4}  {:>8.3}  {:>6}  {:>8}  {:<15}  {:<22}  {:>10.4}",
            it.index, it.accuracy, it.passed, it.attempts, status, route, it.cost_usd
        );
    }
    println!(
        "stop: {:?}; best iteration {} at {:.3} (threshold {:.2}); {} sandbox executions",
        summary.stop_reason, summary.best_iteration, summary.best_accuracy, summary.threshold, summary.sandbox_executions
    );
    println!();
    print!("{}", summary.cost_table.render());
}
