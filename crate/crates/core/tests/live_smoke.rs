//! Needs `ANTHROPIC_API_KEY` and network access. Run with
//! `cargo test -p simforge-core --test live_smoke -- --ignored`.

use simforge_core::config::Config;
use simforge_core::gateway::{AnthropicTransport, Gateway};
use simforge_core::model::UserRequest;
use simforge_core::orchestrator::Pipeline;
use simforge_core::sandbox::Sandbox;

#[test]
#[ignore = "calls the live model API"]
fn electromagnetic_wave_end_to_end() {
    let config = Config::shipped();
    let Ok(transport) = AnthropicTransport::from_env(
        config.gateway.base_url.clone(),
        &config.gateway.api_key_env,
        std::time::Duration::from_secs(config.gateway.request_timeout_s),
    ) else {
        eprintln!("{} not set; skipping", config.gateway.api_key_env);
        return;
    };
    let tmp = tempfile::tempdir().unwrap();
    let gw = Gateway::new(transport, config.gateway_config());
    let sandbox = Sandbox::new(config.sandbox.clone()).unwrap().with_workdir_root(tmp.path().join("exec"));
    let out = Pipeline::new(&gw, &sandbox, config.pipeline.clone(), &config.sandbox)
        .unwrap()
        .with_runs_root(tmp.path().join("runs"))
        .run(&UserRequest::new("show me electromagnetic wave propagation").unwrap())
        .unwrap();

    let dir = out.run_dir.unwrap();
    for record in out.result.iterations.iter().filter(|r| r.final_status.is_some_and(|s| s.is_success())) {
        let frames = std::fs::read_dir(dir.join(format!("iteration_{}/frames", record.index))).unwrap().count();
        assert_eq!(frames, 8);
    }
    println!("{}", out.summary.cost_table.render());
    assert!(out.result.total_cost_usd < 1.0, "cost {}", out.result.total_cost_usd);
}
