use std::io::BufRead;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use llmind::agent::{Agent, AgentConfig};
use llmind::codegen::{ArgumentExtractor, ReferenceExtractor};
use llmind::coordinator::{
    Coordinator, CoordinatorConfig, Mode, NullPlanner, Planner, RemotePlanner, SamplingConfig, WarehousePlanner,
    WifiInterferencePlanner, WifiQosPlanner, CW_SCHEDULE,
};
use llmind::corpus::{load_profile, DeviceApiProfile};
use llmind::dataset::{
    evaluate_extractor, generate_dataset, read_jsonl, DatasetSpec, EmptyExtractor, SingleArgumentExtractor,
};
use llmind::device::Device;
use llmind::m2m_log::M2mLog;
use llmind::remote::{JsonEndpoint, RemoteExtractor, DEFAULT_TIMEOUT};
use llmind::scenarios::{
    cw_sweep, instruct, run_warehouse, run_wifi, InstructOptions, ScenarioResult, WarehouseOptions,
    WifiScenarioConfig,
};
use llmind::sim::{WarehouseWorld, WifiWorld};
use llmind::transport::{bind_address, serve_agent_tcp, TcpCoordinatorLink, DEFAULT_PORT};

#[derive(Parser)]
#[command(name = "llmind", version, about = "Coordinate simulated IoT devices with natural-language subtasks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Warehouse vacancy benchmark, distributed agents or the centralized pipeline.
    Warehouse(WarehouseArgs),
    /// WiFi QoS (scenario 1) or interference (scenario 2) run on simulated time.
    Wifi(WifiArgs),
    /// Send one instruction to an embedded warehouse and print the trace.
    Instruct(InstructArgs),
    /// Run a device agent against a coordinator over TCP.
    Agent(AgentArgs),
    /// Run a coordinator that accepts agents over TCP; instructions are read from stdin.
    Coordinator(CoordinatorArgs),
    /// Generate or score the subtask/argument dataset.
    Dataset {
        #[command(subcommand)]
        command: DatasetCommand,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Dist,
    Central,
}

#[derive(Args)]
struct WarehouseArgs {
    /// Shelf counts; one run per value.
    #[arg(long, value_delimiter = ',', default_value = "4")]
    n: Vec<u32>,
    #[arg(long, value_enum, default_value = "dist")]
    mode: ModeArg,
    #[arg(long, default_value_t = 200)]
    latency_ms: u64,
    #[arg(long, default_value_t = 0.0)]
    fail_p: f64,
    #[arg(long, default_value_t = 1)]
    trials: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "runs/warehouse")]
    out: PathBuf,
    /// Exit non-zero if any check fails.
    #[arg(long)]
    check: bool,
}

#[derive(Args)]
struct WifiArgs {
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=2))]
    scenario: u8,
    /// Overrides the seed in the scenario config.
    #[arg(long)]
    seed: Option<u64>,
    /// Scenario config; defaults to the shipped one.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    check: bool,
    /// Print client 1's upload time at every CW step instead of running the scenario.
    #[arg(long)]
    sweep: bool,
}

#[derive(Args)]
struct InstructArgs {
    #[arg(long)]
    text: String,
    #[arg(long, default_value_t = 2)]
    n: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    max_rounds: u64,
}

#[derive(Args)]
struct AgentArgs {
    /// Device API profile (JSON).
    #[arg(long)]
    profile: PathBuf,
    /// Coordinator address; defaults to the agent config's endpoint, then localhost.
    #[arg(long)]
    connect: Option<String>,
    /// Agent config (JSON): embedding provider, extractor, FSM timeouts.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Shelves in the simulated warehouse behind a robot profile.
    #[arg(long, default_value_t = 4)]
    shelves: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum PlannerArg {
    Warehouse,
    Qos,
    Interference,
    Null,
    Remote,
}

#[derive(Args)]
struct CoordinatorArgs {
    /// Listen address; LLMIND_BIND takes precedence.
    #[arg(long)]
    bind: Option<String>,
    #[arg(long, value_enum, default_value = "warehouse")]
    planner: PlannerArg,
    /// Shelves for the warehouse planner.
    #[arg(long, default_value_t = 4)]
    n: u32,
    /// Upload deadline for the QoS planner.
    #[arg(long, default_value_t = 16.0)]
    deadline_s: f64,
    /// PER limit for the interference planner.
    #[arg(long, default_value_t = 0.2)]
    per_threshold: f64,
    /// Planning endpoint for the remote planner.
    #[arg(long)]
    plan_url: Option<String>,
    #[arg(long, default_value_t = 1000)]
    period_ms: u64,
    #[arg(long, default_value_t = 500)]
    timeout_ms: u64,
    #[arg(long, default_value_t = u64::MAX)]
    rounds: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scale {
    Full,
    Desk,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExtractorArg {
    Ref,
    Remote,
    Empty,
    Single,
}

#[derive(Subcommand)]
enum DatasetCommand {
    Gen {
        #[arg(long, value_enum, default_value = "desk")]
        scale: Scale,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    Eval {
        #[arg(long, value_enum, default_value = "ref")]
        extractor: ExtractorArg,
        #[arg(long)]
        test: PathBuf,
        /// Extraction endpoint for the remote extractor.
        #[arg(long)]
        url: Option<String>,
        /// Print the full report, failures included, as JSON.
        #[arg(long)]
        json: bool,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

/// `Ok(false)` means a `--check` run found a failing check.
fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Warehouse(a) => warehouse(a),
        Command::Wifi(a) => wifi(a),
        Command::Instruct(a) => {
            let opts = InstructOptions { n: a.n, seed: a.seed, max_rounds: a.max_rounds, echo: true };
            let trace = instruct(&a.text, &opts).map_err(|e| anyhow!(e))?;
            if let Some(w) = trace.warning {
                eprintln!("warning: {w}");
            }
            Ok(true)
        }
        Command::Agent(a) => agent(a),
        Command::Coordinator(a) => coordinator(a),
        Command::Dataset { command } => dataset(command),
    }
}

fn print_checks(result: &ScenarioResult) {
    for c in &result.checks {
        println!("{} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
}

fn warehouse(a: WarehouseArgs) -> Result<bool> {
    let mode = match a.mode {
        ModeArg::Dist => Mode::Distributed,
        ModeArg::Central => Mode::CentralizedBaseline,
    };
    let mut ok = true;
    for &n in &a.n {
        if n == 0 {
            bail!("--n values must be at least 1");
        }
        let opts = WarehouseOptions {
            n,
            mode,
            latency: Duration::from_millis(a.latency_ms),
            fail_p: a.fail_p,
            trials: a.trials,
            seed: a.seed,
            ..WarehouseOptions::new(n, mode)
        };
        let (result, _) = run_warehouse(&opts);
        let dir = a.out.join(format!("n{n}"));
        result.write_to(&dir).with_context(|| format!("writing {}", dir.display()))?;
        println!(
            "N={n} {}: success rate {}, mean codegen wall time {:.1} ms -> {}",
            result.summary["mode"].as_str().unwrap_or(""),
            result.summary["success_rate"],
            result.summary["mean_codegen_wall_ms"].as_f64().unwrap_or(0.0),
            dir.display()
        );
        print_checks(&result);
        ok &= result.passed();
    }
    Ok(ok || !a.check)
}

fn wifi(a: WifiArgs) -> Result<bool> {
    let mut config = match &a.config {
        Some(path) => WifiScenarioConfig::load(path),
        None => WifiScenarioConfig::default_for(a.scenario),
    }
    .map_err(|e| anyhow!("scenario configuration: {e}"))?;
    if let Some(seed) = a.seed {
        config.world.seed = seed;
    }
    if a.sweep {
        let target = config
            .world
            .clients
            .iter()
            .find(|c| c.cw_configurable)
            .ok_or_else(|| anyhow!("no client with a configurable contention window"))?
            .device_id
            .clone();
        for p in cw_sweep(&config.world, &target, &config.schedule) {
            println!("{target} CW ({}, {}): upload {:.2} s, airtime share {:.3}", p.cw.0, p.cw.1, p.upload_time_s, p.airtime_share);
        }
        return Ok(true);
    }
    let result = run_wifi(&config).map_err(|e| anyhow!(e))?;
    for e in &result.timeline {
        if !e.event.ends_with(" reports") {
            println!("[{:>6.1} s] {}", e.t_s, e.event);
        }
    }
    let out = a.out.unwrap_or_else(|| PathBuf::from(format!("runs/wifi-scenario{}", config.scenario)));
    result.write_to(&out).with_context(|| format!("writing {}", out.display()))?;
    println!("outputs -> {}", out.display());
    print_checks(&result);
    Ok(result.passed() || !a.check)
}

fn read_profile(path: &Path) -> Result<DeviceApiProfile> {
    let raw = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    load_profile(&raw).with_context(|| format!("loading {}", path.display()))
}

/// Pick a simulated device that implements the profile's functions.
fn simulated_device(profile: &DeviceApiProfile, shelves: u32, seed: u64) -> Result<Arc<dyn Device>> {
    let has = |f: &str| profile.function(f).is_some();
    if has("move_to_shelf") || has("identify_vacancy_by_shelf") {
        let world = WarehouseWorld::new(shelves, seed);
        return Ok(world.add_robot(&profile.device_id));
    }
    if has("get_link_metrics") || has("switch_band") {
        let mut config = WifiScenarioConfig::default_for(1).map_err(|e| anyhow!(e))?.world;
        config.seed = seed;
        for c in &mut config.clients {
            c.active = true;
        }
        let world = WifiWorld::new(config).map_err(|e| anyhow!(e))?;
        return match world.device(&profile.device_id) {
            Some(d) => Ok(d),
            None => bail!("no simulated WiFi client named {}", profile.device_id),
        };
    }
    bail!("no simulator implements the functions in profile {}", profile.device_id)
}

fn agent(a: AgentArgs) -> Result<bool> {
    let profile = read_profile(&a.profile)?;
    let config = match &a.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str::<AgentConfig>(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => AgentConfig::new(&profile.device_id),
    };
    let device = simulated_device(&profile, a.shelves, a.seed)?;
    let agent = Agent::new(&config, profile, device, M2mLog::default().echoing())?;
    let addr = a
        .connect
        .or(config.endpoint.clone())
        .unwrap_or_else(|| format!("127.0.0.1:{DEFAULT_PORT}"));
    let _runner = agent.spawn_runner();
    println!("{} connecting to {addr}", agent.device_id());
    serve_agent_tcp(&agent, &addr).with_context(|| format!("talking to coordinator at {addr}"))?;
    Ok(true)
}

fn coordinator(a: CoordinatorArgs) -> Result<bool> {
    let planner: Box<dyn Planner> = match a.planner {
        PlannerArg::Warehouse => Box::new(WarehousePlanner::new(a.n)),
        PlannerArg::Qos => Box::new(WifiQosPlanner::new(a.deadline_s, CW_SCHEDULE.to_vec())),
        PlannerArg::Interference => Box::new(WifiInterferencePlanner::new(a.per_threshold)),
        PlannerArg::Null => Box::new(NullPlanner),
        PlannerArg::Remote => {
            let url = a.plan_url.clone().ok_or_else(|| anyhow!("--plan-url is required for the remote planner"))?;
            Box::new(RemotePlanner::new(JsonEndpoint::new(url, DEFAULT_TIMEOUT), SamplingConfig::default()))
        }
    };
    let addr = bind_address(a.bind.as_deref());
    let link = TcpCoordinatorLink::bind(&addr).with_context(|| format!("binding {addr}"))?;
    println!("coordinator listening on {}", link.local_addr());
    let config = CoordinatorConfig::with_period(Duration::from_millis(a.period_ms), Duration::from_millis(a.timeout_ms));
    let log = M2mLog::default().echoing();
    let mut c = Coordinator::new(config, link, planner, log.clone())?;
    let queue = c.instructions();
    thread::spawn(move || {
        for line in std::io::stdin().lock().lines().map_while(Result::ok) {
            if let Err(e) = queue.submit(&line, log.clock().now_ms()) {
                eprintln!("ignored instruction: {e}");
            }
        }
    });
    c.run_realtime(a.rounds);
    println!("planner summary: {}", c.planner().summary());
    Ok(true)
}

fn dataset(command: DatasetCommand) -> Result<bool> {
    match command {
        DatasetCommand::Gen { scale, seed, out } => {
            let spec = match scale {
                Scale::Full => DatasetSpec::full(seed),
                Scale::Desk => DatasetSpec::desk(seed),
            };
            let m = generate_dataset(&spec, &out)?;
            println!("{} pairs ({} train, {} test) -> {}", m.total, m.train, m.test, out.display());
            Ok(true)
        }
        DatasetCommand::Eval { extractor, test, url, json } => {
            let pairs = read_jsonl(&test)?;
            let extractor: Box<dyn ArgumentExtractor> = match extractor {
                ExtractorArg::Ref => Box::new(ReferenceExtractor),
                ExtractorArg::Empty => Box::new(EmptyExtractor),
                ExtractorArg::Single => Box::new(SingleArgumentExtractor),
                ExtractorArg::Remote => {
                    let url = url.ok_or_else(|| anyhow!("--url is required for the remote extractor"))?;
                    Box::new(RemoteExtractor::new(JsonEndpoint::new(url, DEFAULT_TIMEOUT)))
                }
            };
            let report = evaluate_extractor(extractor.as_ref(), &pairs);
            if json {
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else {
                println!("{}: accuracy {:.4} over {} pairs", report.extractor, report.accuracy, report.total);
                for (arity, s) in &report.per_arity {
                    println!("  arity {arity}: {}/{} ({:.4})", s.correct, s.total, s.accuracy);
                }
                for f in report.failures.iter().take(5) {
                    println!("  failed #{}: {} ({})", f.index, f.instruction, f.reason);
                }
            }
            Ok(true)
        }
    }
}
