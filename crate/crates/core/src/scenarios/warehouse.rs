use std::collections::BTreeMap;
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use parking_lot::Mutex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{Check, Metrics, ScenarioResult, TimelineEntry};
use crate::agent::{Agent, AgentConfig};
use crate::clock::WallClock;
use crate::codegen::{ArgumentExtractor, CodegenError, ReferenceExtractor};
use crate::coordinator::{
    robot_id, run_centralized_baseline, Coordinator, CoordinatorConfig, MetricsRow, Mode, StubLlm, WarehousePlanner,
};
use crate::corpus::{shipped, ApiFunction};
use crate::m2m_log::M2mLog;
use crate::sim::WarehouseWorld;
use crate::transport::DirectLink;

pub const WAREHOUSE_INSTRUCTION: &str = "Please check if there are vacant positions on the shelves.";

#[derive(Debug, Clone, Copy)]
struct CallSpan {
    start: Instant,
    end: Instant,
    ok: bool,
}

/// Wraps the reference extractor with a fixed delay and seeded failures,
/// standing in for an on-device model. Every call is timed.
pub struct StubExtractor {
    latency: Duration,
    fail_p: f64,
    rng: Mutex<ChaCha8Rng>,
    calls: Mutex<Vec<(String, CallSpan)>>,
}

impl StubExtractor {
    pub fn new(latency: Duration, fail_p: f64, rng: ChaCha8Rng) -> Self {
        StubExtractor {
            latency,
            fail_p: fail_p.clamp(0.0, 1.0),
            rng: Mutex::new(rng),
            calls: Mutex::new(Vec::new()),
        }
    }

    /// Successful and total calls so far.
    pub fn call_count(&self) -> (usize, usize) {
        let calls = self.calls.lock();
        (calls.iter().filter(|(_, s)| s.ok).count(), calls.len())
    }
}

impl ArgumentExtractor for StubExtractor {
    fn name(&self) -> &str {
        "stub"
    }

    fn extract_values(&self, text: &str, function: &ApiFunction) -> Result<Vec<String>, CodegenError> {
        let start = Instant::now();
        if !self.latency.is_zero() {
            thread::sleep(self.latency);
        }
        let ok = !self.rng.lock().random_bool(self.fail_p);
        let out = if ok {
            ReferenceExtractor.extract_values(text, function)
        } else {
            Err(CodegenError::Provider("stub model returned no usable output".into()))
        };
        let span = CallSpan { start, end: Instant::now(), ok };
        self.calls.lock().push((function.name.clone(), span));
        out
    }
}

/// Codegen wall time for concurrently generated subtasks: calls are grouped by
/// function (every robot moves, then every robot scans) and the spans of the
/// groups are added up.
pub fn codegen_span_ms(extractors: &[Arc<StubExtractor>]) -> f64 {
    let mut groups: BTreeMap<String, (Instant, Instant)> = BTreeMap::new();
    for e in extractors {
        for (f, s) in e.calls.lock().iter() {
            let g = groups.entry(f.clone()).or_insert((s.start, s.end));
            g.0 = g.0.min(s.start);
            g.1 = g.1.max(s.end);
        }
    }
    groups.values().map(|(a, b)| (*b - *a).as_secs_f64() * 1e3).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarehouseOptions {
    pub n: u32,
    pub mode: Mode,
    pub latency: Duration,
    pub fail_p: f64,
    pub trials: u32,
    pub seed: u64,
    pub max_rounds: u64,
}

impl WarehouseOptions {
    pub fn new(n: u32, mode: Mode) -> Self {
        WarehouseOptions {
            n,
            mode,
            latency: Duration::from_millis(200),
            fail_p: 0.0,
            trials: 1,
            seed: 0,
            max_rounds: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarehouseTrial {
    pub trial: u32,
    pub codegen_wall_ms: f64,
    pub success: bool,
    pub rounds: u64,
    /// Successful and attempted code generations across all devices.
    pub device_codegen_ok: usize,
    pub device_codegen_attempts: usize,
    pub vacancies: BTreeMap<u32, Vec<u32>>,
}

fn trial_seed(seed: u64, trial: u32) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(trial as u64)
}

fn distributed_trial(opts: &WarehouseOptions, trial: u32, log: &M2mLog) -> WarehouseTrial {
    let n = opts.n;
    let world = WarehouseWorld::new(n, trial_seed(opts.seed, trial));
    let mut stubs = Vec::new();
    let agents: Vec<Agent> = (1..=n)
        .map(|k| {
            let id = robot_id(k);
            let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(opts.seed, trial));
            rng.set_stream(k as u64);
            let stub = Arc::new(StubExtractor::new(opts.latency, opts.fail_p, rng));
            stubs.push(stub.clone());
            let config = AgentConfig::new(&id);
            let provider = config.provider.build();
            Agent::with_parts(
                &config,
                shipped::robot_for_warehouse(&id, n),
                world.add_robot(&id),
                provider,
                stub,
                log.clone(),
            )
            .expect("shipped robot corpus is valid")
        })
        .collect();
    let link = Arc::new(DirectLink::new(agents.clone()));
    let mut coordinator = Coordinator::new(
        CoordinatorConfig::default(),
        link,
        Box::new(WarehousePlanner::new(n)),
        log.clone(),
    )
    .expect("default timing is valid");
    coordinator.submit_instruction(WAREHOUSE_INSTRUCTION).expect("non-empty");
    let mut rounds = 0;
    while rounds < opts.max_rounds && !coordinator.planner().is_done() {
        coordinator.run_round();
        rounds += 1;
        // Agents interpret in parallel, as they would on separate devices.
        thread::scope(|s| {
            for a in &agents {
                s.spawn(|| a.interpret_loop_step());
            }
        });
    }
    let summary = coordinator.planner().summary();
    let vacancies: BTreeMap<u32, Vec<u32>> = serde_json::from_value(summary["vacancies"].clone()).unwrap_or_default();
    let success = vacancies.len() == n as usize && vacancies.iter().all(|(s, v)| world.vacancy(*s) == Some(v.as_slice()));
    let (ok, attempts) = stubs.iter().fold((0, 0), |(a, b), s| {
        let (o, t) = s.call_count();
        (a + o, b + t)
    });
    WarehouseTrial {
        trial,
        codegen_wall_ms: codegen_span_ms(&stubs),
        success,
        rounds,
        device_codegen_ok: ok,
        device_codegen_attempts: attempts,
        vacancies,
    }
}

fn centralized_trial(opts: &WarehouseOptions, trial: u32, log: &M2mLog) -> WarehouseTrial {
    let llm = StubLlm::new(opts.latency, opts.fail_p, trial_seed(opts.seed, trial));
    let devices: Vec<String> = (1..=opts.n).map(robot_id).collect();
    let out = run_centralized_baseline(WAREHOUSE_INSTRUCTION, &devices, &llm, log);
    WarehouseTrial {
        trial,
        codegen_wall_ms: out.wall_time_ms,
        success: out.success,
        rounds: 0,
        device_codegen_ok: out.per_device.iter().filter(|ok| **ok).count(),
        device_codegen_attempts: out.per_device.len(),
        vacancies: BTreeMap::new(),
    }
}

/// Run `trials` independent warehouse tasks. Only the first trial's M2M log is kept.
pub fn run_warehouse(opts: &WarehouseOptions) -> (ScenarioResult, Vec<WarehouseTrial>) {
    assert!(opts.n >= 1, "need at least one shelf");
    let mode_label = match opts.mode {
        Mode::Distributed => "distributed",
        Mode::CentralizedBaseline => "centralized_baseline",
    };
    let first_log = M2mLog::new(Arc::new(WallClock::new()));
    let mut trials = Vec::with_capacity(opts.trials as usize);
    let mut timeline = Vec::new();
    let origin = Instant::now();
    for t in 0..opts.trials {
        let log = if t == 0 { first_log.clone() } else { M2mLog::default() };
        let trial = match opts.mode {
            Mode::Distributed => distributed_trial(opts, t, &log),
            Mode::CentralizedBaseline => centralized_trial(opts, t, &log),
        };
        timeline.push(TimelineEntry {
            t_s: origin.elapsed().as_secs_f64(),
            round: trial.rounds,
            event: format!("trial {t} {}", if trial.success { "succeeded" } else { "failed" }),
            detail: json!({ "codegen_wall_ms": trial.codegen_wall_ms }),
        });
        trials.push(trial);
    }
    let rows: Vec<MetricsRow> = trials
        .iter()
        .map(|t| MetricsRow {
            mode: mode_label.into(),
            n: opts.n,
            wall_time_ms: t.codegen_wall_ms,
            success: t.success,
            round_count: t.rounds,
        })
        .collect();
    let count = trials.len().max(1) as f64;
    let success_rate = trials.iter().filter(|t| t.success).count() as f64 / count;
    let (ok, attempts) = trials
        .iter()
        .fold((0, 0), |(a, b), t| (a + t.device_codegen_ok, b + t.device_codegen_attempts));
    let device_rate = if attempts == 0 { 0.0 } else { ok as f64 / attempts as f64 };
    let mean_ms = trials.iter().map(|t| t.codegen_wall_ms).sum::<f64>() / count;
    let l_ms = opts.latency.as_secs_f64() * 1e3;
    let mut checks = Vec::new();
    if opts.fail_p == 0.0 {
        checks.push(Check::new("all trials succeed", success_rate == 1.0, format!("success rate {success_rate}")));
        if !opts.latency.is_zero() {
            match opts.mode {
                Mode::Distributed => checks.push(Check::new(
                    "codegen within 2.5 L",
                    trials.iter().all(|t| t.codegen_wall_ms <= 2.5 * l_ms),
                    format!("mean {mean_ms:.1} ms, bound {:.1} ms", 2.5 * l_ms),
                )),
                Mode::CentralizedBaseline => checks.push(Check::new(
                    "codegen at least 0.9 N 2L",
                    trials.iter().all(|t| t.codegen_wall_ms >= 0.9 * opts.n as f64 * 2.0 * l_ms),
                    format!("mean {mean_ms:.1} ms, bound {:.1} ms", 0.9 * opts.n as f64 * 2.0 * l_ms),
                )),
            }
        }
    }
    let result = ScenarioResult {
        scenario: format!("warehouse-{mode_label}"),
        seed: opts.seed,
        timeline,
        metrics: Metrics::Warehouse(rows),
        summary: json!({
            "n": opts.n,
            "mode": mode_label,
            "latency_ms": l_ms,
            "fail_p": opts.fail_p,
            "trials": opts.trials,
            "success_rate": success_rate,
            "device_codegen_success_rate": device_rate,
            "mean_codegen_wall_ms": mean_ms,
        }),
        checks,
        m2m_log: first_log.lines(),
    };
    (result, trials)
}
