//! The centralized pipeline: the coordinator itself plans an FSM and then
//! generates code for each device, one device after another.

use std::io;
use std::path::Path;
use std::time::{Duration, Instant};

use parking_lot::Mutex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::m2m_log::M2mLog;

/// Stand-in for an LLM endpoint: fixed latency, seeded failures.
pub struct StubLlm {
    latency: Duration,
    fail_p: f64,
    rng: Mutex<ChaCha8Rng>,
}

impl StubLlm {
    pub fn new(latency: Duration, fail_p: f64, seed: u64) -> Self {
        StubLlm {
            latency,
            fail_p: fail_p.clamp(0.0, 1.0),
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(seed)),
        }
    }

    pub fn latency(&self) -> Duration {
        self.latency
    }

    /// Sleeps for the latency; never fails.
    pub fn plan_call(&self) {
        if !self.latency.is_zero() {
            std::thread::sleep(self.latency);
        }
    }

    /// Sleeps for the latency; fails with probability `fail_p`.
    pub fn codegen_call(&self) -> bool {
        self.plan_call();
        !self.rng.lock().random_bool(self.fail_p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineOutcome {
    pub wall_time_ms: f64,
    pub success: bool,
    pub per_device: Vec<bool>,
}

/// Plan then generate code for every device in turn. A failed generation is
/// recorded and the pipeline moves on.
pub fn run_centralized_baseline(instruction: &str, devices: &[String], llm: &StubLlm, log: &M2mLog) -> BaselineOutcome {
    log.record(format!("coordinator plans \"{instruction}\" centrally for {} devices", devices.len()));
    let start = Instant::now();
    let per_device: Vec<bool> = devices
        .iter()
        .map(|d| {
            llm.plan_call();
            let ok = llm.codegen_call();
            log.record(format!(
                "coordinator {} code for {d}",
                if ok { "generated" } else { "failed to generate" }
            ));
            ok
        })
        .collect();
    BaselineOutcome {
        wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
        success: per_device.iter().all(|ok| *ok),
        per_device,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub mode: String,
    #[serde(rename = "N")]
    pub n: u32,
    pub wall_time_ms: f64,
    pub success: bool,
    pub round_count: u64,
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricsRow]) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()
}
