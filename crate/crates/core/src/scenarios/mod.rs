//! Runnable scenarios: the warehouse benchmark, the two WiFi scenarios and
//! ad-hoc instructions. Each run produces a timeline, metrics rows and the
//! M2M log, and can be written to a run directory.

mod instruct;
mod warehouse;
mod wifi;

use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::coordinator::{write_metrics_csv, MetricsRow};

pub use instruct::{instruct, InstructOptions, InstructTrace};
pub use warehouse::{codegen_span_ms, run_warehouse, StubExtractor, WarehouseOptions, WarehouseTrial};
pub use wifi::{
    cw_sweep, run_wifi, run_wifi_scenario1, run_wifi_scenario2, ScenarioEvent, ScheduledEvent, SweepPoint,
    WifiMetricsRow, WifiScenarioConfig, SCENARIO1_JSON, SCENARIO2_JSON,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineEntry {
    pub t_s: f64,
    pub round: u64,
    pub event: String,
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub detail: Value,
}

/// A named pass/fail condition evaluated on a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: &str, pass: bool, detail: impl Into<String>) -> Self {
        Check { name: name.into(), pass, detail: detail.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Metrics {
    Warehouse(Vec<MetricsRow>),
    Wifi(Vec<WifiMetricsRow>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub scenario: String,
    pub seed: u64,
    pub timeline: Vec<TimelineEntry>,
    pub metrics: Metrics,
    pub summary: Value,
    pub checks: Vec<Check>,
    #[serde(skip)]
    pub m2m_log: Vec<String>,
}

impl ScenarioResult {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// Write `metrics.csv`, `timeline.json` and `m2m.log` into `dir`.
    pub fn write_to(&self, dir: &Path) -> io::Result<()> {
        fs::create_dir_all(dir)?;
        match &self.metrics {
            Metrics::Warehouse(rows) => write_metrics_csv(&dir.join("metrics.csv"), rows)?,
            Metrics::Wifi(rows) => {
                let mut w = csv::Writer::from_path(dir.join("metrics.csv"))?;
                for r in rows {
                    w.serialize(r)?;
                }
                w.flush()?;
            }
        }
        let timeline = serde_json::json!({
            "scenario": self.scenario,
            "seed": self.seed,
            "timeline": self.timeline,
            "summary": self.summary,
            "checks": self.checks,
        });
        fs::write(dir.join("timeline.json"), serde_json::to_string_pretty(&timeline)? + "\n")?;
        let mut log = self.m2m_log.join("\n");
        log.push('\n');
        fs::write(dir.join("m2m.log"), log)
    }
}
