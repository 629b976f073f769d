use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Check, Metrics, ScenarioResult, TimelineEntry};
use crate::agent::{Agent, AgentConfig, DeviceReport};
use crate::clock::SimClock;
use crate::coordinator::{
    Coordinator, CoordinatorConfig, PlannedSubtask, Planner, WifiInterferencePlanner, WifiQosPlanner,
};
use crate::corpus::{shipped, DeviceApiProfile};
use crate::fsm::CompletionStatus;
use crate::m2m_log::M2mLog;
use crate::sim::{simulate_upload, WifiWorld, WifiWorldConfig};
use crate::transport::DirectLink;

pub const SCENARIO1_JSON: &str = include_str!("../../../../config/wifi_scenario1.json");
pub const SCENARIO2_JSON: &str = include_str!("../../../../config/wifi_scenario2.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScenarioEvent {
    Join { device_id: String },
    Leave { device_id: String },
    InterferenceOn,
    InterferenceOff,
    /// Hand a subtask to a device regardless of what the planner wants.
    InjectSubtask { device_id: String, text: String },
    /// Override (or with `null`, clear) a client's reported upload time.
    InjectUploadTime { device_id: String, upload_time_s: Option<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduledEvent {
    pub round: u64,
    #[serde(flatten)]
    pub event: ScenarioEvent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WifiScenarioConfig {
    pub scenario: u8,
    pub round_ms: u64,
    pub rounds: u64,
    pub deadline_s: f64,
    pub per_threshold: f64,
    pub schedule: Vec<(u32, u32)>,
    #[serde(default)]
    pub events: Vec<ScheduledEvent>,
    pub world: WifiWorldConfig,
}

impl WifiScenarioConfig {
    pub fn parse(text: &str) -> Result<Self, String> {
        let c: WifiScenarioConfig = serde_json::from_str(text).map_err(|e| e.to_string())?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::parse(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn default_for(scenario: u8) -> Result<Self, String> {
        match scenario {
            1 => Self::parse(SCENARIO1_JSON),
            2 => Self::parse(SCENARIO2_JSON),
            other => Err(format!("no WiFi scenario {other}")),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        self.world.validate()?;
        if !matches!(self.scenario, 1 | 2) {
            return Err(format!("scenario must be 1 or 2, got {}", self.scenario));
        }
        if self.schedule.is_empty() {
            return Err("empty CW schedule".into());
        }
        if self.round_ms == 0 || self.rounds == 0 {
            return Err("round_ms and rounds must be positive".into());
        }
        for e in &self.events {
            let id = match &e.event {
                ScenarioEvent::Join { device_id }
                | ScenarioEvent::Leave { device_id }
                | ScenarioEvent::InjectSubtask { device_id, .. }
                | ScenarioEvent::InjectUploadTime { device_id, .. } => Some(device_id),
                _ => None,
            };
            if let Some(id) = id {
                if self.world.client(id).is_none() {
                    return Err(format!("event at round {} names unknown client {id}", e.round));
                }
            }
        }
        Ok(())
    }

    fn round_of(&self, pred: impl Fn(&ScenarioEvent) -> bool) -> Option<u64> {
        self.events.iter().find(|e| pred(&e.event)).map(|e| e.round)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WifiMetricsRow {
    pub round: u64,
    pub t_s: f64,
    pub device_id: String,
    pub upload_time_s: Option<f64>,
    pub per: f64,
    pub log_cw_min: u32,
    pub log_cw_max: u32,
    pub band: String,
    pub interference_detected: Option<bool>,
}

impl WifiMetricsRow {
    fn from_report(round: u64, t_s: f64, r: &DeviceReport) -> Self {
        let a = &r.attributes;
        let u32_of = |k: &str| a.get(k).and_then(Value::as_u64).unwrap_or(0) as u32;
        WifiMetricsRow {
            round,
            t_s,
            device_id: r.device_id.clone(),
            upload_time_s: a.get("upload_time_s").and_then(Value::as_f64),
            per: a.get("per").and_then(Value::as_f64).unwrap_or(0.0),
            log_cw_min: u32_of("log_cw_min"),
            log_cw_max: u32_of("log_cw_max"),
            band: a.get("band").and_then(Value::as_str).unwrap_or("").to_string(),
            interference_detected: a.get("interference_detected").and_then(Value::as_bool),
        }
    }
}

fn profile_for(device_id: &str) -> Result<DeviceApiProfile, String> {
    let profile = match device_id {
        "client-1" => shipped::wifi_sdr(),
        "client-2" => shipped::wifi_commercial(),
        other => return Err(format!("no API corpus for {other}")),
    };
    Ok(profile)
}

/// Run a WiFi scenario on simulated time: one coordinator round per
/// `round_ms`, agents stepped after every round.
pub fn run_wifi(config: &WifiScenarioConfig) -> Result<ScenarioResult, String> {
    config.validate()?;
    let clock = SimClock::new();
    let log = M2mLog::new(Arc::new(clock.clone()));
    let world = WifiWorld::new(config.world.clone())?;
    let mut agents = Vec::new();
    for c in &config.world.clients {
        let device = world.device(&c.device_id).expect("client exists");
        let agent = Agent::new(&AgentConfig::new(&c.device_id), profile_for(&c.device_id)?, device, log.clone())
            .map_err(|e| e.to_string())?;
        agents.push(agent);
    }
    let planner: Box<dyn Planner> = match config.scenario {
        1 => Box::new(WifiQosPlanner::new(config.deadline_s, config.schedule.clone())),
        _ => Box::new(WifiInterferencePlanner::new(config.per_threshold)),
    };
    let link = Arc::new(DirectLink::new(agents.clone()));
    let mut coordinator =
        Coordinator::new(CoordinatorConfig::default(), link, planner, log.clone()).map_err(|e| e.to_string())?;

    let mut timeline = Vec::new();
    let mut rows = Vec::new();
    let mut outcomes: Vec<(u64, String, String, CompletionStatus)> = Vec::new();
    for round in 1..=config.rounds {
        clock.set_ms((round - 1) * config.round_ms);
        let t_s = clock_s(&clock);
        for e in config.events.iter().filter(|e| e.round == round) {
            let text = match &e.event {
                ScenarioEvent::Join { device_id } => {
                    world.set_active(device_id, true);
                    format!("{device_id} joins and starts uploading")
                }
                ScenarioEvent::Leave { device_id } => {
                    world.set_active(device_id, false);
                    format!("{device_id} stops uploading")
                }
                ScenarioEvent::InterferenceOn => {
                    world.set_interference(true);
                    "interference on 2.4 GHz starts".to_string()
                }
                ScenarioEvent::InterferenceOff => {
                    world.set_interference(false);
                    "interference on 2.4 GHz stops".to_string()
                }
                ScenarioEvent::InjectSubtask { device_id, text } => {
                    coordinator.inject(PlannedSubtask::new(device_id.clone(), text.clone()));
                    format!("forced subtask for {device_id}: \"{text}\"")
                }
                ScenarioEvent::InjectUploadTime { device_id, upload_time_s } => {
                    world.inject_upload_time(device_id, *upload_time_s);
                    match upload_time_s {
                        Some(s) => format!("{device_id} reports a {s} s upload regardless of the channel"),
                        None => format!("{device_id} reports its real upload time again"),
                    }
                }
            };
            log.record(format!("scenario: {text}"));
            timeline.push(TimelineEntry { t_s, round, event: text, detail: serde_json::to_value(&e.event).unwrap() });
        }
        let r = coordinator.run_round();
        for report in r.received.values() {
            let row = WifiMetricsRow::from_report(round, t_s, report);
            timeline.push(TimelineEntry {
                t_s,
                round,
                event: format!("{} reports", row.device_id),
                detail: serde_json::to_value(&row).unwrap(),
            });
            rows.push(row);
        }
        for o in &r.outcomes {
            outcomes.push((o.round, o.device_id.clone(), o.text.clone(), o.status));
            timeline.push(TimelineEntry {
                t_s,
                round,
                event: format!("{} {}: \"{}\"", o.device_id, crate::agent::status_words(o.status), o.text),
                detail: json!({ "subtask_id": o.subtask_id, "status": o.status }),
            });
        }
        for s in &r.dispatched {
            timeline.push(TimelineEntry {
                t_s,
                round,
                event: format!("coordinator assigns \"{}\" to {}", s.text, s.device_id),
                detail: json!({ "subtask_id": s.subtask_id }),
            });
        }
        for a in &agents {
            a.interpret_loop_step();
        }
    }
    let summary = json!({
        "planner": coordinator.planner().name(),
        "plan": coordinator.planner().summary(),
        "messages": coordinator.message_count(),
        "final": rows.iter().rev().take(config.world.clients.len()).collect::<Vec<_>>(),
    });
    let checks = match config.scenario {
        1 => scenario1_checks(config, &rows, &summary),
        _ => scenario2_checks(config, &rows, &outcomes),
    };
    Ok(ScenarioResult {
        scenario: format!("wifi-scenario{}", config.scenario),
        seed: config.world.seed,
        timeline,
        metrics: Metrics::Wifi(rows),
        summary,
        checks,
        m2m_log: log.lines(),
    })
}

fn clock_s(clock: &SimClock) -> f64 {
    use crate::clock::Clock;
    clock.now_ms() as f64 / 1e3
}

fn row<'a>(rows: &'a [WifiMetricsRow], round: u64, id: &str) -> Option<&'a WifiMetricsRow> {
    rows.iter().find(|r| r.round == round && r.device_id == id)
}

fn scenario1_checks(config: &WifiScenarioConfig, rows: &[WifiMetricsRow], summary: &Value) -> Vec<Check> {
    let deadline = config.deadline_s;
    let target = config
        .world
        .clients
        .iter()
        .find(|c| c.cw_configurable)
        .map(|c| c.device_id.as_str())
        .unwrap_or("client-1");
    let join = config.round_of(|e| matches!(e, ScenarioEvent::Join { .. })).unwrap_or(1);
    let upload = |round: u64| row(rows, round, target).and_then(|r| r.upload_time_s);
    let mut checks = Vec::new();
    let alone = upload(join.saturating_sub(1).max(1));
    checks.push(Check::new(
        "alone meets deadline",
        join > 1 && alone.is_some_and(|t| t <= deadline),
        format!("{target} upload {alone:?} s before anyone joins"),
    ));
    let after = upload(join);
    checks.push(Check::new(
        "deadline missed after join",
        after.is_some_and(|t| t > deadline),
        format!("{target} upload {after:?} s when the second client joins"),
    ));
    let last = rows.last().map(|r| r.round).unwrap_or(0);
    let final_cw = row(rows, last, target).map(|r| (r.log_cw_min, r.log_cw_max));
    let floor = config.schedule.last().copied();
    checks.push(Check::new(
        "terminal CW reached",
        final_cw.is_some() && final_cw == floor,
        format!("final CW {final_cw:?}, schedule floor {floor:?}"),
    ));
    let finals: Vec<&WifiMetricsRow> = rows.iter().filter(|r| r.round == last).collect();
    let all_ok = !finals.is_empty() && finals.iter().all(|r| r.upload_time_s.is_none_or(|t| t <= deadline));
    checks.push(Check::new(
        "all clients meet deadline",
        all_ok,
        finals
            .iter()
            .map(|r| format!("{} {:?} s", r.device_id, r.upload_time_s))
            .collect::<Vec<_>>()
            .join(", "),
    ));
    let injected = config.events.iter().any(|e| matches!(e.event, ScenarioEvent::InjectUploadTime { upload_time_s: Some(_), .. }));
    if injected {
        let rollbacks = summary["plan"]["rollbacks"].as_u64().unwrap_or(0);
        checks.push(Check::new("rollback on violation", rollbacks >= 1, format!("{rollbacks} rollback(s)")));
    }
    checks
}

fn scenario2_checks(
    config: &WifiScenarioConfig,
    rows: &[WifiMetricsRow],
    outcomes: &[(u64, String, String, CompletionStatus)],
) -> Vec<Check> {
    let threshold = config.per_threshold;
    let mut checks = Vec::new();
    let Some(on) = config.round_of(|e| matches!(e, ScenarioEvent::InterferenceOn)) else {
        let switched = rows.iter().any(|r| r.band == "band_5");
        checks.push(Check::new("quiet without interference", !switched, "no interference scheduled"));
        return checks;
    };
    let at_on: Vec<&WifiMetricsRow> = rows.iter().filter(|r| r.round == on).collect();
    checks.push(Check::new(
        "both PERs high under interference",
        at_on.len() >= 2 && at_on.iter().all(|r| r.per > threshold),
        at_on.iter().map(|r| format!("{} {}", r.device_id, r.per)).collect::<Vec<_>>().join(", "),
    ));
    let sensed = at_on.iter().any(|r| r.interference_detected == Some(true));
    checks.push(Check::new("interference sensed", sensed, format!("round {on}")));
    let switched = rows.iter().find(|r| r.band == "band_5");
    checks.push(Check::new(
        "post-switch PER",
        switched.is_some_and(|r| (r.per - 0.067).abs() <= 0.001),
        format!("{:?}", switched.map(|r| (&r.device_id, r.round, r.per))),
    ));
    let refused = outcomes
        .iter()
        .filter(|(_, _, text, _)| text.to_lowercase().contains("switch"))
        .filter(|(_, id, ..)| config.world.client(id).is_some_and(|c| !c.can_switch_band))
        .map(|(_, id, _, s)| (id.clone(), *s))
        .collect::<Vec<_>>();
    checks.push(Check::new(
        "forced switch not executable",
        !refused.is_empty() && refused.iter().all(|(_, s)| *s == CompletionStatus::NotExecutable),
        format!("{refused:?}"),
    ));
    if let Some(off) = config.round_of(|e| matches!(e, ScenarioEvent::InterferenceOff)) {
        let stuck: Vec<&WifiMetricsRow> = rows.iter().filter(|r| r.round == off && r.band == "band_2_4").collect();
        checks.push(Check::new(
            "PER recovers after interference",
            !stuck.is_empty() && stuck.iter().all(|r| r.per <= threshold),
            stuck.iter().map(|r| format!("{} {}", r.device_id, r.per)).collect::<Vec<_>>().join(", "),
        ));
    }
    checks
}

pub fn run_wifi_scenario1(seed: u64) -> Result<ScenarioResult, String> {
    let mut c = WifiScenarioConfig::default_for(1)?;
    c.world.seed = seed;
    run_wifi(&c)
}

pub fn run_wifi_scenario2(seed: u64) -> Result<ScenarioResult, String> {
    let mut c = WifiScenarioConfig::default_for(2)?;
    c.world.seed = seed;
    run_wifi(&c)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub cw: (u32, u32),
    pub upload_time_s: f64,
    pub airtime_share: f64,
}

/// Upload time of `device_id` at every schedule step, with every client active.
pub fn cw_sweep(world: &WifiWorldConfig, device_id: &str, schedule: &[(u32, u32)]) -> Vec<SweepPoint> {
    let mut w = world.clone();
    for c in &mut w.clients {
        c.active = true;
    }
    let mut out = Vec::new();
    for &cw in schedule {
        if let Some(c) = w.clients.iter_mut().find(|c| c.device_id == device_id) {
            c.log_cw_min = cw.0;
            c.log_cw_max = cw.1;
        }
        let stats: BTreeMap<_, _> = simulate_upload(&w);
        if let Some(s) = stats.get(device_id) {
            out.push(SweepPoint { cw, upload_time_s: s.upload_time_s, airtime_share: s.airtime_share });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coordinator::CW_SCHEDULE;

    #[test]
    fn shipped_configs_parse() {
        let one = WifiScenarioConfig::default_for(1).unwrap();
        assert_eq!(one.schedule, CW_SCHEDULE.to_vec());
        assert_eq!(one.world.file_size_bits, 32e6);
        assert!(WifiScenarioConfig::default_for(2).is_ok());
        assert!(WifiScenarioConfig::default_for(3).is_err());
    }

    #[test]
    fn unknown_client_in_event_rejected() {
        let mut c = WifiScenarioConfig::default_for(1).unwrap();
        c.events.push(ScheduledEvent { round: 2, event: ScenarioEvent::Join { device_id: "client-9".into() } });
        assert!(c.validate().unwrap_err().contains("client-9"));
    }

    #[test]
    fn scenario1_converges_to_floor() {
        let res = run_wifi_scenario1(1).unwrap();
        assert!(res.passed(), "{:#?}", res.checks);
    }

    #[test]
    fn raised_floor_does_not_converge() {
        let mut c = WifiScenarioConfig::default_for(1).unwrap();
        c.schedule.truncate(3);
        let res = run_wifi(&c).unwrap();
        assert!(!res.check("all clients meet deadline").unwrap().pass);
        assert_eq!(res.summary["plan"]["stuck"], json!(true));
    }

    #[test]
    fn injected_violation_rolls_back() {
        let mut c = WifiScenarioConfig::default_for(1).unwrap();
        c.events.push(ScheduledEvent {
            round: 9,
            event: ScenarioEvent::InjectUploadTime { device_id: "client-2".into(), upload_time_s: Some(30.0) },
        });
        c.events.push(ScheduledEvent {
            round: 11,
            event: ScenarioEvent::InjectUploadTime { device_id: "client-2".into(), upload_time_s: None },
        });
        let res = run_wifi(&c).unwrap();
        assert!(res.check("rollback on violation").unwrap().pass, "{:#?}", res.summary);
    }

    #[test]
    fn scenario2_narrative() {
        let res = run_wifi_scenario2(2).unwrap();
        assert!(res.passed(), "{:#?}", res.checks);
    }

    #[test]
    fn no_interference_no_dispatch() {
        let mut c = WifiScenarioConfig::default_for(2).unwrap();
        c.events.clear();
        let res = run_wifi(&c).unwrap();
        assert_eq!(res.summary["plan"]["switch_requests"], json!({}));
        assert!(res.passed());
    }

    #[test]
    fn timeline_is_monotone_and_reproducible() {
        let a = run_wifi_scenario2(5).unwrap();
        let b = run_wifi_scenario2(5).unwrap();
        assert!(a.timeline.windows(2).all(|w| w[0].t_s <= w[1].t_s));
        assert_eq!(a.timeline, b.timeline);
        assert_eq!(a.m2m_log, b.m2m_log);
    }
}
