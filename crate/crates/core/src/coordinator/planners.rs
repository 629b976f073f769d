//! Scripted planners standing in for an LLM coordinator.

use std::collections::BTreeMap;

use serde_json::{json, Value};

use super::{PlanContext, PlannedSubtask, Planner};
use crate::codegen::numbers::integer_to_words;
use crate::fsm::CompletionStatus;

/// Never dispatches anything.
pub struct NullPlanner;

impl Planner for NullPlanner {
    fn name(&self) -> &str {
        "null"
    }

    fn plan(&mut self, _: &PlanContext<'_>) -> Vec<PlannedSubtask> {
        Vec::new()
    }
}

#[derive(Debug, Clone, PartialEq)]
enum RobotStep {
    Idle,
    Sent { step: usize, text: String },
    Ready(usize),
    Done,
    Failed,
}

/// N robots, robot k searches shelf k: move there, then identify vacancies.
pub struct WarehousePlanner {
    n: u32,
    active: bool,
    steps: BTreeMap<String, RobotStep>,
    retries: BTreeMap<String, u32>,
    results: BTreeMap<u32, Vec<u32>>,
}

impl WarehousePlanner {
    pub fn new(n: u32) -> Self {
        WarehousePlanner {
            n,
            active: false,
            steps: (1..=n).map(|k| (robot_id(k), RobotStep::Idle)).collect(),
            retries: BTreeMap::new(),
            results: BTreeMap::new(),
        }
    }

    pub fn results(&self) -> &BTreeMap<u32, Vec<u32>> {
        &self.results
    }

    pub fn failed(&self) -> Vec<String> {
        self.steps
            .iter()
            .filter(|(_, s)| **s == RobotStep::Failed)
            .map(|(id, _)| id.clone())
            .collect()
    }

    pub fn succeeded(&self) -> bool {
        self.results.len() == self.n as usize
    }

    fn text(step: usize, shelf: u32) -> String {
        let word = integer_to_words(shelf);
        match step {
            0 => format!("Move to shelf {word}."),
            _ => format!("Identify the vacancy in shelf {word}."),
        }
    }
}

pub fn robot_id(k: u32) -> String {
    format!("robot-{k}")
}

fn shelf_of(robot: &str) -> u32 {
    robot.trim_start_matches("robot-").parse().unwrap_or(0)
}

impl Planner for WarehousePlanner {
    fn name(&self) -> &str {
        "warehouse"
    }

    fn plan(&mut self, ctx: &PlanContext<'_>) -> Vec<PlannedSubtask> {
        for ins in ctx.instructions {
            let t = ins.text.to_lowercase();
            if !self.active && (t.contains("vacan") || t.contains("empty")) {
                self.active = true;
                for s in self.steps.values_mut() {
                    *s = RobotStep::Ready(0);
                }
            }
        }
        for o in ctx.outcomes {
            let Some(RobotStep::Sent { step, text }) = self.steps.get(&o.device_id).cloned() else {
                continue;
            };
            if o.text != text {
                continue;
            }
            let next = match o.status {
                CompletionStatus::Completed if step == 0 => RobotStep::Ready(1),
                CompletionStatus::Completed => {
                    let shelf = shelf_of(&o.device_id);
                    let scan = ctx.attribute(&o.device_id, "last_scan");
                    let vacant = scan
                        .filter(|s| s["shelf_id"] == json!(shelf))
                        .and_then(|s| serde_json::from_value(s["vacant_positions"].clone()).ok());
                    match vacant {
                        Some(v) => {
                            self.results.insert(shelf, v);
                            RobotStep::Done
                        }
                        None => RobotStep::Ready(1),
                    }
                }
                // Superseded only happens to our own re-issues; wait for the replacement.
                CompletionStatus::Superseded => continue,
                _ => {
                    let r = self.retries.entry(o.device_id.clone()).or_default();
                    *r += 1;
                    if *r > 1 {
                        RobotStep::Failed
                    } else {
                        RobotStep::Ready(step)
                    }
                }
            };
            self.steps.insert(o.device_id.clone(), next);
        }
        let mut out = Vec::new();
        for (robot, state) in self.steps.iter_mut() {
            if let RobotStep::Ready(step) = *state {
                if ctx.can_dispatch(robot) {
                    let text = Self::text(step, shelf_of(robot));
                    out.push(PlannedSubtask::new(robot.clone(), text.clone()));
                    *state = RobotStep::Sent { step, text };
                }
            }
        }
        out
    }

    fn is_done(&self) -> bool {
        self.active
            && self
                .steps
                .values()
                .all(|s| matches!(s, RobotStep::Done | RobotStep::Failed))
    }

    fn summary(&self) -> Value {
        json!({ "vacancies": self.results, "failed": self.failed() })
    }
}

/// Contention-window steps from the driver default down to the floor.
pub const CW_SCHEDULE: [(u32, u32); 5] = [(10, 15), (8, 12), (6, 9), (4, 6), (2, 4)];

pub fn cw_subtask(cw: (u32, u32)) -> String {
    format!(
        "Set the contention window to log CW min {} and log CW max {}.",
        integer_to_words(cw.0),
        integer_to_words(cw.1)
    )
}

/// Lowers a configurable client's CW one schedule step at a time until its
/// upload time meets the deadline. Steps back up once if another client
/// starts missing the deadline.
pub struct WifiQosPlanner {
    deadline_s: f64,
    schedule: Vec<(u32, u32)>,
    floor: usize,
    target: Option<String>,
    pending: Option<(u32, u32)>,
    settled_round: u64,
    stuck: bool,
    rolled_back: u32,
    history: Vec<Value>,
}

impl WifiQosPlanner {
    pub fn new(deadline_s: f64, schedule: Vec<(u32, u32)>) -> Self {
        let floor = schedule.len().saturating_sub(1);
        WifiQosPlanner {
            deadline_s,
            schedule,
            floor,
            target: None,
            pending: None,
            settled_round: 0,
            stuck: false,
            rolled_back: 0,
            history: Vec::new(),
        }
    }

    pub fn stuck(&self) -> bool {
        self.stuck
    }

    pub fn rollbacks(&self) -> u32 {
        self.rolled_back
    }

    fn upload(ctx: &PlanContext<'_>, id: &str) -> Option<f64> {
        ctx.attribute(id, "upload_time_s")?.as_f64()
    }

    fn step_of(&self, ctx: &PlanContext<'_>, id: &str) -> Option<usize> {
        let lo = ctx.attribute(id, "log_cw_min")?.as_u64()? as u32;
        let hi = ctx.attribute(id, "log_cw_max")?.as_u64()? as u32;
        self.schedule.iter().position(|s| *s == (lo, hi))
    }
}

impl Planner for WifiQosPlanner {
    fn name(&self) -> &str {
        "wifi-qos"
    }

    fn plan(&mut self, ctx: &PlanContext<'_>) -> Vec<PlannedSubtask> {
        if let Some(cw) = self.pending {
            for o in ctx.outcomes {
                if Some(&o.device_id) == self.target.as_ref() && o.text == cw_subtask(cw) {
                    self.pending = None;
                    self.settled_round = ctx.round;
                    self.history.push(json!({ "round": ctx.round, "cw": [cw.0, cw.1], "status": o.status }));
                }
            }
            if self.pending.is_some() {
                return Vec::new();
            }
        }
        // Decide only on reports taken after the last change landed.
        if ctx.round <= self.settled_round {
            return Vec::new();
        }
        let target = ctx
            .snapshots
            .iter()
            .find(|(_, r)| r.attributes.get("cw_configurable") == Some(&json!(true)) && r.attributes.contains_key("upload_time_s"))
            .map(|(id, _)| id.clone());
        let Some(target) = target else { return Vec::new() };
        self.target = Some(target.clone());
        if !ctx.can_dispatch(&target) {
            return Vec::new();
        }
        let Some(step) = self.step_of(ctx, &target) else { return Vec::new() };
        let others_violated = ctx
            .snapshots
            .keys()
            .filter(|id| **id != target)
            .any(|id| Self::upload(ctx, id).is_some_and(|t| t > self.deadline_s));
        let next = if others_violated && step > 0 {
            self.floor = step - 1;
            self.rolled_back += 1;
            Some(step - 1)
        } else if Self::upload(ctx, &target).is_some_and(|t| t > self.deadline_s) {
            if step < self.floor {
                Some(step + 1)
            } else {
                self.stuck = true;
                None
            }
        } else {
            self.stuck = false;
            None
        };
        match next {
            Some(i) => {
                let cw = self.schedule[i];
                self.pending = Some(cw);
                vec![PlannedSubtask::new(target, cw_subtask(cw))]
            }
            None => Vec::new(),
        }
    }

    fn summary(&self) -> Value {
        json!({ "changes": self.history, "stuck": self.stuck, "rollbacks": self.rolled_back })
    }
}

pub const BAND_SWITCH_TEXT: &str = "Switch to the 5 GHz band.";

/// When any client senses interference, moves every band-switchable client
/// on 2.4 GHz that misses the PER requirement to 5 GHz.
pub struct WifiInterferencePlanner {
    per_threshold: f64,
    asked: BTreeMap<String, u64>,
    outcomes: Vec<Value>,
}

impl WifiInterferencePlanner {
    pub fn new(per_threshold: f64) -> Self {
        WifiInterferencePlanner {
            per_threshold,
            asked: BTreeMap::new(),
            outcomes: Vec::new(),
        }
    }

    pub fn dispatch_count(&self) -> usize {
        self.asked.len()
    }
}

impl Planner for WifiInterferencePlanner {
    fn name(&self) -> &str {
        "wifi-interference"
    }

    fn plan(&mut self, ctx: &PlanContext<'_>) -> Vec<PlannedSubtask> {
        for o in ctx.outcomes {
            self.outcomes.push(json!({ "round": o.round, "device_id": o.device_id, "text": o.text, "status": o.status }));
        }
        let sensed = ctx
            .snapshots
            .values()
            .any(|r| r.attributes.get("interference_detected") == Some(&json!(true)));
        if !sensed {
            return Vec::new();
        }
        let mut out = Vec::new();
        for (id, r) in ctx.snapshots {
            let a = &r.attributes;
            let switchable = a.get("band_switchable") == Some(&json!(true));
            let on_24 = a.get("band") == Some(&json!("band_2_4"));
            let bad = a.get("per").and_then(Value::as_f64).is_some_and(|p| p > self.per_threshold);
            if switchable && on_24 && bad && !self.asked.contains_key(id) && ctx.can_dispatch(id) {
                self.asked.insert(id.clone(), ctx.round);
                out.push(PlannedSubtask::new(id.clone(), BAND_SWITCH_TEXT));
            }
        }
        out
    }

    fn summary(&self) -> Value {
        json!({ "switch_requests": self.asked, "outcomes": self.outcomes })
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::agent::DeviceReport;
    use crate::coordinator::{Instruction, Outstanding, SubtaskOutcome};
    use crate::device::DeviceStatus;

    fn report(id: &str, attrs: Value) -> DeviceReport {
        DeviceReport {
            device_id: id.into(),
            status: DeviceStatus::Ok,
            attributes: serde_json::from_value(attrs).unwrap(),
            subtask_status: None,
            finished: vec![],
            profile_update: None,
        }
    }

    struct Ctx {
        instructions: Vec<Instruction>,
        snapshots: BTreeMap<String, DeviceReport>,
        outcomes: Vec<SubtaskOutcome>,
        outstanding: BTreeMap<String, Outstanding>,
    }

    impl Ctx {
        fn new() -> Self {
            Ctx {
                instructions: vec![],
                snapshots: BTreeMap::new(),
                outcomes: vec![],
                outstanding: BTreeMap::new(),
            }
        }
        fn run(&self, p: &mut dyn Planner, round: u64) -> Vec<PlannedSubtask> {
            p.plan(&PlanContext {
                round,
                now_ms: 0,
                instructions: &self.instructions,
                reports: &self.snapshots,
                snapshots: &self.snapshots,
                outcomes: &self.outcomes,
                outstanding: &self.outstanding,
            })
        }
    }

    #[test]
    fn warehouse_first_and_second_subtasks() {
        let mut p = WarehousePlanner::new(3);
        let mut c = Ctx::new();
        assert!(c.run(&mut p, 1).is_empty());
        c.instructions.push(Instruction {
            instruction_id: 1,
            text: "Please check if there are vacant positions on the shelves.".into(),
            received_ts: 0,
        });
        let first = c.run(&mut p, 2);
        assert_eq!(
            first,
            vec![
                PlannedSubtask::new("robot-1", "Move to shelf one."),
                PlannedSubtask::new("robot-2", "Move to shelf two."),
                PlannedSubtask::new("robot-3", "Move to shelf three."),
            ]
        );
        c.instructions.clear();
        c.outcomes.push(SubtaskOutcome {
            device_id: "robot-2".into(),
            subtask_id: 2,
            text: "Move to shelf two.".into(),
            status: CompletionStatus::Completed,
            round: 3,
        });
        assert_eq!(c.run(&mut p, 3), vec![PlannedSubtask::new("robot-2", "Identify the vacancy in shelf two.")]);
    }

    #[test]
    fn warehouse_retries_once_then_fails() {
        let mut p = WarehousePlanner::new(1);
        let mut c = Ctx::new();
        c.instructions.push(Instruction { instruction_id: 1, text: "find vacant spots".into(), received_ts: 0 });
        c.run(&mut p, 1);
        c.instructions.clear();
        let fail = SubtaskOutcome {
            device_id: "robot-1".into(),
            subtask_id: 1,
            text: "Move to shelf one.".into(),
            status: CompletionStatus::NotExecutable,
            round: 2,
        };
        c.outcomes = vec![fail.clone()];
        assert_eq!(c.run(&mut p, 2).len(), 1);
        assert_eq!(c.run(&mut p, 3).len(), 0);
        c.outcomes = vec![fail];
        c.run(&mut p, 4);
        assert!(p.is_done());
        assert_eq!(p.failed(), vec!["robot-1".to_string()]);
    }

    #[test]
    fn qos_steps_down_when_late() {
        let mut p = WifiQosPlanner::new(16.0, CW_SCHEDULE.to_vec());
        let mut c = Ctx::new();
        c.snapshots.insert(
            "client-1".into(),
            report("client-1", json!({"cw_configurable": true, "upload_time_s": 40.0, "log_cw_min": 10, "log_cw_max": 15})),
        );
        c.snapshots.insert("client-2".into(), report("client-2", json!({"upload_time_s": 4.0})));
        let out = c.run(&mut p, 1);
        assert_eq!(out, vec![PlannedSubtask::new("client-1", cw_subtask((8, 12)))]);
        assert_eq!(
            cw_subtask((8, 12)),
            "Set the contention window to log CW min eight and log CW max twelve."
        );
    }

    #[test]
    fn qos_rolls_back_when_other_client_suffers() {
        let mut p = WifiQosPlanner::new(16.0, CW_SCHEDULE.to_vec());
        let mut c = Ctx::new();
        c.snapshots.insert(
            "client-1".into(),
            report("client-1", json!({"cw_configurable": true, "upload_time_s": 7.0, "log_cw_min": 2, "log_cw_max": 4})),
        );
        c.snapshots.insert("client-2".into(), report("client-2", json!({"upload_time_s": 30.0})));
        assert_eq!(c.run(&mut p, 1), vec![PlannedSubtask::new("client-1", cw_subtask((4, 6)))]);
        assert_eq!(p.rollbacks(), 1);
    }

    #[test]
    fn interference_quiet_without_sensing() {
        let mut p = WifiInterferencePlanner::new(0.2);
        let mut c = Ctx::new();
        c.snapshots.insert(
            "client-2".into(),
            report("client-2", json!({"band_switchable": true, "band": "band_2_4", "per": 0.3})),
        );
        assert!(c.run(&mut p, 1).is_empty());
        c.snapshots.insert("client-1".into(), report("client-1", json!({"interference_detected": true})));
        assert_eq!(c.run(&mut p, 2), vec![PlannedSubtask::new("client-2", BAND_SWITCH_TEXT)]);
        assert!(c.run(&mut p, 3).is_empty());
    }
}
