//! The coordinator: takes instructions, polls agents every period, waits for
//! reports until all arrive or the deadline passes, asks a planner for new
//! subtasks, and sends them out.

mod baseline;
mod planners;
mod remote_planner;

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{status_words, DeviceReport};
use crate::codegen::SubtaskSpec;
use crate::fsm::CompletionStatus;
use crate::m2m_log::M2mLog;
use crate::transport::{broadcast_poll, CoordinatorLink, WireMessage};

pub use baseline::{run_centralized_baseline, write_metrics_csv, BaselineOutcome, MetricsRow, StubLlm};
pub use planners::{
    cw_subtask, robot_id, NullPlanner, WarehousePlanner, WifiInterferencePlanner, WifiQosPlanner, BAND_SWITCH_TEXT,
    CW_SCHEDULE,
};
pub use remote_planner::{RemotePlanner, SamplingConfig};

pub const DEFAULT_REISSUE_ROUNDS: u64 = 3;

#[derive(Debug, Error, PartialEq)]
pub enum CoordinatorError {
    #[error("instruction text is empty")]
    EmptyInstruction,
    #[error("report_timeout ({timeout:?}) must be shorter than poll_period ({period:?})")]
    Timing { timeout: Duration, period: Duration },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instruction {
    pub instruction_id: u64,
    pub text: String,
    pub received_ts: u64,
}

/// FIFO of instructions waiting for the next round.
#[derive(Debug, Default)]
pub struct InstructionQueue {
    inner: Mutex<(u64, VecDeque<Instruction>)>,
}

impl InstructionQueue {
    pub fn submit(&self, text: &str, now_ms: u64) -> Result<u64, CoordinatorError> {
        if text.trim().is_empty() {
            return Err(CoordinatorError::EmptyInstruction);
        }
        let mut q = self.inner.lock();
        q.0 += 1;
        let instruction_id = q.0;
        q.1.push_back(Instruction {
            instruction_id,
            text: text.trim().to_string(),
            received_ts: now_ms,
        });
        Ok(instruction_id)
    }

    pub fn drain(&self) -> Vec<Instruction> {
        self.inner.lock().1.drain(..).collect()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Distributed,
    CentralizedBaseline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinatorConfig {
    #[serde(with = "crate::fsm::millis")]
    pub poll_period: Duration,
    #[serde(with = "crate::fsm::millis")]
    pub report_timeout: Duration,
    pub mode: Mode,
    /// Rounds without any word on an outstanding subtask before it is re-issued.
    pub reissue_after_rounds: u64,
}

impl Default for CoordinatorConfig {
    fn default() -> Self {
        CoordinatorConfig {
            poll_period: Duration::from_secs(1),
            report_timeout: Duration::from_millis(500),
            mode: Mode::Distributed,
            reissue_after_rounds: DEFAULT_REISSUE_ROUNDS,
        }
    }
}

impl CoordinatorConfig {
    pub fn validate(&self) -> Result<(), CoordinatorError> {
        if self.report_timeout >= self.poll_period {
            return Err(CoordinatorError::Timing {
                timeout: self.report_timeout,
                period: self.poll_period,
            });
        }
        Ok(())
    }

    pub fn with_period(poll_period: Duration, report_timeout: Duration) -> Self {
        CoordinatorConfig {
            poll_period,
            report_timeout,
            ..Self::default()
        }
    }
}

/// One subtask the planner wants sent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannedSubtask {
    pub device_id: String,
    pub text: String,
}

impl PlannedSubtask {
    pub fn new(device_id: impl Into<String>, text: impl Into<String>) -> Self {
        PlannedSubtask {
            device_id: device_id.into(),
            text: text.into(),
        }
    }
}

/// A dispatched subtask that has not reached a terminal status.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outstanding {
    pub subtask_id: u64,
    pub text: String,
    pub issued_round: u64,
    pub status: CompletionStatus,
    /// Last round in which any report mentioned this subtask.
    pub heard_round: u64,
}

/// A terminal status observed for a subtask this coordinator sent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubtaskOutcome {
    pub device_id: String,
    pub subtask_id: u64,
    pub text: String,
    pub status: CompletionStatus,
    pub round: u64,
}

/// What a planner sees each round.
pub struct PlanContext<'a> {
    pub round: u64,
    pub now_ms: u64,
    /// Instructions that arrived since the previous round, in arrival order.
    pub instructions: &'a [Instruction],
    /// Reports received within this round's deadline.
    pub reports: &'a BTreeMap<String, DeviceReport>,
    /// Latest report per device, including ones that arrived late.
    pub snapshots: &'a BTreeMap<String, DeviceReport>,
    /// Terminal outcomes first observed this round.
    pub outcomes: &'a [SubtaskOutcome],
    pub outstanding: &'a BTreeMap<String, Outstanding>,
}

impl PlanContext<'_> {
    /// True when the device has nothing outstanding.
    pub fn can_dispatch(&self, device_id: &str) -> bool {
        !self.outstanding.contains_key(device_id)
    }

    pub fn attribute(&self, device_id: &str, key: &str) -> Option<&serde_json::Value> {
        self.snapshots.get(device_id)?.attributes.get(key)
    }
}

pub trait Planner: Send {
    fn name(&self) -> &str;

    /// Subtasks to send now. Devices with outstanding work must be skipped.
    fn plan(&mut self, ctx: &PlanContext<'_>) -> Vec<PlannedSubtask>;

    /// The plan has nothing left to do.
    fn is_done(&self) -> bool {
        false
    }

    /// Planner-specific results for scenario output.
    fn summary(&self) -> serde_json::Value {
        serde_json::Value::Null
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PollRound {
    pub round: u64,
    pub polled: BTreeSet<String>,
    pub received: BTreeMap<String, DeviceReport>,
    pub failed_sends: Vec<String>,
    pub deadline_ms: u64,
    pub started_ms: u64,
    pub finished_ms: u64,
    /// Real time spent in the round, independent of the clock in use.
    pub elapsed_us: u64,
    pub dispatched: Vec<SubtaskSpec>,
    pub outcomes: Vec<SubtaskOutcome>,
    pub late_reports: usize,
}

pub struct Coordinator {
    config: CoordinatorConfig,
    link: Arc<dyn CoordinatorLink>,
    planner: Box<dyn Planner>,
    log: M2mLog,
    instructions: Arc<InstructionQueue>,
    round: u64,
    next_correlation: u64,
    next_subtask: u64,
    snapshots: BTreeMap<String, DeviceReport>,
    outstanding: BTreeMap<String, Outstanding>,
    seen_terminal: BTreeSet<u64>,
    injected: Vec<PlannedSubtask>,
    messages: u64,
}

impl Coordinator {
    pub fn new(
        config: CoordinatorConfig,
        link: Arc<dyn CoordinatorLink>,
        planner: Box<dyn Planner>,
        log: M2mLog,
    ) -> Result<Self, CoordinatorError> {
        config.validate()?;
        Ok(Coordinator {
            config,
            link,
            planner,
            log,
            instructions: Arc::default(),
            round: 0,
            next_correlation: 1,
            next_subtask: 1,
            snapshots: BTreeMap::new(),
            outstanding: BTreeMap::new(),
            seen_terminal: BTreeSet::new(),
            injected: Vec::new(),
            messages: 0,
        })
    }

    pub fn config(&self) -> &CoordinatorConfig {
        &self.config
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn log(&self) -> &M2mLog {
        &self.log
    }

    pub fn planner(&self) -> &dyn Planner {
        self.planner.as_ref()
    }

    pub fn snapshots(&self) -> &BTreeMap<String, DeviceReport> {
        &self.snapshots
    }

    pub fn outstanding(&self) -> &BTreeMap<String, Outstanding> {
        &self.outstanding
    }

    /// Number of protocol messages sent or received so far.
    pub fn message_count(&self) -> u64 {
        self.messages
    }

    /// Handle for submitting instructions from another thread.
    pub fn instructions(&self) -> Arc<InstructionQueue> {
        self.instructions.clone()
    }

    pub fn submit_instruction(&self, text: &str) -> Result<u64, CoordinatorError> {
        let id = self.instructions.submit(text, self.log.clock().now_ms())?;
        self.log.record(format!("human -> coordinator: instruction {id} \"{}\"", text.trim()));
        Ok(id)
    }

    /// Queue a subtask outside the planner, sent next round under the same discipline.
    pub fn inject(&mut self, subtask: PlannedSubtask) {
        self.injected.push(subtask);
    }

    fn note_message(&mut self, line: String) {
        self.messages += 1;
        self.log.record(line);
    }

    fn absorb_report(&mut self, device_id: &str, report: &DeviceReport, round: u64, outcomes: &mut Vec<SubtaskOutcome>) {
        let mut mentioned: Vec<(u64, CompletionStatus)> = report.finished.clone();
        mentioned.extend(report.subtask_status);
        for (id, status) in mentioned {
            if let Some(out) = self.outstanding.get_mut(device_id).filter(|o| o.subtask_id == id) {
                out.heard_round = round;
                out.status = status;
            }
            if status.is_terminal() && self.seen_terminal.insert(id) {
                let text = self.outstanding.get(device_id).filter(|o| o.subtask_id == id).map(|o| o.text.clone());
                if self.outstanding.get(device_id).is_some_and(|o| o.subtask_id == id) {
                    self.outstanding.remove(device_id);
                }
                outcomes.push(SubtaskOutcome {
                    device_id: device_id.to_string(),
                    subtask_id: id,
                    text: text.unwrap_or_default(),
                    status,
                    round,
                });
            }
        }
        self.snapshots.insert(device_id.to_string(), report.clone());
    }

    fn handle_inbound(
        &mut self,
        from: String,
        msg: WireMessage,
        current_round: u64,
        received: &mut BTreeMap<String, DeviceReport>,
        outcomes: &mut Vec<SubtaskOutcome>,
        late: &mut usize,
    ) {
        match msg {
            WireMessage::Report { round, payload, .. } => {
                let what = match payload.subtask_status {
                    Some((id, s)) => format!("subtask {id} {}", status_words(s)),
                    None => "idle".to_string(),
                };
                self.note_message(format!("{from} -> coordinator: report for round {round}, {what}"));
                self.absorb_report(&from, &payload, current_round, outcomes);
                if round == current_round && current_round > 0 {
                    received.insert(from, payload);
                } else {
                    *late += 1;
                }
            }
            WireMessage::Ack { payload, .. } => {
                let verdict = if payload.accepted { "accepted" } else { "rejected" };
                self.note_message(format!("{from} -> coordinator: {verdict} subtask {}", payload.subtask_id));
                if !payload.accepted && self.seen_terminal.insert(payload.subtask_id) {
                    if let Some(out) = self.outstanding.remove(&from) {
                        outcomes.push(SubtaskOutcome {
                            device_id: from,
                            subtask_id: payload.subtask_id,
                            text: out.text,
                            status: CompletionStatus::NotExecutable,
                            round: current_round,
                        });
                    }
                }
            }
            WireMessage::Poll { .. } | WireMessage::Assign { .. } => {}
        }
    }

    /// One poll → collect → plan → dispatch cycle. Never blocks past the report deadline.
    pub fn run_round(&mut self) -> PollRound {
        let t0 = Instant::now();
        self.round += 1;
        let round = self.round;
        let clock = self.log.clock().clone();
        let started_ms = clock.now_ms();
        let deadline_ms = started_ms + self.config.report_timeout.as_millis() as u64;
        let deadline = t0 + self.config.report_timeout;

        let mut received = BTreeMap::new();
        let mut outcomes = Vec::new();
        let mut late = 0;

        // Anything already waiting is from earlier rounds.
        while let Ok((from, msg)) = self.link.inbox().try_recv() {
            self.handle_inbound(from, msg, round - 1, &mut BTreeMap::new(), &mut outcomes, &mut late);
        }

        let endpoints = self.link.endpoints();
        let results = broadcast_poll(self.link.as_ref(), &endpoints, round, self.next_correlation);
        self.next_correlation += endpoints.len() as u64;
        let mut polled = BTreeSet::new();
        let mut failed_sends = Vec::new();
        for (id, r) in results {
            match r {
                Ok(()) => {
                    self.note_message(format!("coordinator -> {id}: poll for round {round}"));
                    polled.insert(id);
                }
                Err(e) => {
                    self.log.record(format!("coordinator could not poll {id}: {e}"));
                    failed_sends.push(id);
                }
            }
        }

        while !polled.iter().all(|id| received.contains_key(id)) {
            let now = Instant::now();
            if now >= deadline {
                break;
            }
            match self.link.inbox().recv_timeout(deadline - now) {
                Ok((from, msg)) => self.handle_inbound(from, msg, round, &mut received, &mut outcomes, &mut late),
                Err(_) => break,
            }
        }
        let silent: Vec<&String> = polled.iter().filter(|id| !received.contains_key(*id)).collect();
        if !silent.is_empty() {
            self.log.record(format!(
                "coordinator proceeds with round {round} without reports from {}",
                silent.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ")
            ));
        }

        let instructions = self.instructions.drain();
        let mut planned = {
            let ctx = PlanContext {
                round,
                now_ms: clock.now_ms(),
                instructions: &instructions,
                reports: &received,
                snapshots: &self.snapshots,
                outcomes: &outcomes,
                outstanding: &self.outstanding,
            };
            self.planner.plan(&ctx)
        };
        planned.append(&mut self.injected);

        // Re-issue subtasks nobody has mentioned for R rounds.
        for (device_id, out) in &self.outstanding {
            if round.saturating_sub(out.heard_round) >= self.config.reissue_after_rounds
                && !planned.iter().any(|p| &p.device_id == device_id)
            {
                planned.push(PlannedSubtask::new(device_id.clone(), out.text.clone()));
            }
        }

        let mut dispatched = Vec::new();
        let mut busy = BTreeSet::new();
        for p in planned {
            let stale = self
                .outstanding
                .get(&p.device_id)
                .is_some_and(|o| round.saturating_sub(o.heard_round) >= self.config.reissue_after_rounds);
            if busy.contains(&p.device_id) || (self.outstanding.contains_key(&p.device_id) && !stale) {
                self.log.record(format!(
                    "coordinator holds \"{}\" for {}: previous subtask still outstanding",
                    p.text, p.device_id
                ));
                continue;
            }
            let spec = SubtaskSpec {
                subtask_id: self.next_subtask,
                device_id: p.device_id.clone(),
                text: p.text.clone(),
                issued_round: round,
            };
            self.next_subtask += 1;
            let msg = WireMessage::Assign {
                correlation_id: self.next_correlation,
                payload: spec.clone(),
            };
            self.next_correlation += 1;
            match self.link.send(&p.device_id, &msg) {
                Ok(()) => {
                    let verb = if stale { "re-issues" } else { "assigns" };
                    self.note_message(format!(
                        "coordinator -> {}: {verb} subtask {} \"{}\"",
                        p.device_id, spec.subtask_id, spec.text
                    ));
                    self.outstanding.insert(
                        p.device_id.clone(),
                        Outstanding {
                            subtask_id: spec.subtask_id,
                            text: spec.text.clone(),
                            issued_round: round,
                            status: CompletionStatus::None,
                            heard_round: round,
                        },
                    );
                    busy.insert(p.device_id);
                    dispatched.push(spec);
                }
                Err(e) => self.log.record(format!("coordinator could not assign to {}: {e}", p.device_id)),
            }
        }

        // Acks from synchronous links are already waiting; fold them in now.
        while let Ok((from, msg)) = self.link.inbox().try_recv() {
            self.handle_inbound(from, msg, round, &mut received, &mut outcomes, &mut late);
        }

        PollRound {
            round,
            polled,
            received,
            failed_sends,
            deadline_ms,
            started_ms,
            finished_ms: clock.now_ms(),
            elapsed_us: t0.elapsed().as_micros() as u64,
            dispatched,
            outcomes,
            late_reports: late,
        }
    }

    /// Run rounds on the wall clock, one per poll period, until the planner is
    /// done or `max_rounds` have run.
    pub fn run_realtime(&mut self, max_rounds: u64) -> Vec<PollRound> {
        let mut rounds = Vec::new();
        for _ in 0..max_rounds {
            let start = Instant::now();
            rounds.push(self.run_round());
            if self.planner.is_done() {
                break;
            }
            if let Some(rest) = self.config.poll_period.checked_sub(start.elapsed()) {
                std::thread::sleep(rest);
            }
        }
        rounds
    }
}

#[cfg(test)]
mod tests {
    use std::sync::atomic::{AtomicU64, Ordering};

    use super::*;
    use crate::agent::{Agent, AgentConfig};
    use crate::corpus::shipped;
    use crate::sim::WarehouseWorld;
    use crate::transport::{DirectLink, InProcessHub};

    #[test]
    fn instruction_queue_fifo_and_validation() {
        let q = InstructionQueue::default();
        assert_eq!(q.submit("  ", 0), Err(CoordinatorError::EmptyInstruction));
        let a = q.submit("Please check if there are vacant positions on the shelves.", 1).unwrap();
        let b = q.submit("second", 2).unwrap();
        let drained = q.drain();
        assert_eq!(drained.iter().map(|i| i.instruction_id).collect::<Vec<_>>(), vec![a, b]);
        assert!(q.is_empty());
    }

    #[test]
    fn config_timing_invariant() {
        let bad = CoordinatorConfig::with_period(Duration::from_millis(100), Duration::from_millis(100));
        assert!(bad.validate().is_err());
        assert!(CoordinatorConfig::default().validate().is_ok());
    }

    fn robots(n: u32, world: &Arc<WarehouseWorld>, log: &M2mLog) -> Vec<Agent> {
        (1..=n)
            .map(|k| {
                let id = format!("robot-{k}");
                let device = world.add_robot(&id);
                let profile = shipped::robot_for_warehouse(&id, n);
                Agent::new(&AgentConfig::new(&id), profile, device, log.clone()).unwrap()
            })
            .collect()
    }

    struct Counting(Arc<AtomicU64>);
    impl Planner for Counting {
        fn name(&self) -> &str {
            "counting"
        }
        fn plan(&mut self, _: &PlanContext<'_>) -> Vec<PlannedSubtask> {
            self.0.fetch_add(1, Ordering::SeqCst);
            Vec::new()
        }
    }

    #[test]
    fn silent_agent_round_ends_at_deadline() {
        let log = M2mLog::default();
        let world = WarehouseWorld::new(4, 1);
        let hub = InProcessHub::new();
        for a in robots(3, &world, &log) {
            hub.attach(a);
        }
        hub.attach_silent("robot-4");
        let cfg = CoordinatorConfig::with_period(Duration::from_millis(100), Duration::from_millis(40));
        let calls = Arc::new(AtomicU64::new(0));
        let mut c = Coordinator::new(cfg, hub, Box::new(Counting(calls.clone())), log).unwrap();
        let t = Instant::now();
        let r = c.run_round();
        assert!(t.elapsed() >= Duration::from_millis(40));
        assert!(t.elapsed() < Duration::from_millis(90));
        assert_eq!(r.received.len(), 3);
        assert_eq!(r.polled.len(), 4);
        assert_eq!(calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn dead_endpoint_is_isolated() {
        let log = M2mLog::default();
        let world = WarehouseWorld::new(2, 1);
        let hub = InProcessHub::new();
        for a in robots(2, &world, &log) {
            hub.attach(a);
        }
        hub.kill("robot-2");
        let cfg = CoordinatorConfig::with_period(Duration::from_millis(100), Duration::from_millis(40));
        let mut c = Coordinator::new(cfg, hub, Box::new(NullPlanner), log).unwrap();
        let r = c.run_round();
        assert_eq!(r.failed_sends, vec!["robot-2".to_string()]);
        assert_eq!(r.received.len(), 1);
    }

    struct Always(String);
    impl Planner for Always {
        fn name(&self) -> &str {
            "always"
        }
        fn plan(&mut self, _: &PlanContext<'_>) -> Vec<PlannedSubtask> {
            vec![PlannedSubtask::new("robot-1", self.0.clone())]
        }
    }

    #[test]
    fn discipline_holds_then_reissues_after_silence() {
        let log = M2mLog::default();
        let link = Arc::new(DirectLink::new(Vec::new()).with_silent("robot-1"));
        let mut c = Coordinator::new(
            CoordinatorConfig::default(),
            link,
            Box::new(Always("Move to shelf one.".into())),
            log,
        )
        .unwrap();
        let sent: Vec<usize> = (0..7).map(|_| c.run_round().dispatched.len()).collect();
        // Round 1 sends; rounds 2-3 hold; round 4 re-issues after 3 silent rounds.
        assert_eq!(sent, vec![1, 0, 0, 1, 0, 0, 1]);
    }

    #[test]
    fn message_lines_match_count() {
        let log = M2mLog::default();
        let world = WarehouseWorld::new(2, 1);
        let agents = robots(2, &world, &log);
        let link = Arc::new(DirectLink::new(agents.clone()));
        let mut c = Coordinator::new(
            CoordinatorConfig::default(),
            link,
            Box::new(WarehousePlanner::new(2)),
            log.clone(),
        )
        .unwrap();
        c.submit_instruction("Please check if there are vacant positions on the shelves.").unwrap();
        for _ in 0..6 {
            c.run_round();
            for a in &agents {
                a.interpret_loop_step();
            }
        }
        assert!(c.planner().is_done());
        let arrows = log.lines().iter().filter(|l| l.contains(" -> coordinator:") || l.contains("coordinator -> ")).count();
        // The human instruction line is not a transport message.
        assert_eq!(arrows as u64 - 1, c.message_count());
    }
}
