//! The device agent: answers polls, accepts subtasks into a single-slot
//! queue, and turns each subtask into one device call through retrieval,
//! argument extraction and the five-state FSM.

use std::collections::{BTreeMap, VecDeque};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use parking_lot::{Condvar, Mutex};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::codegen::{
    compose_call, extract_arguments, render_program, ArgumentExtractor, CodeTemplate, ReferenceExtractor,
    SubtaskSpec,
};
use crate::corpus::{apply_profile_update, chunk_profile, CorpusError, DeviceApiProfile};
use crate::device::{Device, DeviceStatus};
use crate::fsm::{CompletionStatus, ExecutionRecord, FsmExecutor, FsmHooks, FsmTimeouts};
use crate::m2m_log::M2mLog;
use crate::rag::{build_index, match_subtask, ApiIndex, EmbeddingProvider, HashingProvider, RagError, DEFAULT_HASH_DIM};
use crate::remote::{JsonEndpoint, RemoteEmbeddingProvider, RemoteExtractor};

pub const DEFAULT_HISTORY: usize = 1024;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("subtask {subtask_id} addressed to `{addressed}`, this agent is `{agent}`")]
    Addressing {
        subtask_id: u64,
        addressed: String,
        agent: String,
    },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Rag(#[from] RagError),
}

/// Holds at most one pending subtask. Storing a new one drops the occupant.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SingleSlotQueue {
    slot: Option<SubtaskSpec>,
    dropped_count: u64,
}

impl SingleSlotQueue {
    /// Returns the superseded occupant, if any.
    pub fn store(&mut self, subtask: SubtaskSpec) -> Option<SubtaskSpec> {
        let old = self.slot.replace(subtask);
        if old.is_some() {
            self.dropped_count += 1;
        }
        old
    }

    pub fn take(&mut self) -> Option<SubtaskSpec> {
        self.slot.take()
    }

    pub fn peek(&self) -> Option<&SubtaskSpec> {
        self.slot.as_ref()
    }

    pub fn len(&self) -> usize {
        usize::from(self.slot.is_some())
    }

    pub fn is_empty(&self) -> bool {
        self.slot.is_none()
    }

    pub fn dropped_count(&self) -> u64 {
        self.dropped_count
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceReport {
    pub device_id: String,
    pub status: DeviceStatus,
    #[serde(default)]
    pub attributes: BTreeMap<String, Value>,
    /// Status of the most recently assigned subtask.
    #[serde(default)]
    pub subtask_status: Option<(u64, CompletionStatus)>,
    /// Terminal statuses reached since the previous report, oldest first.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub finished: Vec<(u64, CompletionStatus)>,
    #[serde(default)]
    pub profile_update: Option<DeviceApiProfile>,
}

impl DeviceReport {
    /// Status of `subtask_id` as far as this report can tell.
    pub fn status_of(&self, subtask_id: u64) -> Option<CompletionStatus> {
        self.finished
            .iter()
            .rev()
            .find(|(id, _)| *id == subtask_id)
            .map(|(_, s)| *s)
            .or_else(|| self.subtask_status.filter(|(id, _)| *id == subtask_id).map(|(_, s)| s))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProviderConfig {
    Hashing { dim: usize },
    Remote { url: String, provider_id: String, dim: usize, timeout_ms: u64 },
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig::Hashing { dim: DEFAULT_HASH_DIM }
    }
}

impl ProviderConfig {
    pub fn build(&self) -> Arc<dyn EmbeddingProvider> {
        match self {
            ProviderConfig::Hashing { dim } => Arc::new(HashingProvider::new(*dim)),
            ProviderConfig::Remote { url, provider_id, dim, timeout_ms } => Arc::new(RemoteEmbeddingProvider::new(
                JsonEndpoint::new(url.clone(), Duration::from_millis(*timeout_ms)),
                provider_id.clone(),
                *dim,
            )),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExtractorConfig {
    #[default]
    Reference,
    Remote { url: String, timeout_ms: u64 },
}

impl ExtractorConfig {
    pub fn build(&self) -> Arc<dyn ArgumentExtractor> {
        match self {
            ExtractorConfig::Reference => Arc::new(ReferenceExtractor),
            ExtractorConfig::Remote { url, timeout_ms } => Arc::new(RemoteExtractor::new(JsonEndpoint::new(
                url.clone(),
                Duration::from_millis(*timeout_ms),
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub device_id: String,
    #[serde(default)]
    pub provider: ProviderConfig,
    #[serde(default)]
    pub extractor: ExtractorConfig,
    #[serde(default)]
    pub timeouts: FsmTimeouts,
    /// Coordinator address for the TCP transport.
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default = "default_history")]
    pub history_capacity: usize,
}

fn default_history() -> usize {
    DEFAULT_HISTORY
}

impl AgentConfig {
    pub fn new(device_id: impl Into<String>) -> Self {
        AgentConfig {
            device_id: device_id.into(),
            provider: ProviderConfig::default(),
            extractor: ExtractorConfig::default(),
            timeouts: FsmTimeouts::default(),
            endpoint: None,
            history_capacity: DEFAULT_HISTORY,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ack {
    pub subtask_id: u64,
    pub superseded: Option<u64>,
}

struct State {
    profile: DeviceApiProfile,
    index: Arc<ApiIndex>,
    hooks: FsmHooks,
    queue: SingleSlotQueue,
    executing: Option<u64>,
    latest: Option<(u64, CompletionStatus)>,
    unreported: Vec<(u64, CompletionStatus)>,
    pending_profile: bool,
    addressing_fault: bool,
    history: VecDeque<ExecutionRecord>,
}

impl State {
    fn set_status(&mut self, id: u64, status: CompletionStatus) {
        if self.latest.is_none_or(|(latest, _)| latest == id) {
            self.latest = Some((id, status));
        }
        if status.is_terminal() {
            self.unreported.push((id, status));
        }
    }
}

struct Shared {
    device_id: String,
    device: Arc<dyn Device>,
    provider: Arc<dyn EmbeddingProvider>,
    extractor: Arc<dyn ArgumentExtractor>,
    template: CodeTemplate,
    executor: FsmExecutor,
    log: M2mLog,
    history_capacity: usize,
    state: Mutex<State>,
    work: Condvar,
    stop: AtomicBool,
}

/// A device agent. Cheap to clone; clones share state.
#[derive(Clone)]
pub struct Agent {
    shared: Arc<Shared>,
}

impl Agent {
    pub fn new(
        config: &AgentConfig,
        profile: DeviceApiProfile,
        device: Arc<dyn Device>,
        log: M2mLog,
    ) -> Result<Self, AgentError> {
        Agent::with_parts(config, profile, device, config.provider.build(), config.extractor.build(), log)
    }

    pub fn with_parts(
        config: &AgentConfig,
        profile: DeviceApiProfile,
        device: Arc<dyn Device>,
        provider: Arc<dyn EmbeddingProvider>,
        extractor: Arc<dyn ArgumentExtractor>,
        log: M2mLog,
    ) -> Result<Self, AgentError> {
        for id in [&profile.device_id, &device.device_id().to_string()] {
            if *id != config.device_id {
                return Err(CorpusError::IdentityMismatch {
                    current: config.device_id.clone(),
                    update: id.clone(),
                }
                .into());
            }
        }
        let index = Arc::new(build_index(&chunk_profile(&profile), provider.as_ref())?);
        let executor = FsmExecutor::new(device.clone(), config.timeouts, log.clone());
        let state = State {
            hooks: FsmHooks::from_profile(&profile),
            profile,
            index,
            queue: SingleSlotQueue::default(),
            executing: None,
            latest: None,
            unreported: Vec::new(),
            pending_profile: false,
            addressing_fault: false,
            history: VecDeque::new(),
        };
        Ok(Agent {
            shared: Arc::new(Shared {
                device_id: config.device_id.clone(),
                device,
                provider,
                extractor,
                template: CodeTemplate::default(),
                executor,
                log,
                history_capacity: config.history_capacity.max(1),
                state: Mutex::new(state),
                work: Condvar::new(),
                stop: AtomicBool::new(false),
            }),
        })
    }

    pub fn device_id(&self) -> &str {
        &self.shared.device_id
    }

    pub fn log(&self) -> &M2mLog {
        &self.shared.log
    }

    pub fn profile(&self) -> DeviceApiProfile {
        self.shared.state.lock().profile.clone()
    }

    pub fn dropped_count(&self) -> u64 {
        self.shared.state.lock().queue.dropped_count()
    }

    pub fn queue_len(&self) -> usize {
        self.shared.state.lock().queue.len()
    }

    pub fn executing(&self) -> Option<u64> {
        self.shared.state.lock().executing
    }

    pub fn history(&self) -> Vec<ExecutionRecord> {
        self.shared.state.lock().history.iter().cloned().collect()
    }

    /// Never blocks on the executor: only snapshots are read.
    pub fn handle_poll(&self, round: u64) -> DeviceReport {
        let attributes = self.shared.device.attributes();
        let device_status = self.shared.device.status();
        let report = {
            let mut st = self.shared.state.lock();
            let status = if st.addressing_fault || device_status == DeviceStatus::Fault {
                DeviceStatus::Fault
            } else {
                DeviceStatus::Ok
            };
            st.addressing_fault = false;
            let profile_update = if st.pending_profile {
                st.pending_profile = false;
                Some(st.profile.clone())
            } else {
                None
            };
            DeviceReport {
                device_id: self.shared.device_id.clone(),
                status,
                attributes,
                subtask_status: st.latest,
                finished: std::mem::take(&mut st.unreported),
                profile_update,
            }
        };
        let what = match report.subtask_status {
            Some((id, s)) => format!("subtask {id} is {}", status_words(s)),
            None => "no subtask yet".to_string(),
        };
        self.shared.log.record(format!(
            "{} reports for round {round}: status {:?}, {what}",
            self.shared.device_id, report.status
        ));
        report
    }

    /// Store a subtask in the slot, superseding any pending one.
    pub fn handle_assign(&self, subtask: SubtaskSpec) -> Result<Ack, AgentError> {
        if subtask.device_id != self.shared.device_id {
            self.shared.state.lock().addressing_fault = true;
            self.shared.log.record(format!(
                "{} rejects subtask {} addressed to {}",
                self.shared.device_id, subtask.subtask_id, subtask.device_id
            ));
            return Err(AgentError::Addressing {
                subtask_id: subtask.subtask_id,
                addressed: subtask.device_id,
                agent: self.shared.device_id.clone(),
            });
        }
        let id = subtask.subtask_id;
        let text = subtask.text.clone();
        let superseded = {
            let mut st = self.shared.state.lock();
            let old = st.queue.store(subtask).map(|s| s.subtask_id);
            if let Some(old) = old {
                st.set_status(old, CompletionStatus::Superseded);
            }
            st.latest = Some((id, CompletionStatus::None));
            old
        };
        self.shared.work.notify_all();
        self.shared.log.record(match superseded {
            Some(old) => format!(
                "{} received subtask {id} \"{text}\", replacing pending subtask {old}",
                self.shared.device_id
            ),
            None => format!("{} received subtask {id} \"{text}\"", self.shared.device_id),
        });
        Ok(Ack { subtask_id: id, superseded })
    }

    /// Adopt a newer profile, rebuild the index, and announce it in the next report.
    pub fn update_profile(&self, update: DeviceApiProfile) -> Result<bool, AgentError> {
        let current = self.profile();
        let next = apply_profile_update(&current, &update)?;
        if next.version == current.version {
            return Ok(false);
        }
        let index = Arc::new(build_index(&chunk_profile(&next), self.shared.provider.as_ref())?);
        let mut st = self.shared.state.lock();
        st.hooks = FsmHooks::from_profile(&next);
        st.profile = next;
        st.index = index;
        st.pending_profile = true;
        Ok(true)
    }

    /// Pop and run the pending subtask, if any and if nothing is executing.
    pub fn interpret_loop_step(&self) -> Option<ExecutionRecord> {
        let (subtask, index, hooks) = {
            let mut st = self.shared.state.lock();
            if st.executing.is_some() {
                return None;
            }
            let subtask = st.queue.take()?;
            st.executing = Some(subtask.subtask_id);
            st.set_status(subtask.subtask_id, CompletionStatus::Ongoing);
            (subtask, st.index.clone(), st.hooks.clone())
        };
        let record = self.interpret(&subtask, &index, &hooks);
        {
            let mut st = self.shared.state.lock();
            st.executing = None;
            st.set_status(record.subtask_id, record.final_status);
            if st.history.len() == self.shared.history_capacity {
                st.history.pop_front();
            }
            st.history.push_back(record.clone());
        }
        self.shared.work.notify_all();
        Some(record)
    }

    fn interpret(&self, subtask: &SubtaskSpec, index: &ApiIndex, hooks: &FsmHooks) -> ExecutionRecord {
        let s = &self.shared;
        let plan = match_subtask(&subtask.text, index, s.provider.as_ref())
            .map_err(|e| e.to_string())
            .and_then(|m| {
                s.log.record(format!(
                    "{} matched \"{}\" to {} (score {:.3})",
                    s.device_id, subtask.text, m.best.name, m.score
                ));
                let args = extract_arguments(&subtask.text, &m.best, s.extractor.as_ref()).map_err(|e| e.to_string())?;
                let plan = compose_call(&m.best, &args).map_err(|e| e.to_string())?;
                render_program(&s.template, &plan).map_err(|e| e.to_string())?;
                Ok(plan)
            });
        match plan {
            Ok(plan) => s.executor.run(subtask.subtask_id, &plan, hooks),
            Err(reason) => {
                s.log.record(format!(
                    "{} cannot interpret subtask {}: {reason}",
                    s.device_id, subtask.subtask_id
                ));
                ExecutionRecord::not_started(subtask.subtask_id, &s.device_id, reason)
            }
        }
    }

    /// Block until a subtask is pending, or `timeout` passes.
    fn wait_for_work(&self, timeout: Duration) {
        let mut st = self.shared.state.lock();
        if st.queue.is_empty() && !self.shared.stop.load(Ordering::SeqCst) {
            self.shared.work.wait_for(&mut st, timeout);
        }
    }

    /// Run the interpreter on a background thread until the handle is dropped or stopped.
    pub fn spawn_runner(&self) -> AgentRunner {
        self.shared.stop.store(false, Ordering::SeqCst);
        let agent = self.clone();
        let handle = thread::Builder::new()
            .name(format!("agent-{}", self.device_id()))
            .spawn(move || {
                while !agent.shared.stop.load(Ordering::SeqCst) {
                    if agent.interpret_loop_step().is_none() {
                        agent.wait_for_work(Duration::from_millis(50));
                    }
                }
            })
            .expect("spawn agent runner");
        AgentRunner {
            agent: self.clone(),
            handle: Some(handle),
        }
    }

    /// Wait until nothing is pending or executing.
    pub fn wait_idle(&self, timeout: Duration) -> bool {
        let deadline = std::time::Instant::now() + timeout;
        let mut st = self.shared.state.lock();
        while !st.queue.is_empty() || st.executing.is_some() {
            if self.shared.work.wait_until(&mut st, deadline).timed_out() {
                return st.queue.is_empty() && st.executing.is_none();
            }
        }
        true
    }
}

pub struct AgentRunner {
    agent: Agent,
    handle: Option<JoinHandle<()>>,
}

impl AgentRunner {
    pub fn stop(mut self) {
        self.shutdown();
    }

    fn shutdown(&mut self) {
        self.agent.shared.stop.store(true, Ordering::SeqCst);
        self.agent.shared.work.notify_all();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

impl Drop for AgentRunner {
    fn drop(&mut self) {
        self.shutdown();
    }
}

pub fn status_words(s: CompletionStatus) -> &'static str {
    match s {
        CompletionStatus::None => "waiting",
        CompletionStatus::Ongoing => "ongoing",
        CompletionStatus::Completed => "completed",
        CompletionStatus::NotExecutable => "not executable",
        CompletionStatus::Superseded => "superseded",
    }
}

#[cfg(test)]
mod tests {
    use std::sync::atomic::AtomicUsize;
    use std::time::Instant;

    use proptest::prelude::*;

    use super::*;
    use crate::codegen::ArgValue;
    use crate::corpus::shipped;
    use crate::device::DeviceError;

    struct Robot {
        gate: Mutex<bool>,
        open: Condvar,
        calls: AtomicUsize,
    }

    impl Robot {
        fn new(open: bool) -> Arc<Self> {
            Arc::new(Robot {
                gate: Mutex::new(open),
                open: Condvar::new(),
                calls: AtomicUsize::new(0),
            })
        }
        fn release(&self) {
            *self.gate.lock() = true;
            self.open.notify_all();
        }
    }

    impl Device for Robot {
        fn device_id(&self) -> &str {
            "robot-1"
        }
        fn call(&self, function: &str, args: &[ArgValue]) -> Result<Value, DeviceError> {
            let mut g = self.gate.lock();
            while !*g {
                self.open.wait(&mut g);
            }
            self.calls.fetch_add(1, Ordering::SeqCst);
            Ok(Value::String(format!("{function}{args:?}")))
        }
    }

    fn agent(device: Arc<Robot>) -> Agent {
        Agent::new(&AgentConfig::new("robot-1"), shipped::robot(), device, M2mLog::default()).unwrap()
    }

    fn spec(id: u64, text: &str) -> SubtaskSpec {
        SubtaskSpec {
            subtask_id: id,
            device_id: "robot-1".into(),
            text: text.into(),
            issued_round: 0,
        }
    }

    #[test]
    fn idle_report() {
        let a = agent(Robot::new(true));
        let r = a.handle_poll(1);
        assert_eq!(r.status, DeviceStatus::Ok);
        assert_eq!(r.subtask_status, None);
        assert_eq!(r.profile_update, None);
    }

    #[test]
    fn move_to_shelf_one_completes() {
        let a = agent(Robot::new(true));
        a.handle_assign(spec(1, "Move to shelf one")).unwrap();
        let rec = a.interpret_loop_step().unwrap();
        assert_eq!(rec.final_status, CompletionStatus::Completed);
        assert_eq!(rec.rendered_call.as_deref(), Some("move_to_shelf(1)"));
        assert_eq!(a.handle_poll(2).subtask_status, Some((1, CompletionStatus::Completed)));
    }

    #[test]
    fn gibberish_is_not_executable() {
        let a = agent(Robot::new(true));
        a.handle_assign(spec(1, "qwzx flrm")).unwrap();
        let rec = a.interpret_loop_step().unwrap();
        assert_eq!(rec.final_status, CompletionStatus::NotExecutable);
        assert!(rec.state_log.is_empty());
        assert!(a.interpret_loop_step().is_none());
    }

    #[test]
    fn supersede_pending() {
        let a = agent(Robot::new(true));
        a.handle_assign(spec(1, "Move to shelf one")).unwrap();
        let ack = a.handle_assign(spec(2, "Move to shelf two")).unwrap();
        assert_eq!(ack.superseded, Some(1));
        assert_eq!(a.dropped_count(), 1);
        let r = a.handle_poll(1);
        assert_eq!(r.status_of(1), Some(CompletionStatus::Superseded));
        assert_eq!(r.subtask_status, Some((2, CompletionStatus::None)));
        assert_eq!(a.interpret_loop_step().unwrap().rendered_call.as_deref(), Some("move_to_shelf(2)"));
    }

    #[test]
    fn running_subtask_is_not_cancelled_and_poll_stays_live() {
        let robot = Robot::new(false);
        let a = agent(robot.clone());
        let runner = a.spawn_runner();
        a.handle_assign(spec(1, "Move to shelf one")).unwrap();
        let t = Instant::now();
        while a.executing() != Some(1) {
            assert!(t.elapsed() < Duration::from_secs(5));
            thread::sleep(Duration::from_millis(1));
        }
        // The device is stalled mid-call; polls still answer promptly.
        let t = Instant::now();
        let r = a.handle_poll(1);
        assert!(t.elapsed() < Duration::from_millis(100));
        assert_eq!(r.subtask_status, Some((1, CompletionStatus::Ongoing)));

        let ack = a.handle_assign(spec(2, "Move to shelf two")).unwrap();
        assert_eq!(ack.superseded, None);
        robot.release();
        assert!(a.wait_idle(Duration::from_secs(5)));
        runner.stop();
        let ids: Vec<u64> = a.history().iter().map(|r| r.subtask_id).collect();
        assert_eq!(ids, vec![1, 2]);
        assert!(a.history().iter().all(|r| r.final_status == CompletionStatus::Completed));
        assert_eq!(robot.calls.load(Ordering::SeqCst), 2);
    }

    #[test]
    fn misaddressed_subtask_faults_one_report() {
        let a = agent(Robot::new(true));
        let mut s = spec(1, "Move to shelf one");
        s.device_id = "robot-2".into();
        assert!(matches!(a.handle_assign(s), Err(AgentError::Addressing { .. })));
        assert_eq!(a.queue_len(), 0);
        assert_eq!(a.handle_poll(1).status, DeviceStatus::Fault);
        assert_eq!(a.handle_poll(2).status, DeviceStatus::Ok);
    }

    #[test]
    fn profile_update_sent_once() {
        let a = agent(Robot::new(true));
        let mut p = shipped::robot();
        p.version += 1;
        p.functions.retain(|f| f.name != "capture_image");
        assert!(a.update_profile(p.clone()).unwrap());
        assert_eq!(a.handle_poll(1).profile_update, Some(p.clone()));
        assert_eq!(a.handle_poll(2).profile_update, None);
        // Same version again is ignored.
        assert!(!a.update_profile(p).unwrap());
        assert_eq!(a.handle_poll(3).profile_update, None);
    }

    #[test]
    fn history_is_bounded() {
        let mut cfg = AgentConfig::new("robot-1");
        cfg.history_capacity = 3;
        let a = Agent::new(&cfg, shipped::robot(), Robot::new(true), M2mLog::default()).unwrap();
        for id in 1..=5 {
            a.handle_assign(spec(id, "Report your current status.")).unwrap();
            a.interpret_loop_step().unwrap();
        }
        let ids: Vec<u64> = a.history().iter().map(|r| r.subtask_id).collect();
        assert_eq!(ids, vec![3, 4, 5]);
    }

    #[derive(Debug, Clone)]
    enum Op {
        Assign,
        Step,
        Poll,
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        // Every assigned subtask reaches exactly one terminal status, the
        // slot never holds more than one subtask, and drops are conserved.
        #[test]
        fn interleavings_conserve_subtasks(ops in proptest::collection::vec(
            prop_oneof![Just(Op::Assign), Just(Op::Step), Just(Op::Poll)], 1..40)
        ) {
            let a = agent(Robot::new(true));
            let mut next = 1;
            let mut terminal: BTreeMap<u64, Vec<CompletionStatus>> = BTreeMap::new();
            let mut supersedes = 0;
            let collect = |r: DeviceReport, terminal: &mut BTreeMap<u64, Vec<CompletionStatus>>| {
                for (id, s) in r.finished {
                    terminal.entry(id).or_default().push(s);
                }
            };
            for op in ops {
                match op {
                    Op::Assign => {
                        let text = if next % 3 == 0 { "qwzx flrm" } else { "Move to shelf one" };
                        if a.handle_assign(spec(next, text)).unwrap().superseded.is_some() {
                            supersedes += 1;
                        }
                        next += 1;
                    }
                    Op::Step => { a.interpret_loop_step(); }
                    Op::Poll => collect(a.handle_poll(0), &mut terminal),
                }
                prop_assert!(a.queue_len() <= 1);
            }
            while a.interpret_loop_step().is_some() {}
            collect(a.handle_poll(0), &mut terminal);
            prop_assert_eq!(a.dropped_count(), supersedes);
            prop_assert_eq!(terminal.len() as u64, next - 1);
            for statuses in terminal.values() {
                prop_assert_eq!(statuses.len(), 1);
                prop_assert!(statuses[0].is_terminal());
            }
            let superseded = terminal.values().filter(|s| s[0] == CompletionStatus::Superseded).count() as u64;
            prop_assert_eq!(superseded, supersedes);
        }
    }
}
