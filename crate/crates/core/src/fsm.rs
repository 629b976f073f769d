//! Five-state subtask execution: start, pre-processing, function call,
//! post-processing, end.
//!
//! Every run visits all five states in order. A failed or timed-out call still
//! goes through post-processing so resources are released.

use std::sync::mpsc;
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::clock::Clock;
use crate::codegen::{ArgValue, CallPlan};
use crate::corpus::DeviceApiProfile;
use crate::device::{Device, DeviceError};
use crate::m2m_log::M2mLog;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FsmState {
    Start,
    PreProcessing,
    FunctionCall,
    PostProcessing,
    End,
}

impl FsmState {
    pub const ORDER: [FsmState; 5] = [
        FsmState::Start,
        FsmState::PreProcessing,
        FsmState::FunctionCall,
        FsmState::PostProcessing,
        FsmState::End,
    ];

    pub fn label(self) -> &'static str {
        match self {
            FsmState::Start => "START",
            FsmState::PreProcessing => "PRE_PROCESSING",
            FsmState::FunctionCall => "FUNCTION_CALL",
            FsmState::PostProcessing => "POST_PROCESSING",
            FsmState::End => "END",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompletionStatus {
    /// Received but not started.
    #[default]
    None,
    Ongoing,
    Completed,
    NotExecutable,
    Superseded,
}

impl CompletionStatus {
    pub fn is_terminal(self) -> bool {
        matches!(
            self,
            CompletionStatus::Completed | CompletionStatus::NotExecutable | CompletionStatus::Superseded
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateEntry {
    pub state: FsmState,
    pub at_ms: u64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CallOutcome {
    Returned(Value),
    Failed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionRecord {
    pub subtask_id: u64,
    pub device_id: String,
    /// `None` when interpretation failed before a call could be built.
    pub rendered_call: Option<String>,
    /// Empty when the FSM never started.
    pub state_log: Vec<StateEntry>,
    pub call_result: Option<CallOutcome>,
    pub final_status: CompletionStatus,
}

impl ExecutionRecord {
    pub fn states(&self) -> Vec<FsmState> {
        self.state_log.iter().map(|e| e.state).collect()
    }

    /// Record for a subtask that failed before reaching the FSM.
    pub fn not_started(subtask_id: u64, device_id: &str, reason: String) -> Self {
        ExecutionRecord {
            subtask_id,
            device_id: device_id.to_string(),
            rendered_call: None,
            state_log: Vec::new(),
            call_result: Some(CallOutcome::Failed(reason)),
            final_status: CompletionStatus::NotExecutable,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FsmTimeouts {
    #[serde(with = "millis")]
    pub pre: Duration,
    #[serde(with = "millis")]
    pub call: Duration,
    #[serde(with = "millis")]
    pub post: Duration,
}

impl Default for FsmTimeouts {
    fn default() -> Self {
        FsmTimeouts {
            pre: Duration::from_secs(2),
            call: Duration::from_secs(30),
            post: Duration::from_secs(2),
        }
    }
}

pub(crate) mod millis {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        u64::deserialize(d).map(Duration::from_millis)
    }
}

/// Functions invoked on entry to pre- and post-processing.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FsmHooks {
    pub init: Option<String>,
    pub release: Option<String>,
}

impl FsmHooks {
    pub fn from_profile(profile: &DeviceApiProfile) -> Self {
        FsmHooks {
            init: profile.init_function().map(|f| f.name.clone()),
            release: profile.release_function().map(|f| f.name.clone()),
        }
    }
}

#[derive(Debug)]
enum StepError {
    Device(DeviceError),
    Timeout(Duration),
}

impl std::fmt::Display for StepError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StepError::Device(e) => write!(f, "{e}"),
            StepError::Timeout(limit) => write!(f, "timed out after {} ms", limit.as_millis()),
        }
    }
}

/// Runs call plans against one device.
#[derive(Clone)]
pub struct FsmExecutor {
    device: Arc<dyn Device>,
    timeouts: FsmTimeouts,
    clock: Arc<dyn Clock>,
    log: M2mLog,
}

impl FsmExecutor {
    pub fn new(device: Arc<dyn Device>, timeouts: FsmTimeouts, log: M2mLog) -> Self {
        let clock = log.clock().clone();
        FsmExecutor {
            device,
            timeouts,
            clock,
            log,
        }
    }

    pub fn device(&self) -> &Arc<dyn Device> {
        &self.device
    }

    // The device call runs on its own thread so a stalled device cannot hold
    // the FSM past its deadline. A timed-out call is abandoned, not cancelled.
    fn invoke(&self, function: &str, args: Vec<ArgValue>, limit: Duration) -> Result<Value, StepError> {
        let (tx, rx) = mpsc::channel();
        let device = Arc::clone(&self.device);
        let name = function.to_string();
        thread::Builder::new()
            .name(format!("call-{}", self.device.device_id()))
            .spawn(move || {
                let _ = tx.send(device.call(&name, &args));
            })
            .expect("spawn device call thread");
        match rx.recv_timeout(limit) {
            Ok(r) => r.map_err(StepError::Device),
            Err(_) => Err(StepError::Timeout(limit)),
        }
    }

    fn enter(&self, log: &mut Vec<StateEntry>, subtask_id: u64, state: FsmState, detail: String) {
        let at_ms = self.clock.now_ms();
        self.log.record(format!(
            "{} {} {} {}",
            self.device.device_id(),
            subtask_id,
            state.label(),
            detail
        ));
        log.push(StateEntry { state, at_ms, detail });
    }

    pub fn run(&self, subtask_id: u64, plan: &CallPlan, hooks: &FsmHooks) -> ExecutionRecord {
        let mut states = Vec::with_capacity(5);
        let device_id = self.device.device_id().to_string();
        self.enter(&mut states, subtask_id, FsmState::Start, format!("subtask {subtask_id}: {}", plan.rendered_call));

        let started = Instant::now();
        let pre = match &hooks.init {
            Some(init) => self.invoke(init, Vec::new(), self.timeouts.pre).map(|_| format!("{init}() ok")),
            None => Ok("no init function; skipped".to_string()),
        };
        let pre_detail = match &pre {
            Ok(d) => d.clone(),
            Err(e) => format!("init failed: {e}"),
        };
        self.enter(&mut states, subtask_id, FsmState::PreProcessing, pre_detail);

        let call = if pre.is_ok() {
            let r = self.invoke(&plan.function.name, plan.typed_args(), self.timeouts.call);
            Some(r)
        } else {
            None
        };
        let (call_result, call_detail) = match call {
            Some(Ok(v)) => (Some(CallOutcome::Returned(v.clone())), format!("{} -> {v}", plan.rendered_call)),
            Some(Err(e)) => (Some(CallOutcome::Failed(e.to_string())), format!("{} failed: {e}", plan.rendered_call)),
            None => (
                Some(CallOutcome::Failed("pre-processing failed".into())),
                format!("{} skipped: pre-processing failed", plan.rendered_call),
            ),
        };
        self.enter(&mut states, subtask_id, FsmState::FunctionCall, call_detail);

        let completed = matches!(call_result, Some(CallOutcome::Returned(_)));
        let post_detail = match &hooks.release {
            Some(release) => match self.invoke(release, Vec::new(), self.timeouts.post) {
                Ok(_) => format!("{release}() ok"),
                Err(e) => format!("release failed: {e}"),
            },
            None => "no release function; skipped".to_string(),
        };
        let outcome = if completed { "completed" } else { "not executable" };
        self.enter(
            &mut states,
            subtask_id,
            FsmState::PostProcessing,
            format!("{post_detail}; {outcome} after {} ms", started.elapsed().as_millis()),
        );

        let final_status = if completed {
            CompletionStatus::Completed
        } else {
            CompletionStatus::NotExecutable
        };
        self.enter(&mut states, subtask_id, FsmState::End, format!("{final_status:?}"));
        ExecutionRecord {
            subtask_id,
            device_id,
            rendered_call: Some(plan.rendered_call.clone()),
            state_log: states,
            call_result,
            final_status,
        }
    }
}

#[cfg(test)]
mod tests {
    use std::sync::atomic::{AtomicUsize, Ordering};

    use parking_lot::Mutex;

    use super::*;
    use crate::codegen::{compose_call, ArgumentSet};
    use crate::corpus::shipped;

    #[derive(Default)]
    struct Scripted {
        fail_call: bool,
        fail_init: bool,
        calls: Mutex<Vec<String>>,
        main_calls: AtomicUsize,
    }

    impl Device for Scripted {
        fn device_id(&self) -> &str {
            "dev"
        }
        fn call(&self, function: &str, _args: &[ArgValue]) -> Result<Value, DeviceError> {
            self.calls.lock().push(function.to_string());
            match function {
                "init" if self.fail_init => Err(DeviceError::Fault("init broke".into())),
                "init" | "release" => Ok(Value::Null),
                _ => {
                    self.main_calls.fetch_add(1, Ordering::SeqCst);
                    if self.fail_call {
                        Err(DeviceError::Fault("injected".into()))
                    } else {
                        Ok(Value::Bool(true))
                    }
                }
            }
        }
    }

    fn plan() -> CallPlan {
        let robot = shipped::robot();
        compose_call(
            robot.function("move_to_shelf").unwrap(),
            &ArgumentSet { bindings: vec![("shelf_id".into(), "1".into())] },
        )
        .unwrap()
    }

    fn executor(dev: Arc<Scripted>) -> FsmExecutor {
        FsmExecutor::new(dev, FsmTimeouts::default(), M2mLog::default())
    }

    #[test]
    fn successful_call_completes() {
        let dev = Arc::new(Scripted::default());
        let rec = executor(dev.clone()).run(1, &plan(), &FsmHooks::default());
        assert_eq!(rec.states(), FsmState::ORDER.to_vec());
        assert_eq!(rec.final_status, CompletionStatus::Completed);
        assert_eq!(rec.call_result, Some(CallOutcome::Returned(Value::Bool(true))));
        assert_eq!(dev.main_calls.load(Ordering::SeqCst), 1);
        // No hooks: pre and post are logged no-ops.
        assert!(rec.state_log[1].detail.contains("skipped"));
        assert!(rec.state_log[3].detail.contains("skipped"));
    }

    #[test]
    fn failed_call_still_post_processes() {
        let dev = Arc::new(Scripted { fail_call: true, ..Default::default() });
        let hooks = FsmHooks { init: Some("init".into()), release: Some("release".into()) };
        let rec = executor(dev.clone()).run(2, &plan(), &hooks);
        assert_eq!(rec.states(), FsmState::ORDER.to_vec());
        assert_eq!(rec.final_status, CompletionStatus::NotExecutable);
        assert!(matches!(rec.call_result, Some(CallOutcome::Failed(_))));
        assert_eq!(*dev.calls.lock(), vec!["init", "move_to_shelf", "release"]);
    }

    #[test]
    fn failed_init_skips_call_but_releases() {
        let dev = Arc::new(Scripted { fail_init: true, ..Default::default() });
        let hooks = FsmHooks { init: Some("init".into()), release: Some("release".into()) };
        let rec = executor(dev.clone()).run(3, &plan(), &hooks);
        assert_eq!(rec.states(), FsmState::ORDER.to_vec());
        assert_eq!(rec.final_status, CompletionStatus::NotExecutable);
        assert_eq!(dev.main_calls.load(Ordering::SeqCst), 0);
        assert_eq!(*dev.calls.lock(), vec!["init", "release"]);
    }

    struct Stalled;
    impl Device for Stalled {
        fn device_id(&self) -> &str {
            "slow"
        }
        fn call(&self, _: &str, _: &[ArgValue]) -> Result<Value, DeviceError> {
            thread::sleep(Duration::from_millis(300));
            Ok(Value::Null)
        }
    }

    #[test]
    fn call_timeout_is_not_executable() {
        let timeouts = FsmTimeouts { call: Duration::from_millis(20), ..Default::default() };
        let exec = FsmExecutor::new(Arc::new(Stalled), timeouts, M2mLog::default());
        let t = Instant::now();
        let rec = exec.run(4, &plan(), &FsmHooks::default());
        assert!(t.elapsed() < Duration::from_millis(250));
        assert_eq!(rec.final_status, CompletionStatus::NotExecutable);
        assert_eq!(rec.states(), FsmState::ORDER.to_vec());
        assert!(rec.state_log[2].detail.contains("timed out"));
    }

    #[test]
    fn log_line_per_state() {
        let log = M2mLog::default();
        let exec = FsmExecutor::new(Arc::new(Scripted::default()), FsmTimeouts::default(), log.clone());
        exec.run(9, &plan(), &FsmHooks::default());
        let lines = log.lines();
        assert_eq!(lines.len(), 5);
        for (line, state) in lines.iter().zip(FsmState::ORDER) {
            let parts: Vec<&str> = line.splitn(5, ' ').collect();
            assert_eq!(&parts[1..4], &["dev", "9", state.label()]);
        }
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(1000))]

        #[test]
        fn five_states_once_each(fail_init: bool, fail_call: bool, hooks_present: bool) {
            let dev = Arc::new(Scripted { fail_call, fail_init, ..Default::default() });
            let hooks = if hooks_present {
                FsmHooks { init: Some("init".into()), release: Some("release".into()) }
            } else {
                FsmHooks::default()
            };
            let rec = executor(dev.clone()).run(1, &plan(), &hooks);
            proptest::prop_assert_eq!(rec.states(), FsmState::ORDER.to_vec());
            let ran = !(hooks_present && fail_init);
            proptest::prop_assert_eq!(dev.main_calls.load(Ordering::SeqCst), usize::from(ran));
            let ok = ran && !fail_call;
            proptest::prop_assert_eq!(rec.final_status == CompletionStatus::Completed, ok);
            proptest::prop_assert!(rec.final_status.is_terminal());
            proptest::prop_assert!(rec.state_log.windows(2).all(|w| w[0].at_ms <= w[1].at_ms));
        }
    }
}
