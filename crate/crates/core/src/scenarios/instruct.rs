use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::agent::{Agent, AgentConfig};
use crate::clock::SimClock;
use crate::coordinator::{robot_id, Coordinator, CoordinatorConfig, WarehousePlanner};
use crate::corpus::shipped;
use crate::m2m_log::M2mLog;
use crate::sim::WarehouseWorld;
use crate::transport::DirectLink;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstructOptions {
    /// Shelves and robots in the embedded warehouse.
    pub n: u32,
    pub seed: u64,
    pub max_rounds: u64,
    /// Print log lines as they happen.
    pub echo: bool,
}

impl Default for InstructOptions {
    fn default() -> Self {
        InstructOptions { n: 2, seed: 0, max_rounds: 10, echo: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstructTrace {
    pub lines: Vec<String>,
    pub rounds: u64,
    pub dispatched: usize,
    pub completed: bool,
    pub warning: Option<String>,
    pub vacancies: BTreeMap<u32, Vec<u32>>,
}

/// Submit one instruction to an embedded warehouse system and run rounds
/// until the plan completes or the round budget runs out.
pub fn instruct(text: &str, opts: &InstructOptions) -> Result<InstructTrace, String> {
    let clock = SimClock::new();
    let mut log = M2mLog::new(Arc::new(clock.clone()));
    if opts.echo {
        log = log.echoing();
    }
    let world = WarehouseWorld::new(opts.n, opts.seed);
    let agents: Vec<Agent> = (1..=opts.n)
        .map(|k| {
            let id = robot_id(k);
            Agent::new(&AgentConfig::new(&id), shipped::robot_for_warehouse(&id, opts.n), world.add_robot(&id), log.clone())
                .map_err(|e| e.to_string())
        })
        .collect::<Result<_, _>>()?;
    let link = Arc::new(DirectLink::new(agents.clone()));
    let mut coordinator = Coordinator::new(
        CoordinatorConfig::default(),
        link,
        Box::new(WarehousePlanner::new(opts.n)),
        log.clone(),
    )
    .map_err(|e| e.to_string())?;
    coordinator.submit_instruction(text).map_err(|e| e.to_string())?;
    let mut dispatched = 0;
    let mut rounds = 0;
    while rounds < opts.max_rounds && !coordinator.planner().is_done() {
        dispatched += coordinator.run_round().dispatched.len();
        rounds += 1;
        for a in &agents {
            a.interpret_loop_step();
        }
        clock.advance_ms(CoordinatorConfig::default().poll_period.as_millis() as u64);
    }
    let completed = coordinator.planner().is_done();
    let vacancies: BTreeMap<u32, Vec<u32>> =
        serde_json::from_value(coordinator.planner().summary()["vacancies"].clone()).unwrap_or_default();
    for (shelf, v) in &vacancies {
        log.record(format!("coordinator: shelf {shelf} has vacant positions {v:?}"));
    }
    let warning = (!completed).then(|| {
        let w = format!("round budget of {} exhausted before the plan completed", opts.max_rounds);
        log.record(format!("warning: {w}"));
        w
    });
    Ok(InstructTrace { lines: log.lines(), rounds, dispatched, completed, warning, vacancies })
}
