use std::thread;
use std::time::{Duration, Instant};

use llmind::agent::{Agent, AgentConfig};
use llmind::coordinator::{Coordinator, CoordinatorConfig, WarehousePlanner};
use llmind::corpus::{shipped, ApiFunction, ApiParameter, RoleHint, ValueType};
use llmind::m2m_log::M2mLog;
use llmind::sim::WarehouseWorld;
use llmind::transport::{serve_agent_tcp, CoordinatorLink, TcpCoordinatorLink};

fn robot(world: &std::sync::Arc<WarehouseWorld>, k: u32, n: u32, log: &M2mLog) -> Agent {
    let id = format!("robot-{k}");
    Agent::new(&AgentConfig::new(&id), shipped::robot_for_warehouse(&id, n), world.add_robot(&id), log.clone()).unwrap()
}

fn wait_for_endpoints(link: &TcpCoordinatorLink, n: usize) {
    let deadline = Instant::now() + Duration::from_secs(5);
    while link.endpoints().len() < n {
        assert!(Instant::now() < deadline, "agents did not register");
        thread::sleep(Duration::from_millis(10));
    }
}

#[test]
fn warehouse_over_tcp() {
    let log = M2mLog::default();
    let world = WarehouseWorld::new(2, 21);
    let link = TcpCoordinatorLink::bind("127.0.0.1:0").unwrap();
    let addr = link.local_addr().to_string();
    let mut runners = Vec::new();
    for k in 1..=2 {
        let agent = robot(&world, k, 2, &log);
        runners.push(agent.spawn_runner());
        let addr = addr.clone();
        thread::spawn(move || serve_agent_tcp(&agent, &addr));
    }
    wait_for_endpoints(&link, 2);
    let config = CoordinatorConfig::with_period(Duration::from_millis(100), Duration::from_millis(60));
    let mut c = Coordinator::new(config, link, Box::new(WarehousePlanner::new(2)), log.clone()).unwrap();
    c.submit_instruction("Please check if there are vacant positions on the shelves.").unwrap();
    let rounds = c.run_realtime(40);
    assert!(c.planner().is_done(), "not done after {} rounds", rounds.len());
    let summary = c.planner().summary();
    let found: std::collections::BTreeMap<u32, Vec<u32>> = serde_json::from_value(summary["vacancies"].clone()).unwrap();
    assert_eq!(&found, world.vacancy_map());
}

#[test]
fn profile_update_reaches_coordinator_once() {
    let log = M2mLog::default();
    let world = WarehouseWorld::new(1, 3);
    let link = TcpCoordinatorLink::bind("127.0.0.1:0").unwrap();
    let agent = robot(&world, 1, 1, &log);
    let remote = agent.clone();
    let addr = link.local_addr().to_string();
    thread::spawn(move || serve_agent_tcp(&remote, &addr));
    wait_for_endpoints(&link, 1);
    let config = CoordinatorConfig::with_period(Duration::from_millis(100), Duration::from_millis(60));
    let mut c = Coordinator::new(config, link, Box::new(WarehousePlanner::new(1)), log).unwrap();
    c.run_round();

    let mut update = agent.profile();
    update.version += 1;
    update.functions.push(ApiFunction {
        name: "blink_lights".into(),
        description: "Blink the warning lights the given number of times.".into(),
        parameters: vec![ApiParameter {
            name: "times".into(),
            value_type: ValueType::Integer,
            range: Some([1.0, 10.0]),
            units: None,
            description: "how many blinks".into(),
        }],
        returns: None,
        role_hint: RoleHint::Normal,
    });
    assert!(agent.update_profile(update.clone()).unwrap());

    let carried: Vec<bool> = (0..3)
        .map(|_| c.run_round().received.get("robot-1").is_some_and(|r| r.profile_update.is_some()))
        .collect();
    assert_eq!(carried, vec![true, false, false]);
    assert!(agent.profile().function("blink_lights").is_some());
}
