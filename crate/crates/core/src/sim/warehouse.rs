use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use parking_lot::Mutex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::codegen::ArgValue;
use crate::device::{Device, DeviceError};

pub const POSITIONS_PER_SHELF: u32 = 10;
pub const VACANCY_P: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RobotLocation {
    Base,
    Shelf { shelf_id: u32 },
    Point { x: f64, y: f64 },
}

impl std::fmt::Display for RobotLocation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RobotLocation::Base => write!(f, "base"),
            RobotLocation::Shelf { shelf_id } => write!(f, "shelf {shelf_id}"),
            RobotLocation::Point { x, y } => write!(f, "({x}, {y})"),
        }
    }
}

#[derive(Debug)]
struct WorldState {
    robots: BTreeMap<String, RobotLocation>,
    last_scan: BTreeMap<String, (u32, Vec<u32>)>,
    images: u64,
}

/// N shelves with seeded vacancies, and the robots moving between them.
#[derive(Debug)]
pub struct WarehouseWorld {
    n_shelves: u32,
    seed: u64,
    vacancy: BTreeMap<u32, Vec<u32>>,
    state: Mutex<WorldState>,
}

impl WarehouseWorld {
    /// Each of the 10 positions on each shelf is vacant with probability 0.3.
    pub fn new(n_shelves: u32, seed: u64) -> Arc<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vacancy = (1..=n_shelves)
            .map(|shelf| {
                let vacant = (1..=POSITIONS_PER_SHELF).filter(|_| rng.random_bool(VACANCY_P)).collect();
                (shelf, vacant)
            })
            .collect();
        Arc::new(WarehouseWorld {
            n_shelves,
            seed,
            vacancy,
            state: Mutex::new(WorldState {
                robots: BTreeMap::new(),
                last_scan: BTreeMap::new(),
                images: 0,
            }),
        })
    }

    pub fn n_shelves(&self) -> u32 {
        self.n_shelves
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn vacancy(&self, shelf_id: u32) -> Option<&[u32]> {
        self.vacancy.get(&shelf_id).map(Vec::as_slice)
    }

    pub fn vacancy_map(&self) -> &BTreeMap<u32, Vec<u32>> {
        &self.vacancy
    }

    pub fn location(&self, robot_id: &str) -> Option<RobotLocation> {
        self.state.lock().robots.get(robot_id).cloned()
    }

    /// Place a robot at the base and return its device handle.
    pub fn add_robot(self: &Arc<Self>, robot_id: &str) -> Arc<RobotDevice> {
        self.state.lock().robots.insert(robot_id.to_string(), RobotLocation::Base);
        Arc::new(RobotDevice {
            id: robot_id.to_string(),
            world: self.clone(),
            latency: Duration::ZERO,
        })
    }

    fn shelf_arg(&self, args: &[ArgValue]) -> Result<u32, DeviceError> {
        let shelf = args
            .first()
            .and_then(ArgValue::as_i64)
            .ok_or_else(|| DeviceError::InvalidArgument("shelf_id must be an integer".into()))?;
        if shelf < 1 || shelf > self.n_shelves as i64 {
            return Err(DeviceError::InvalidArgument(format!(
                "shelf {shelf} outside 1..={}",
                self.n_shelves
            )));
        }
        Ok(shelf as u32)
    }

    fn call(&self, robot_id: &str, function: &str, args: &[ArgValue]) -> Result<Value, DeviceError> {
        let arity = |n: usize| {
            if args.len() == n {
                Ok(())
            } else {
                Err(DeviceError::InvalidArgument(format!(
                    "{function} takes {n} arguments, got {}",
                    args.len()
                )))
            }
        };
        let mut st = self.state.lock();
        let here = st
            .robots
            .get(robot_id)
            .cloned()
            .ok_or_else(|| DeviceError::Fault(format!("robot {robot_id} is not in this warehouse")))?;
        match function {
            "get_status" => {
                arity(0)?;
                Ok(json!({ "location": here.to_string(), "battery": 100 }))
            }
            "move_to_shelf" => {
                arity(1)?;
                let shelf_id = self.shelf_arg(args)?;
                let to = RobotLocation::Shelf { shelf_id };
                st.robots.insert(robot_id.to_string(), to.clone());
                Ok(json!({ "location": to.to_string() }))
            }
            "identify_vacancy_by_shelf" => {
                arity(1)?;
                let shelf_id = self.shelf_arg(args)?;
                if here != (RobotLocation::Shelf { shelf_id }) {
                    return Err(DeviceError::Precondition(format!(
                        "robot is at {here}, not at shelf {shelf_id}"
                    )));
                }
                let vacant = self.vacancy[&shelf_id].clone();
                st.last_scan.insert(robot_id.to_string(), (shelf_id, vacant.clone()));
                Ok(json!({ "shelf_id": shelf_id, "vacant_positions": vacant }))
            }
            "capture_image" => {
                arity(1)?;
                let exposure = args[0]
                    .as_i64()
                    .ok_or_else(|| DeviceError::InvalidArgument("exposure_ms must be an integer".into()))?;
                st.images += 1;
                Ok(json!({ "image_id": st.images, "location": here.to_string(), "exposure_ms": exposure }))
            }
            "return_to_base" => {
                arity(0)?;
                st.robots.insert(robot_id.to_string(), RobotLocation::Base);
                Ok(json!({ "location": "base" }))
            }
            "move_to_coordinates" => {
                arity(2)?;
                let coord = |i: usize| {
                    args[i]
                        .as_f64()
                        .ok_or_else(|| DeviceError::InvalidArgument("coordinates must be numbers".into()))
                };
                let to = RobotLocation::Point { x: coord(0)?, y: coord(1)? };
                st.robots.insert(robot_id.to_string(), to.clone());
                Ok(json!({ "location": to.to_string() }))
            }
            other => Err(DeviceError::UnknownFunction(other.to_string())),
        }
    }
}

/// One robot's device handle. Calls go through the shared world.
#[derive(Debug, Clone)]
pub struct RobotDevice {
    id: String,
    world: Arc<WarehouseWorld>,
    latency: Duration,
}

impl RobotDevice {
    /// Every call sleeps for `latency` before acting.
    pub fn with_latency(&self, latency: Duration) -> Arc<Self> {
        Arc::new(RobotDevice {
            latency,
            ..self.clone()
        })
    }
}

impl Device for RobotDevice {
    fn device_id(&self) -> &str {
        &self.id
    }

    fn call(&self, function: &str, args: &[ArgValue]) -> Result<Value, DeviceError> {
        if !self.latency.is_zero() {
            std::thread::sleep(self.latency);
        }
        self.world.call(&self.id, function, args)
    }

    fn attributes(&self) -> BTreeMap<String, Value> {
        let st = self.world.state.lock();
        let mut attrs = BTreeMap::new();
        if let Some(loc) = st.robots.get(&self.id) {
            attrs.insert("location".to_string(), Value::String(loc.to_string()));
        }
        if let Some((shelf, vacant)) = st.last_scan.get(&self.id) {
            attrs.insert("last_scan".to_string(), json!({ "shelf_id": shelf, "vacant_positions": vacant }));
        }
        attrs
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shelf(n: i64) -> Vec<ArgValue> {
        vec![ArgValue::Integer(n)]
    }

    #[test]
    fn move_then_identify_reads_seeded_map() {
        let world = WarehouseWorld::new(3, 42);
        let robot = world.add_robot("robot-1");
        robot.call("move_to_shelf", &shelf(1)).unwrap();
        let out = robot.call("identify_vacancy_by_shelf", &shelf(1)).unwrap();
        // Oracle: regenerate the shelf-1 draws independently from the seed.
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let expected: Vec<u32> = (1..=10).filter(|_| rng.random_bool(0.3)).collect();
        assert_eq!(out["vacant_positions"], json!(expected));
        assert_eq!(robot.attributes()["last_scan"]["shelf_id"], json!(1));
    }

    #[test]
    fn identify_elsewhere_is_precondition_error() {
        let world = WarehouseWorld::new(3, 1);
        let robot = world.add_robot("robot-1");
        robot.call("move_to_shelf", &shelf(1)).unwrap();
        assert!(matches!(
            robot.call("identify_vacancy_by_shelf", &shelf(2)),
            Err(DeviceError::Precondition(_))
        ));
    }

    #[test]
    fn unknown_function_and_range() {
        let world = WarehouseWorld::new(2, 1);
        let robot = world.add_robot("robot-1");
        assert!(matches!(robot.call("fly", &[]), Err(DeviceError::UnknownFunction(_))));
        assert!(matches!(robot.call("move_to_shelf", &shelf(3)), Err(DeviceError::InvalidArgument(_))));
    }

    #[test]
    fn seeded_worlds_agree() {
        assert_eq!(WarehouseWorld::new(8, 5).vacancy_map(), WarehouseWorld::new(8, 5).vacancy_map());
        assert_ne!(WarehouseWorld::new(8, 5).vacancy_map(), WarehouseWorld::new(8, 6).vacancy_map());
    }

    #[test]
    fn vacancy_rate_near_three_tenths() {
        let world = WarehouseWorld::new(2000, 9);
        let vacant: usize = world.vacancy_map().values().map(Vec::len).sum();
        let rate = vacant as f64 / 20_000.0;
        assert!((rate - 0.3).abs() < 0.01, "{rate}");
    }
}
