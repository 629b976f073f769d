use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{PlanContext, PlannedSubtask, Planner};
use crate::agent::DeviceReport;
use crate::remote::JsonEndpoint;

/// Sampling settings sent with every planning request.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub temperature: f64,
    pub top_p: f64,
    pub frequency_penalty: f64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            temperature: 0.5,
            top_p: 1.0,
            frequency_penalty: 0.0,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PlanRequest {
    pub round: u64,
    pub instructions: Vec<String>,
    pub reports: BTreeMap<String, DeviceReport>,
    pub busy_devices: Vec<String>,
    pub sampling: SamplingConfig,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PlanResponse {
    pub subtasks: Vec<PlannedSubtask>,
}

/// Planner hosted behind HTTP. A failed request dispatches nothing and the
/// instructions are retried next round.
pub struct RemotePlanner {
    endpoint: JsonEndpoint,
    sampling: SamplingConfig,
    pending: Vec<String>,
    errors: u64,
}

impl RemotePlanner {
    pub fn new(endpoint: JsonEndpoint, sampling: SamplingConfig) -> Self {
        RemotePlanner {
            endpoint,
            sampling,
            pending: Vec::new(),
            errors: 0,
        }
    }

    pub fn errors(&self) -> u64 {
        self.errors
    }

    pub fn pending(&self) -> &[String] {
        &self.pending
    }
}

impl Planner for RemotePlanner {
    fn name(&self) -> &str {
        "remote"
    }

    fn plan(&mut self, ctx: &PlanContext<'_>) -> Vec<PlannedSubtask> {
        self.pending.extend(ctx.instructions.iter().map(|i| i.text.clone()));
        let req = PlanRequest {
            round: ctx.round,
            instructions: self.pending.clone(),
            reports: ctx.snapshots.clone(),
            busy_devices: ctx.outstanding.keys().cloned().collect(),
            sampling: self.sampling,
        };
        match self.endpoint.post::<_, PlanResponse>(&req) {
            Ok(resp) => {
                self.pending.clear();
                resp.subtasks.into_iter().filter(|s| ctx.can_dispatch(&s.device_id)).collect()
            }
            Err(_) => {
                self.errors += 1;
                Vec::new()
            }
        }
    }
}
