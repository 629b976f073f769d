//! The device side of an agent: a dispatch table of API functions plus the
//! attributes it advertises in reports.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::codegen::ArgValue;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DeviceError {
    #[error("unknown function `{0}`")]
    UnknownFunction(String),
    #[error("bad arguments: {0}")]
    InvalidArgument(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("not supported by this device: {0}")]
    Capability(String),
    #[error("device fault: {0}")]
    Fault(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeviceStatus {
    #[default]
    Ok,
    Fault,
}

pub trait Device: Send + Sync {
    fn device_id(&self) -> &str;

    fn call(&self, function: &str, args: &[ArgValue]) -> Result<Value, DeviceError>;

    fn attributes(&self) -> BTreeMap<String, Value> {
        BTreeMap::new()
    }

    fn status(&self) -> DeviceStatus {
        DeviceStatus::Ok
    }
}
