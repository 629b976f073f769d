//! Deterministic simulated devices: warehouse robots on a shelf world and
//! WiFi clients sharing one contended channel.

pub mod warehouse;
pub mod wifi;

pub use warehouse::{RobotDevice, RobotLocation, WarehouseWorld};
pub use wifi::{
    compute_per, simulate_upload, Band, UploadStats, WifiClientConfig, WifiClientState, WifiDevice, WifiWorld,
    WifiWorldConfig,
};
