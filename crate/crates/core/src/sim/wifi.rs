//! Two WiFi clients on one access point.
//!
//! Contention model: every active client is saturated and keeps contending
//! for the whole run. Each cycle, every client draws a backoff uniformly from
//! `0..=2^log_cw_min` slots; the smallest draw transmits one packet (ties are
//! broken uniformly at random). A transmission fails with probability
//! `retx_rate`, in which case its airtime is spent but nothing is credited.

use std::collections::BTreeMap;
use std::sync::Arc;

use parking_lot::Mutex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::codegen::ArgValue;
use crate::device::{Device, DeviceError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Band {
    #[serde(rename = "band_2_4")]
    Band2_4,
    #[serde(rename = "band_5")]
    Band5,
}

impl Band {
    pub fn ghz(self) -> f64 {
        match self {
            Band::Band2_4 => 2.4,
            Band::Band5 => 5.0,
        }
    }

    pub fn from_ghz(ghz: f64) -> Option<Band> {
        if (ghz - 2.4).abs() < 1e-9 {
            Some(Band::Band2_4)
        } else if (ghz - 5.0).abs() < 1e-9 {
            Some(Band::Band5)
        } else {
            None
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Band::Band2_4 => "band_2_4",
            Band::Band5 => "band_5",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandPer {
    pub band_2_4: f64,
    pub band_5: f64,
}

impl BandPer {
    pub fn get(&self, band: Band) -> f64 {
        match band {
            Band::Band2_4 => self.band_2_4,
            Band::Band5 => self.band_5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WifiClientState {
    pub device_id: String,
    pub band: Band,
    pub log_cw_min: u32,
    pub log_cw_max: u32,
    pub nominal_rate_bps: f64,
    pub retx_rate: f64,
    pub base_per: BandPer,
    pub mcs_index: u32,
    pub can_switch_band: bool,
    pub can_sense_interference: bool,
    pub cw_configurable: bool,
    /// Inactive clients are associated but not uploading.
    #[serde(default = "yes")]
    pub active: bool,
    #[serde(default)]
    pub known_aps: Vec<String>,
}

fn yes() -> bool {
    true
}

pub type WifiClientConfig = WifiClientState;

impl WifiClientState {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.log_cw_min <= self.log_cw_max && self.log_cw_max <= 15) {
            return Err(format!(
                "{}: need 0 <= log_cw_min <= log_cw_max <= 15, got ({}, {})",
                self.device_id, self.log_cw_min, self.log_cw_max
            ));
        }
        if self.nominal_rate_bps <= 0.0 {
            return Err(format!("{}: nominal rate must be positive", self.device_id));
        }
        for (name, x) in [
            ("retx_rate", self.retx_rate),
            ("base_per.band_2_4", self.base_per.band_2_4),
            ("base_per.band_5", self.base_per.band_5),
        ] {
            if !(0.0..=1.0).contains(&x) {
                return Err(format!("{}: {name} = {x} outside [0, 1]", self.device_id));
            }
        }
        if self.retx_rate >= 1.0 {
            return Err(format!("{}: retx_rate 1 never delivers", self.device_id));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WifiWorldConfig {
    pub seed: u64,
    pub slot_time_us: f64,
    pub payload_bits: f64,
    pub overhead_us: f64,
    pub file_size_bits: f64,
    /// Simulated uploads give up here and report this as their time.
    pub max_time_s: f64,
    pub interference_per_add: f64,
    #[serde(default)]
    pub interference_on: bool,
    pub clients: Vec<WifiClientState>,
}

impl WifiWorldConfig {
    pub fn validate(&self) -> Result<(), String> {
        for c in &self.clients {
            c.validate()?;
        }
        let positive = [
            ("slot_time_us", self.slot_time_us),
            ("payload_bits", self.payload_bits),
            ("file_size_bits", self.file_size_bits),
            ("max_time_s", self.max_time_s),
        ];
        for (name, x) in positive {
            if x <= 0.0 {
                return Err(format!("{name} must be positive"));
            }
        }
        if self.overhead_us < 0.0 || !(0.0..=1.0).contains(&self.interference_per_add) {
            return Err("overhead_us must be >= 0 and interference_per_add in [0, 1]".into());
        }
        Ok(())
    }

    pub fn client(&self, device_id: &str) -> Option<&WifiClientState> {
        self.clients.iter().find(|c| c.device_id == device_id)
    }
}

/// `min(1, base_per[band] + interference_per_add)` with the addend only on 2.4 GHz
/// while interference is on.
pub fn compute_per(world: &WifiWorldConfig, client: &WifiClientState) -> f64 {
    let extra = if world.interference_on && client.band == Band::Band2_4 {
        world.interference_per_add
    } else {
        0.0
    };
    (client.base_per.get(client.band) + extra).min(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UploadStats {
    pub upload_time_s: f64,
    pub airtime_share: f64,
    pub per: f64,
    /// False when the file was not delivered before `max_time_s`.
    pub completed: bool,
}

/// Monte Carlo upload of one file per active client, seeded by the world seed.
pub fn simulate_upload(world: &WifiWorldConfig) -> BTreeMap<String, UploadStats> {
    let active: Vec<&WifiClientState> = world.clients.iter().filter(|c| c.active).collect();
    if active.is_empty() {
        return BTreeMap::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(world.seed);
    let slot = world.slot_time_us * 1e-6;
    let needed = (world.file_size_bits / world.payload_bits).ceil() as u64;
    let windows: Vec<u32> = active.iter().map(|c| 1u32 << c.log_cw_min).collect();
    let packet_time: Vec<f64> = active
        .iter()
        .map(|c| world.payload_bits / c.nominal_rate_bps + world.overhead_us * 1e-6)
        .collect();
    let n = active.len();
    let mut credited = vec![0u64; n];
    let mut done_at: Vec<Option<f64>> = vec![None; n];
    let mut airtime = vec![0.0; n];
    let mut remaining = n;
    let mut t = 0.0;
    let mut tied = Vec::with_capacity(n);
    while remaining > 0 && t < world.max_time_s {
        let mut best = u32::MAX;
        tied.clear();
        for (i, w) in windows.iter().enumerate() {
            let d = rng.random_range(0..=*w);
            if d < best {
                best = d;
                tied.clear();
            }
            if d == best {
                tied.push(i);
            }
        }
        let winner = if tied.len() == 1 {
            tied[0]
        } else {
            tied[rng.random_range(0..tied.len())]
        };
        t += best as f64 * slot + packet_time[winner];
        airtime[winner] += packet_time[winner];
        if rng.random::<f64>() >= active[winner].retx_rate {
            credited[winner] += 1;
            if credited[winner] == needed {
                done_at[winner] = Some(t);
                remaining -= 1;
            }
        }
    }
    let total: f64 = airtime.iter().sum();
    active
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let stats = UploadStats {
                upload_time_s: done_at[i].unwrap_or(world.max_time_s).min(world.max_time_s),
                airtime_share: if total > 0.0 { airtime[i] / total } else { 0.0 },
                per: compute_per(world, c),
                completed: done_at[i].is_some(),
            };
            (c.device_id.clone(), stats)
        })
        .collect()
}

struct Inner {
    config: WifiWorldConfig,
    uploads: Option<BTreeMap<String, UploadStats>>,
    injected_upload: BTreeMap<String, f64>,
}

impl Inner {
    fn uploads(&mut self) -> &BTreeMap<String, UploadStats> {
        self.uploads.get_or_insert_with(|| simulate_upload(&self.config))
    }

    fn client_mut(&mut self, id: &str) -> Result<&mut WifiClientState, DeviceError> {
        self.uploads = None;
        self.config
            .clients
            .iter_mut()
            .find(|c| c.device_id == id)
            .ok_or_else(|| DeviceError::Fault(format!("no client {id}")))
    }
}

/// The shared channel. Clients act on it through [`WifiDevice`] handles.
pub struct WifiWorld {
    inner: Mutex<Inner>,
}

impl WifiWorld {
    pub fn new(config: WifiWorldConfig) -> Result<Arc<Self>, String> {
        config.validate()?;
        Ok(Arc::new(WifiWorld {
            inner: Mutex::new(Inner {
                config,
                uploads: None,
                injected_upload: BTreeMap::new(),
            }),
        }))
    }

    pub fn config(&self) -> WifiWorldConfig {
        self.inner.lock().config.clone()
    }

    pub fn client(&self, device_id: &str) -> Option<WifiClientState> {
        self.inner.lock().config.client(device_id).cloned()
    }

    pub fn device(self: &Arc<Self>, device_id: &str) -> Option<Arc<WifiDevice>> {
        self.client(device_id)?;
        Some(Arc::new(WifiDevice {
            id: device_id.to_string(),
            world: self.clone(),
        }))
    }

    pub fn uploads(&self) -> BTreeMap<String, UploadStats> {
        self.inner.lock().uploads().clone()
    }

    pub fn set_active(&self, device_id: &str, active: bool) {
        let mut inner = self.inner.lock();
        if let Ok(c) = inner.client_mut(device_id) {
            c.active = active;
        }
    }

    pub fn set_interference(&self, on: bool) {
        let mut inner = self.inner.lock();
        inner.config.interference_on = on;
        inner.uploads = None;
    }

    /// Force the reported upload time of one client, or clear the override.
    pub fn inject_upload_time(&self, device_id: &str, seconds: Option<f64>) {
        let mut inner = self.inner.lock();
        match seconds {
            Some(s) => inner.injected_upload.insert(device_id.to_string(), s),
            None => inner.injected_upload.remove(device_id),
        };
    }

    fn attributes(&self, id: &str) -> BTreeMap<String, Value> {
        let mut inner = self.inner.lock();
        let Some(c) = inner.config.client(id).cloned() else {
            return BTreeMap::new();
        };
        let per = compute_per(&inner.config, &c);
        let interference = inner.config.interference_on && c.band == Band::Band2_4;
        let mut a = BTreeMap::new();
        if c.active {
            if let Some(u) = inner.uploads().get(id).copied() {
                let time = inner.injected_upload.get(id).copied().unwrap_or(u.upload_time_s);
                a.insert("upload_time_s".into(), json!(round3(time)));
                a.insert("airtime_share".into(), json!(round3(u.airtime_share)));
            }
        }
        a.insert("per".into(), json!(round3(per)));
        a.insert("retx_rate".into(), json!(c.retx_rate));
        a.insert("mcs_index".into(), json!(c.mcs_index));
        a.insert("log_cw_min".into(), json!(c.log_cw_min));
        a.insert("log_cw_max".into(), json!(c.log_cw_max));
        a.insert("band".into(), json!(c.band.label()));
        a.insert("cw_configurable".into(), json!(c.cw_configurable));
        a.insert("band_switchable".into(), json!(c.can_switch_band));
        if c.can_sense_interference {
            a.insert("interference_detected".into(), json!(interference));
        }
        a
    }

    fn call(&self, id: &str, function: &str, args: &[ArgValue]) -> Result<Value, DeviceError> {
        let int_arg = |i: usize| -> Result<u32, DeviceError> {
            args.get(i)
                .and_then(ArgValue::as_i64)
                .and_then(|v| u32::try_from(v).ok())
                .ok_or_else(|| DeviceError::InvalidArgument(format!("argument {} must be a non-negative integer", i + 1)))
        };
        match function {
            "get_known_aps" => Ok(json!(self.client(id).map(|c| c.known_aps).unwrap_or_default())),
            "get_link_metrics" => Ok(json!(self.attributes(id))),
            "get_channel_sensing" => {
                let mut inner = self.inner.lock();
                let interference_on = inner.config.interference_on;
                let c = inner.client_mut(id)?;
                if !c.can_sense_interference {
                    return Err(DeviceError::Capability("this NIC exposes no PHY channel sensing".into()));
                }
                Ok(json!({
                    "band": c.band.label(),
                    "interference_detected": interference_on && c.band == Band::Band2_4,
                }))
            }
            "set_contention_window" => {
                let (lo, hi) = (int_arg(0)?, int_arg(1)?);
                if !(lo <= hi && hi <= 15) {
                    return Err(DeviceError::InvalidArgument(format!(
                        "need 0 <= log_cw_min <= log_cw_max <= 15, got ({lo}, {hi})"
                    )));
                }
                let mut inner = self.inner.lock();
                let c = inner.client_mut(id)?;
                if !c.cw_configurable {
                    return Err(DeviceError::Capability("contention window is fixed by the driver".into()));
                }
                c.log_cw_min = lo;
                c.log_cw_max = hi;
                Ok(json!({ "log_cw_min": lo, "log_cw_max": hi }))
            }
            "switch_band" => {
                let ghz = args
                    .first()
                    .and_then(ArgValue::as_f64)
                    .ok_or_else(|| DeviceError::InvalidArgument("band_ghz must be a number".into()))?;
                let band = Band::from_ghz(ghz)
                    .ok_or_else(|| DeviceError::InvalidArgument(format!("no {ghz} GHz band on this AP")))?;
                let mut inner = self.inner.lock();
                let c = inner.client_mut(id)?;
                if !c.can_switch_band {
                    return Err(DeviceError::Capability("band switching requires a system reboot".into()));
                }
                c.band = band;
                Ok(json!({ "band": band.label() }))
            }
            other => Err(DeviceError::UnknownFunction(other.to_string())),
        }
    }
}

fn round3(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

/// One client's device handle.
pub struct WifiDevice {
    id: String,
    world: Arc<WifiWorld>,
}

impl Device for WifiDevice {
    fn device_id(&self) -> &str {
        &self.id
    }

    fn call(&self, function: &str, args: &[ArgValue]) -> Result<Value, DeviceError> {
        self.world.call(&self.id, function, args)
    }

    fn attributes(&self) -> BTreeMap<String, Value> {
        self.world.attributes(&self.id)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use proptest::prelude::*;

    use super::*;

    pub fn client(id: &str, cw: (u32, u32), rate: f64, retx: f64) -> WifiClientState {
        WifiClientState {
            device_id: id.into(),
            band: Band::Band2_4,
            log_cw_min: cw.0,
            log_cw_max: cw.1,
            nominal_rate_bps: rate,
            retx_rate: retx,
            base_per: BandPer { band_2_4: 0.12, band_5: 0.10 },
            mcs_index: 1,
            can_switch_band: false,
            can_sense_interference: true,
            cw_configurable: true,
            active: true,
            known_aps: vec!["lab-ap".into()],
        }
    }

    pub fn world(clients: Vec<WifiClientState>) -> WifiWorldConfig {
        WifiWorldConfig {
            seed: 3,
            slot_time_us: 2.0,
            payload_bits: 12_000.0,
            overhead_us: 100.0,
            file_size_bits: 32e6,
            max_time_s: 1200.0,
            interference_per_add: 0.25,
            interference_on: false,
            clients,
        }
    }

    #[test]
    fn single_client_owns_the_air() {
        let w = world(vec![client("a", (10, 15), 13e6, 0.4)]);
        let u = &simulate_upload(&w)["a"];
        assert_eq!(u.airtime_share, 1.0);
        assert!(u.completed);
        // Mean cycle: 512 slots of 2 us, plus 12000/13e6 s + 100 us, over 0.6 credit.
        let expected = 2667.0 / 0.6 * (512.0 * 2e-6 + 12_000.0 / 13e6 + 100e-6);
        assert!((u.upload_time_s - expected).abs() / expected < 0.02, "{} vs {expected}", u.upload_time_s);
    }

    #[test]
    fn symmetric_clients_split_evenly() {
        for seed in 0..5 {
            let mut w = world(vec![client("a", (4, 6), 26e6, 0.05), client("b", (4, 6), 26e6, 0.05)]);
            w.seed = seed;
            let u = simulate_upload(&w);
            assert!((u["a"].airtime_share - 0.5).abs() < 0.02, "{:?}", u);
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let w = world(vec![client("a", (6, 9), 13e6, 0.4), client("b", (2, 4), 26e6, 0.05)]);
        assert_eq!(simulate_upload(&w), simulate_upload(&w));
    }

    #[test]
    fn per_formula() {
        let mut w = world(vec![client("a", (2, 4), 13e6, 0.4)]);
        let c = w.clients[0].clone();
        assert_eq!(compute_per(&w, &c), 0.12);
        w.interference_on = true;
        assert!((compute_per(&w, &c) - 0.37).abs() < 1e-12);
        let mut on5 = c.clone();
        on5.band = Band::Band5;
        assert_eq!(compute_per(&w, &on5), 0.10);
        w.interference_per_add = 0.95;
        assert_eq!(compute_per(&w, &c), 1.0);
    }

    #[test]
    fn device_calls() {
        let mut commercial = client("c2", (2, 4), 26e6, 0.05);
        commercial.can_switch_band = true;
        commercial.can_sense_interference = false;
        commercial.cw_configurable = false;
        commercial.base_per = BandPer { band_2_4: 0.05, band_5: 0.067 };
        let w = WifiWorld::new(world(vec![client("c1", (10, 15), 13e6, 0.4), commercial])).unwrap();
        let c1 = w.device("c1").unwrap();
        let c2 = w.device("c2").unwrap();
        c1.call("set_contention_window", &[ArgValue::Integer(2), ArgValue::Integer(4)]).unwrap();
        assert_eq!(c1.attributes()["log_cw_min"], json!(2));
        assert!(matches!(
            c1.call("set_contention_window", &[ArgValue::Integer(5), ArgValue::Integer(4)]),
            Err(DeviceError::InvalidArgument(_))
        ));
        assert!(matches!(
            c1.call("switch_band", &[ArgValue::Decimal(5.0)]),
            Err(DeviceError::Capability(_))
        ));
        c2.call("switch_band", &[ArgValue::Decimal(5.0)]).unwrap();
        assert_eq!(c2.attributes()["band"], json!("band_5"));
        assert_eq!(c2.attributes()["per"], json!(0.067));
        assert!(!c2.attributes().contains_key("interference_detected"));
        w.set_interference(true);
        assert_eq!(c1.attributes()["interference_detected"], json!(true));
        assert_eq!(c1.call("get_known_aps", &[]).unwrap(), json!(["lab-ap"]));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        // Lowering one client's CW exponent never lowers its airtime share.
        #[test]
        fn lower_cw_never_loses_share(lo in 0u32..8, step in 1u32..4, seed in 0u64..1000) {
            let hi = lo + step;
            let mut w = world(vec![client("a", (hi, 15), 13e6, 0.4), client("b", (3, 5), 26e6, 0.05)]);
            w.seed = seed;
            w.max_time_s = 20.0;
            let before = simulate_upload(&w)["a"];
            w.clients[0].log_cw_min = lo;
            let after = simulate_upload(&w)["a"];
            prop_assert!(after.airtime_share + 0.02 >= before.airtime_share);
            prop_assert!(after.upload_time_s <= before.upload_time_s + 0.5);
        }
    }
}
