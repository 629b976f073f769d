//! Device API profiles: the JSON knowledge base each agent retrieves from.
//!
//! A profile lists the callable functions of one device. Each function is
//! later rendered into a single retrieval chunk so that a subtask sentence can
//! be compared against it.

use std::collections::HashSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CorpusError {
    #[error("malformed document at byte {offset}: {message}")]
    Malformed { offset: usize, message: String },
    #[error("duplicate function name `{0}`")]
    DuplicateFunction(String),
    #[error("function `{function}`: duplicate parameter name `{parameter}`")]
    DuplicateParameter { function: String, parameter: String },
    #[error("function `{function}`: unknown value_type `{value_type}`")]
    UnknownValueType { function: String, value_type: String },
    #[error("validation failed: {0}")]
    Invalid(String),
    #[error("profile update for `{update}` does not match current device `{current}`")]
    IdentityMismatch { current: String, update: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueType {
    Integer,
    Decimal,
    String,
    Boolean,
}

impl ValueType {
    pub fn is_numeric(self) -> bool {
        matches!(self, ValueType::Integer | ValueType::Decimal)
    }

    fn parse(raw: &str) -> Option<Self> {
        match raw {
            "integer" => Some(ValueType::Integer),
            "decimal" => Some(ValueType::Decimal),
            "string" => Some(ValueType::String),
            "boolean" => Some(ValueType::Boolean),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoleHint {
    #[default]
    Normal,
    Init,
    Release,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApiParameter {
    pub name: String,
    pub value_type: ValueType,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub range: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub units: Option<String>,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApiReturn {
    pub value_type: ValueType,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApiFunction {
    pub name: String,
    pub description: String,
    pub parameters: Vec<ApiParameter>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub returns: Option<ApiReturn>,
    pub role_hint: RoleHint,
}

impl ApiFunction {
    pub fn arity(&self) -> usize {
        self.parameters.len()
    }
}

// Deserializing goes through the same validation as `load_profile`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "serde_json::Value")]
pub struct DeviceApiProfile {
    pub device_id: String,
    pub device_type: String,
    pub functions: Vec<ApiFunction>,
    pub version: u64,
}

impl DeviceApiProfile {
    pub fn function(&self, name: &str) -> Option<&ApiFunction> {
        self.functions.iter().find(|f| f.name == name)
    }

    /// The function marked for pre-processing, if any.
    pub fn init_function(&self) -> Option<&ApiFunction> {
        self.functions.iter().find(|f| f.role_hint == RoleHint::Init)
    }

    /// The function marked for post-processing, if any.
    pub fn release_function(&self) -> Option<&ApiFunction> {
        self.functions.iter().find(|f| f.role_hint == RoleHint::Release)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("profile serializes")
    }

    /// Copy with a different device id, for fleets built from one corpus file.
    pub fn with_device_id(&self, device_id: impl Into<String>) -> Self {
        DeviceApiProfile {
            device_id: device_id.into(),
            ..self.clone()
        }
    }
}

impl TryFrom<serde_json::Value> for DeviceApiProfile {
    type Error = CorpusError;

    fn try_from(value: serde_json::Value) -> Result<Self, Self::Error> {
        load_profile(value.to_string().as_bytes())
    }
}

// Wire-level shapes. `value_type` is read as a string so an unknown type can be
// reported as a validation error instead of a generic parse failure.
#[derive(Deserialize)]
struct RawParameter {
    name: String,
    value_type: String,
    #[serde(default)]
    range: Option<[f64; 2]>,
    #[serde(default)]
    units: Option<String>,
    #[serde(default)]
    description: String,
}

#[derive(Deserialize)]
struct RawReturn {
    value_type: String,
    #[serde(default)]
    description: String,
}

#[derive(Deserialize)]
struct RawFunction {
    name: String,
    description: String,
    #[serde(default)]
    parameters: Vec<RawParameter>,
    #[serde(default)]
    returns: Option<RawReturn>,
    #[serde(default)]
    role_hint: RoleHint,
}

#[derive(Deserialize)]
struct RawProfile {
    device_id: String,
    #[serde(default)]
    device_type: String,
    functions: Vec<RawFunction>,
    #[serde(default)]
    version: u64,
}

/// Parse and validate one profile document.
pub fn load_profile(raw: &[u8]) -> Result<DeviceApiProfile, CorpusError> {
    let doc: RawProfile = serde_json::from_slice(raw).map_err(|e| CorpusError::Malformed {
        offset: byte_offset(raw, e.line(), e.column()),
        message: e.to_string(),
    })?;
    validate(doc)
}

// serde_json reports 1-based line and column; turn that into a byte offset.
fn byte_offset(raw: &[u8], line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let line_start = raw
        .split_inclusive(|&b| b == b'\n')
        .take(line - 1)
        .map(<[u8]>::len)
        .sum::<usize>();
    (line_start + column.saturating_sub(1)).min(raw.len())
}

fn validate(doc: RawProfile) -> Result<DeviceApiProfile, CorpusError> {
    if doc.device_id.trim().is_empty() {
        return Err(CorpusError::Invalid("device_id is empty".into()));
    }
    let mut seen = HashSet::new();
    let mut functions = Vec::with_capacity(doc.functions.len());
    let (mut inits, mut releases) = (0, 0);
    for raw in doc.functions {
        if raw.name.trim().is_empty() {
            return Err(CorpusError::Invalid("function with empty name".into()));
        }
        if !seen.insert(raw.name.clone()) {
            return Err(CorpusError::DuplicateFunction(raw.name));
        }
        if raw.description.trim().is_empty() {
            return Err(CorpusError::Invalid(format!(
                "function `{}` has an empty description",
                raw.name
            )));
        }
        match raw.role_hint {
            RoleHint::Init => inits += 1,
            RoleHint::Release => releases += 1,
            RoleHint::Normal => {}
        }
        functions.push(validate_function(raw)?);
    }
    if inits > 1 || releases > 1 {
        return Err(CorpusError::Invalid(
            "at most one init and one release function per profile".into(),
        ));
    }
    Ok(DeviceApiProfile {
        device_id: doc.device_id,
        device_type: doc.device_type,
        functions,
        version: doc.version,
    })
}

fn validate_function(raw: RawFunction) -> Result<ApiFunction, CorpusError> {
    let value_type = |ty: &str| {
        ValueType::parse(ty).ok_or_else(|| CorpusError::UnknownValueType {
            function: raw.name.clone(),
            value_type: ty.to_string(),
        })
    };
    let mut names = HashSet::new();
    let mut parameters = Vec::with_capacity(raw.parameters.len());
    for p in &raw.parameters {
        if p.name.trim().is_empty() {
            return Err(CorpusError::Invalid(format!(
                "function `{}` has a parameter with an empty name",
                raw.name
            )));
        }
        if !names.insert(p.name.as_str()) {
            return Err(CorpusError::DuplicateParameter {
                function: raw.name.clone(),
                parameter: p.name.clone(),
            });
        }
        let ty = value_type(&p.value_type)?;
        if let Some([min, max]) = p.range {
            if !ty.is_numeric() {
                return Err(CorpusError::Invalid(format!(
                    "`{}.{}`: range on non-numeric parameter",
                    raw.name, p.name
                )));
            }
            if min.is_nan() || max.is_nan() || min > max {
                return Err(CorpusError::Invalid(format!(
                    "`{}.{}`: range min {min} exceeds max {max}",
                    raw.name, p.name
                )));
            }
        }
        parameters.push(ApiParameter {
            name: p.name.clone(),
            value_type: ty,
            range: p.range,
            units: p.units.clone(),
            description: p.description.clone(),
        });
    }
    let returns = match &raw.returns {
        Some(r) => Some(ApiReturn {
            value_type: value_type(&r.value_type)?,
            description: r.description.clone(),
        }),
        None => None,
    };
    Ok(ApiFunction {
        name: raw.name,
        description: raw.description,
        parameters,
        returns,
        role_hint: raw.role_hint,
    })
}

/// Retrieval unit: one function of one device.
#[derive(Debug, Clone, PartialEq)]
pub struct ApiChunk {
    pub function: ApiFunction,
    pub source_device: String,
    pub chunk_text: String,
}

/// Canonical retrieval text: `name. description. parameters: p1 (d1); p2 (d2)`.
/// The parameters clause is left out for functions without parameters.
pub fn chunk_text(function: &ApiFunction) -> String {
    let mut text = format!(
        "{}. {}",
        function.name,
        function.description.trim().trim_end_matches('.')
    );
    text.push('.');
    if !function.parameters.is_empty() {
        text.push_str(" parameters: ");
        for (i, p) in function.parameters.iter().enumerate() {
            if i > 0 {
                text.push_str("; ");
            }
            let _ = write!(text, "{} ({})", p.name, p.description.trim());
        }
    }
    text
}

pub fn chunk_profile(profile: &DeviceApiProfile) -> Vec<ApiChunk> {
    profile
        .functions
        .iter()
        .map(|f| ApiChunk {
            function: f.clone(),
            source_device: profile.device_id.clone(),
            chunk_text: chunk_text(f),
        })
        .collect()
}

/// Adopt `update` when its version is newer; otherwise keep `current`.
pub fn apply_profile_update(
    current: &DeviceApiProfile,
    update: &DeviceApiProfile,
) -> Result<DeviceApiProfile, CorpusError> {
    if current.device_id != update.device_id {
        return Err(CorpusError::IdentityMismatch {
            current: current.device_id.clone(),
            update: update.device_id.clone(),
        });
    }
    Ok(if update.version > current.version {
        update.clone()
    } else {
        current.clone()
    })
}

/// Shipped corpus files, compiled in so binaries run from any directory.
pub mod shipped {
    use super::{load_profile, DeviceApiProfile};

    pub const ROBOT_JSON: &str = include_str!("../../../corpora/robot.json");
    pub const WIFI_SDR_JSON: &str = include_str!("../../../corpora/wifi_sdr.json");
    pub const WIFI_COMMERCIAL_JSON: &str = include_str!("../../../corpora/wifi_commercial.json");

    pub fn robot() -> DeviceApiProfile {
        load_profile(ROBOT_JSON.as_bytes()).expect("shipped robot corpus is valid")
    }

    /// Robot profile whose `shelf_id` ranges are restricted to `[1, n_shelves]`.
    pub fn robot_for_warehouse(device_id: &str, n_shelves: u32) -> DeviceApiProfile {
        let mut profile = robot().with_device_id(device_id);
        for f in &mut profile.functions {
            for p in &mut f.parameters {
                if p.name == "shelf_id" {
                    p.range = Some([1.0, f64::from(n_shelves.max(1))]);
                }
            }
        }
        profile
    }

    pub fn wifi_sdr() -> DeviceApiProfile {
        load_profile(WIFI_SDR_JSON.as_bytes()).expect("shipped wifi_sdr corpus is valid")
    }

    pub fn wifi_commercial() -> DeviceApiProfile {
        load_profile(WIFI_COMMERCIAL_JSON.as_bytes())
            .expect("shipped wifi_commercial corpus is valid")
    }
}
