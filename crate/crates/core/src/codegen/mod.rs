//! Two-step code generation: pull argument values out of the subtask sentence,
//! then combine them with the matched function into a [`CallPlan`] that is
//! rendered into the five-state FSM template.
//!
//! Nothing here is ever compiled or evaluated. The rendered program is a
//! human-readable artifact; execution goes through [`CallPlan::typed_args`] and
//! the device's dispatch table.

mod extract;
pub mod numbers;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{ApiFunction, ValueType};

pub use extract::ReferenceExtractor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CodegenError {
    #[error("`{function}` takes {expected} argument(s), found {found} in the subtask")]
    Arity {
        function: String,
        expected: usize,
        found: usize,
    },
    #[error("parameter `{parameter}`: `{value}` is not a valid {expected:?}")]
    Type {
        parameter: String,
        value: String,
        expected: ValueType,
    },
    #[error("parameter `{parameter}`: {value} outside [{min}, {max}]")]
    Range {
        parameter: String,
        value: f64,
        min: f64,
        max: f64,
    },
    #[error("argument `{found}` does not match parameter `{expected}`")]
    Binding { expected: String, found: String },
    #[error("template: {0}")]
    Template(String),
    #[error("extractor provider: {0}")]
    Provider(String),
}

/// One natural-language instruction for one device.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubtaskSpec {
    pub subtask_id: u64,
    pub device_id: String,
    pub text: String,
    pub issued_round: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ArgumentSet {
    pub bindings: Vec<(String, String)>,
}

impl ArgumentSet {
    pub fn values(&self) -> impl Iterator<Item = &str> {
        self.bindings.iter().map(|(_, v)| v.as_str())
    }
}

/// A typed argument as handed to a device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ArgValue {
    Integer(i64),
    Decimal(f64),
    Boolean(bool),
    Text(String),
}

impl ArgValue {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            ArgValue::Integer(i) => Some(*i as f64),
            ArgValue::Decimal(d) => Some(*d),
            _ => None,
        }
    }

    pub fn as_i64(&self) -> Option<i64> {
        match self {
            ArgValue::Integer(i) => Some(*i),
            ArgValue::Decimal(d) if d.fract() == 0.0 => Some(*d as i64),
            _ => None,
        }
    }
}

impl fmt::Display for ArgValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ArgValue::Integer(i) => write!(f, "{i}"),
            ArgValue::Decimal(d) => write!(f, "{d}"),
            ArgValue::Boolean(b) => write!(f, "{b}"),
            ArgValue::Text(s) => write!(f, "{s}"),
        }
    }
}

/// Parse a canonical value string under a declared type.
pub fn parse_value(raw: &str, ty: ValueType) -> Option<ArgValue> {
    match ty {
        ValueType::Integer => raw.parse::<i64>().ok().map(ArgValue::Integer),
        ValueType::Decimal => raw
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .map(ArgValue::Decimal),
        ValueType::Boolean => match raw {
            "true" => Some(ArgValue::Boolean(true)),
            "false" => Some(ArgValue::Boolean(false)),
            _ => None,
        },
        ValueType::String => Some(ArgValue::Text(raw.to_string())),
    }
}

/// Canonical form of a raw extracted value for a given type: number words and
/// literals become digits ("twenty-six" -> "26"), booleans become true/false.
pub fn canonicalize_value(raw: &str, ty: ValueType) -> Option<String> {
    let trimmed = raw.trim().trim_end_matches('.');
    match ty {
        ValueType::Integer | ValueType::Decimal => {
            let canonical = numbers::canonical_literal(trimmed).or_else(|| {
                let lower = trimmed.to_lowercase();
                let words: Vec<&str> = lower.split_whitespace().collect();
                match numbers::parse_number_words(&words) {
                    Some((v, used)) if used == words.len() => Some(v),
                    _ => None,
                }
            })?;
            parse_value(&canonical, ty).map(|_| canonical)
        }
        ValueType::Boolean => match trimmed.to_lowercase().as_str() {
            "true" | "on" | "yes" | "enable" | "enabled" => Some("true".into()),
            "false" | "off" | "no" | "disable" | "disabled" => Some("false".into()),
            _ => None,
        },
        ValueType::String => Some(raw.to_string()),
    }
}

/// Produces one raw value per parameter, in declaration order.
pub trait ArgumentExtractor: Send + Sync {
    fn name(&self) -> &str;
    fn extract_values(&self, text: &str, function: &ApiFunction) -> Result<Vec<String>, CodegenError>;
}

pub fn extract_arguments(
    text: &str,
    function: &ApiFunction,
    extractor: &dyn ArgumentExtractor,
) -> Result<ArgumentSet, CodegenError> {
    let raw = extractor.extract_values(text, function)?;
    if raw.len() != function.parameters.len() {
        return Err(CodegenError::Arity {
            function: function.name.clone(),
            expected: function.parameters.len(),
            found: raw.len(),
        });
    }
    let bindings = function
        .parameters
        .iter()
        .zip(raw)
        .map(|(p, v)| {
            canonicalize_value(&v, p.value_type)
                .map(|c| (p.name.clone(), c))
                .ok_or(CodegenError::Type {
                    parameter: p.name.clone(),
                    value: v,
                    expected: p.value_type,
                })
        })
        .collect::<Result<_, _>>()?;
    Ok(ArgumentSet { bindings })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CallPlan {
    pub function: ApiFunction,
    pub args: ArgumentSet,
    pub rendered_call: String,
}

impl CallPlan {
    /// Arguments parsed under their declared types, in parameter order.
    pub fn typed_args(&self) -> Vec<ArgValue> {
        self.function
            .parameters
            .iter()
            .zip(self.args.values())
            .map(|(p, v)| parse_value(v, p.value_type).expect("validated by compose_call"))
            .collect()
    }
}

/// Validate `args` against `function` and render `name(v1, v2, ...)`.
pub fn compose_call(function: &ApiFunction, args: &ArgumentSet) -> Result<CallPlan, CodegenError> {
    if args.bindings.len() != function.parameters.len() {
        return Err(CodegenError::Arity {
            function: function.name.clone(),
            expected: function.parameters.len(),
            found: args.bindings.len(),
        });
    }
    for (p, (name, value)) in function.parameters.iter().zip(&args.bindings) {
        if &p.name != name {
            return Err(CodegenError::Binding {
                expected: p.name.clone(),
                found: name.clone(),
            });
        }
        let typed = parse_value(value, p.value_type).ok_or_else(|| CodegenError::Type {
            parameter: p.name.clone(),
            value: value.clone(),
            expected: p.value_type,
        })?;
        if let (Some([min, max]), Some(v)) = (p.range, typed.as_f64()) {
            if v < min || v > max {
                return Err(CodegenError::Range {
                    parameter: p.name.clone(),
                    value: v,
                    min,
                    max,
                });
            }
        }
    }
    let rendered_call = format!(
        "{}({})",
        function.name,
        args.values().collect::<Vec<_>>().join(", ")
    );
    Ok(CallPlan {
        function: function.clone(),
        args: args.clone(),
        rendered_call,
    })
}

pub const CALL_SITE: &str = "{{CALL_SITE}}";

pub const DEFAULT_TEMPLATE: &str = include_str!("../../../../templates/five_state_fsm.txt");

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeTemplate {
    template_text: String,
}

impl CodeTemplate {
    pub fn new(template_text: impl Into<String>) -> Result<Self, CodegenError> {
        let template_text = template_text.into();
        match template_text.matches(CALL_SITE).count() {
            1 => Ok(CodeTemplate { template_text }),
            n => Err(CodegenError::Template(format!(
                "expected exactly one {CALL_SITE} placeholder, found {n}"
            ))),
        }
    }

    pub fn text(&self) -> &str {
        &self.template_text
    }
}

impl Default for CodeTemplate {
    fn default() -> Self {
        CodeTemplate::new(DEFAULT_TEMPLATE).expect("shipped template has one placeholder")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedProgram {
    pub text: String,
    pub call_plan: CallPlan,
}

pub fn render_program(template: &CodeTemplate, plan: &CallPlan) -> Result<RenderedProgram, CodegenError> {
    // Re-checked here so templates built by hand through Default still hold.
    let template = CodeTemplate::new(template.text())?;
    if template.text().contains(&plan.rendered_call) {
        return Err(CodegenError::Template(format!(
            "template already contains `{}`",
            plan.rendered_call
        )));
    }
    let text = template.text().replacen(CALL_SITE, &plan.rendered_call, 1);
    Ok(RenderedProgram {
        text,
        call_plan: plan.clone(),
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::corpus::{shipped, ApiParameter, RoleHint};

    pub(crate) fn function(name: &str, params: &[(&str, ValueType)]) -> ApiFunction {
        ApiFunction {
            name: name.into(),
            description: "test function".into(),
            parameters: params
                .iter()
                .map(|(n, t)| ApiParameter {
                    name: (*n).into(),
                    value_type: *t,
                    range: None,
                    units: None,
                    description: String::new(),
                })
                .collect(),
            returns: None,
            role_hint: RoleHint::Normal,
        }
    }

    #[test]
    fn tweak_example() {
        let f = function("tweak", &[("ABC-param", ValueType::Integer)]);
        let args = extract_arguments("Tweak the device's ABC parameter to twenty-six.", &f, &ReferenceExtractor).unwrap();
        assert_eq!(args.bindings, vec![("ABC-param".to_string(), "26".to_string())]);
    }

    #[test]
    fn move_to_shelf_one() {
        let robot = shipped::robot();
        let f = robot.function("move_to_shelf").unwrap();
        let args = extract_arguments("Move to shelf one", f, &ReferenceExtractor).unwrap();
        assert_eq!(args.bindings, vec![("shelf_id".to_string(), "1".to_string())]);
        let plan = compose_call(f, &args).unwrap();
        assert_eq!(plan.rendered_call, "move_to_shelf(1)");
        assert_eq!(plan.typed_args(), vec![ArgValue::Integer(1)]);
    }

    #[test]
    fn words_and_digits_canonicalize_identically() {
        let f = function("tweak", &[("ABC", ValueType::Decimal)]);
        let a = extract_arguments("Set ABC to twenty-six.", &f, &ReferenceExtractor).unwrap();
        let b = extract_arguments("Set ABC to 26.", &f, &ReferenceExtractor).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn arity_mismatch_is_reported() {
        let robot = shipped::robot();
        let f = robot.function("capture_image").unwrap();
        assert_eq!(
            extract_arguments("qwzx flrm", f, &ReferenceExtractor),
            Err(CodegenError::Arity { function: "capture_image".into(), expected: 1, found: 0 })
        );
    }

    #[test]
    fn integer_parameter_rejects_fraction() {
        let f = function("f", &[("n", ValueType::Integer)]);
        assert!(matches!(
            extract_arguments("set n to two point five", &f, &ReferenceExtractor),
            Err(CodegenError::Type { .. })
        ));
    }

    #[test]
    fn compose_examples() {
        let sdr = shipped::wifi_sdr();
        let aps = sdr.function("get_known_aps").unwrap();
        assert_eq!(compose_call(aps, &ArgumentSet::default()).unwrap().rendered_call, "get_known_aps()");

        let cw = sdr.function("set_contention_window").unwrap();
        let args = ArgumentSet {
            bindings: vec![("log_cw_min".into(), "2".into()), ("log_cw_max".into(), "4".into())],
        };
        assert_eq!(compose_call(cw, &args).unwrap().rendered_call, "set_contention_window(2, 4)");
        let text = "Set the contention window to log CW min two and log CW max four.";
        assert_eq!(extract_arguments(text, cw, &ReferenceExtractor).unwrap(), args);
    }

    #[test]
    fn compose_rejects_out_of_range_and_arity() {
        let f = shipped::robot_for_warehouse("robot-1", 3);
        let mv = f.function("move_to_shelf").unwrap();
        let args = ArgumentSet { bindings: vec![("shelf_id".into(), "4".into())] };
        assert!(matches!(
            compose_call(mv, &args),
            Err(CodegenError::Range { parameter, .. }) if parameter == "shelf_id"
        ));
        assert!(matches!(
            compose_call(mv, &ArgumentSet::default()),
            Err(CodegenError::Arity { .. })
        ));
    }

    #[test]
    fn render_substitutes_once() {
        let robot = shipped::robot();
        let plan = compose_call(
            robot.function("move_to_shelf").unwrap(),
            &ArgumentSet { bindings: vec![("shelf_id".into(), "1".into())] },
        )
        .unwrap();
        let template = CodeTemplate::default();
        let a = render_program(&template, &plan).unwrap();
        assert_eq!(a.text.matches("move_to_shelf(1)").count(), 1);
        assert!(!a.text.contains(CALL_SITE));
        assert_eq!(a, render_program(&template, &plan).unwrap());
    }

    #[test]
    fn template_placeholder_count_enforced() {
        assert!(matches!(CodeTemplate::new("no placeholder"), Err(CodegenError::Template(_))));
        assert!(matches!(
            CodeTemplate::new("{{CALL_SITE}} {{CALL_SITE}}"),
            Err(CodegenError::Template(_))
        ));
    }
}
