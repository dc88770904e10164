//! JSON configuration: defaults, unknown-key rejection and dotted overrides.
//!
//! Required keys are `M`, `K`, `steps`, `seed` and `rule`. Everything else
//! defaults to the values of [`SimConfig::new`]; `window` and `sample_every`
//! default to `N`.

use serde::de::DeserializeOwned;
use serde_json::{Map, Value};

use scm_core::harness::{Rule, SimConfig};

use crate::CliError;

pub const REQUIRED_KEYS: [&str; 5] = ["M", "K", "steps", "seed", "rule"];

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

pub fn parse_json(text: &str) -> Result<Value, CliError> {
    serde_json::from_str(text).map_err(|e| config_err(format!("malformed JSON: {e}")))
}

/// Deserializes `value`, prefixing errors with the path of the offending key.
pub fn deserialize_at<T: DeserializeOwned>(value: Value, context: &str) -> Result<T, CliError> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        match (context.is_empty(), path.as_str()) {
            (true, ".") => config_err(inner.to_string()),
            (true, p) => config_err(format!("{p}: {inner}")),
            (false, ".") => config_err(format!("{context}: {inner}")),
            (false, p) => config_err(format!("{context}.{p}: {inner}")),
        }
    })
}

/// Sets a dotted key path, e.g. `rule.dropout.p=0.25`. The value is parsed as
/// JSON and kept as a string if that fails. Missing or non-object
/// intermediate nodes are replaced by objects.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<(), CliError> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| config_err(format!("override `{assignment}` is not of the form key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    set_path(root, path, value)
}

pub fn set_path(root: &mut Value, path: &str, value: Value) -> Result<(), CliError> {
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(config_err(format!("invalid key path `{path}`")));
    }
    let mut node = root;
    for key in &keys[..keys.len() - 1] {
        if !node.is_object() {
            *node = Value::Object(Map::new());
        }
        node = node
            .as_object_mut()
            .expect("object")
            .entry(key.to_string())
            .or_insert_with(|| Value::Object(Map::new()));
    }
    if !node.is_object() {
        *node = Value::Object(Map::new());
    }
    node.as_object_mut().expect("object").insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

fn normalize_rule(obj: &mut Map<String, Value>) {
    if let Some(Value::String(s)) = obj.get("rule") {
        if s == "dropout" {
            obj.insert("rule".into(), serde_json::json!({ "dropout": {} }));
        }
    }
}

/// Builds a validated [`SimConfig`] from a JSON object.
pub fn sim_config_from_value(value: Value) -> Result<SimConfig, CliError> {
    let Value::Object(mut user) = value else {
        return Err(config_err("config must be a JSON object"));
    };
    normalize_rule(&mut user);
    let missing: Vec<&str> = REQUIRED_KEYS.iter().copied().filter(|k| !user.contains_key(*k)).collect();
    if !missing.is_empty() {
        return Err(config_err(format!("missing required keys {}", missing.join(", "))));
    }

    let mut defaults = SimConfig::new(1, 1, 0, 0, Rule::Sgd);
    if let Some(n) = user.get("N") {
        let n: usize = deserialize_at(n.clone(), "N")?;
        defaults = defaults.with_n(n);
    }
    let Value::Object(mut merged) = serde_json::to_value(&defaults).expect("config serializes") else {
        unreachable!("config serializes to an object");
    };
    let mut unknown: Vec<&String> = user.keys().filter(|k| !merged.contains_key(*k)).collect();
    unknown.sort();
    if let Some(k) = unknown.first() {
        return Err(config_err(format!("unknown key `{k}`")));
    }
    for (k, v) in user {
        merged.insert(k, v);
    }
    let cfg: SimConfig = deserialize_at(Value::Object(merged), "")?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config(text: &str) -> Result<SimConfig, CliError> {
    parse_config_with(text, &[])
}

/// Parses `text`, applies the overrides in order, then validates.
pub fn parse_config_with(text: &str, overrides: &[String]) -> Result<SimConfig, CliError> {
    let mut value = parse_json(text)?;
    for o in overrides {
        apply_override(&mut value, o)?;
    }
    sim_config_from_value(value)
}

/// Rejects keys of a command config outside `allowed`.
pub fn check_keys(obj: &Map<String, Value>, allowed: &[&str], context: &str) -> Result<(), CliError> {
    for k in obj.keys() {
        if !allowed.contains(&k.as_str()) {
            return Err(config_err(format!("unknown key `{k}` in {context} config")));
        }
    }
    Ok(())
}
