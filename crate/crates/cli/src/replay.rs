//! Bit-exact replay of a saved report.

use std::path::Path;

use serde_json::Value;

use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::run::{execute, RunReport};

/// Outcome of a replay: `None` when every numeric field matches, otherwise
/// the path of the first field that differs.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayOutcome {
    pub mismatch: Option<Mismatch>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mismatch {
    pub field: String,
    pub stored: String,
    pub replayed: String,
}

pub fn read_report(path: &Path) -> Result<Value, CliError> {
    let unreadable = |message: String| CliError::ReportUnreadable {
        path: path.display().to_string(),
        message,
    };
    let text = std::fs::read_to_string(path).map_err(|e| unreadable(e.to_string()))?;
    let value: Value = serde_json::from_str(&text).map_err(|e| unreadable(e.to_string()))?;
    // the stored report must at least have the shape of one
    serde_json::from_value::<RunReport>(value.clone()).map_err(|e| unreadable(e.to_string()))?;
    Ok(value)
}

/// Re-runs the echoed config and compares results and verdicts.
pub fn replay(stored: &Value) -> Result<ReplayOutcome, CliError> {
    let config = ExperimentConfig::from_json(stored["config"].clone())?;
    let outcome = execute(&config)?;
    let fresh = serde_json::json!({
        "version": env!("CARGO_PKG_VERSION"),
        "results": outcome.results,
        "verdicts": outcome.verdicts,
    });
    for key in ["version", "results", "verdicts"] {
        if let Some(m) = first_difference(key, &stored[key], &fresh[key]) {
            return Ok(ReplayOutcome { mismatch: Some(m) });
        }
    }
    Ok(ReplayOutcome { mismatch: None })
}

fn same_number(a: &serde_json::Number, b: &serde_json::Number) -> bool {
    match (a.as_f64(), b.as_f64()) {
        _ if a.is_f64() != b.is_f64() => false,
        (Some(x), Some(y)) if a.is_f64() => x.to_bits() == y.to_bits(),
        _ => a == b,
    }
}

/// Depth-first search for the first differing leaf.
pub fn first_difference(path: &str, a: &Value, b: &Value) -> Option<Mismatch> {
    let differ = || {
        Some(Mismatch {
            field: path.to_string(),
            stored: a.to_string(),
            replayed: b.to_string(),
        })
    };
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => (!same_number(x, y)).then(differ).flatten(),
        (Value::Array(x), Value::Array(y)) => {
            if x.len() != y.len() {
                return differ();
            }
            x.iter()
                .zip(y)
                .enumerate()
                .find_map(|(i, (u, v))| first_difference(&format!("{path}[{i}]"), u, v))
        }
        (Value::Object(x), Value::Object(y)) => {
            if x.len() != y.len() || x.keys().any(|k| !y.contains_key(k)) {
                return differ();
            }
            x.iter().find_map(|(k, u)| first_difference(&format!("{path}.{k}"), u, &y[k]))
        }
        _ => (a != b).then(differ).flatten(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn names_the_differing_leaf() {
        let a = json!({"rows": [{"ks": 0.25, "n": 10}]});
        let b = json!({"rows": [{"ks": 0.26, "n": 10}]});
        assert_eq!(first_difference("results", &a, &b).unwrap().field, "results.rows[0].ks");
        assert!(first_difference("results", &a, &a.clone()).is_none());
    }

    #[test]
    fn compares_floats_by_bits() {
        let a: Value = serde_json::from_str("{\"x\": 0.1}").unwrap();
        let b: Value = serde_json::from_str("{\"x\": 0.10000000000000002}").unwrap();
        assert!(first_difference("r", &a, &b).is_some());
        let c: Value = serde_json::from_str("{\"x\": 1.0}").unwrap();
        let d: Value = serde_json::from_str("{\"x\": 1}").unwrap();
        assert!(first_difference("r", &c, &d).is_some());
    }
}
