//! Shared helpers for the CLI integration tests: running the binary,
//! fixture files, and a minimal structural JSON schema checker.
#![allow(dead_code)] // each test target uses a different subset

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

pub fn mfpg() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mfpg"))
}

pub fn run(args: &[&str]) -> Output {
    mfpg().args(args).output().expect("binary runs")
}

pub fn stdout_json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "command failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

pub fn schema(name: &str) -> Value {
    let path = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../schemas")
        .join(name);
    let text = std::fs::read_to_string(&path)
        .unwrap_or_else(|e| panic!("schema {}: {e}", path.display()));
    serde_json::from_str(&text).expect("schema is JSON")
}

pub fn assert_schema(name: &str, value: &Value) {
    if let Err(msg) = check(&schema(name), value, "$") {
        panic!("{name}: {msg}");
    }
}

fn type_ok(t: &str, v: &Value) -> bool {
    match t {
        "object" => v.is_object(),
        "array" => v.is_array(),
        "number" => v.is_number(),
        "integer" => v.is_i64() || v.is_u64(),
        "string" => v.is_string(),
        "boolean" => v.is_boolean(),
        "null" => v.is_null(),
        _ => false,
    }
}

fn check(schema: &Value, value: &Value, at: &str) -> Result<(), String> {
    match schema.get("type") {
        Some(Value::String(t)) if !type_ok(t, value) => {
            return Err(format!("{at}: expected {t}, got {value}"));
        }
        Some(Value::Array(opts)) => {
            let ok = opts
                .iter()
                .filter_map(Value::as_str)
                .any(|t| type_ok(t, value));
            if !ok {
                return Err(format!("{at}: expected one of {opts:?}, got {value}"));
            }
        }
        _ => {}
    }
    if let Some(obj) = value.as_object() {
        let props = schema.get("properties").and_then(Value::as_object);
        if let Some(required) = schema.get("required").and_then(Value::as_array) {
            for key in required.iter().filter_map(Value::as_str) {
                if !obj.contains_key(key) {
                    return Err(format!("{at}: missing required key {key}"));
                }
            }
        }
        if schema.get("additionalProperties") == Some(&Value::Bool(false)) {
            for key in obj.keys() {
                if !props.is_some_and(|p| p.contains_key(key)) {
                    return Err(format!("{at}: unexpected key {key}"));
                }
            }
        }
        if let Some(props) = props {
            for (key, sub) in props {
                if let Some(v) = obj.get(key) {
                    check(sub, v, &format!("{at}.{key}"))?;
                }
            }
        }
    }
    if let (Some(items), Some(arr)) = (schema.get("items"), value.as_array()) {
        for (i, v) in arr.iter().enumerate() {
            check(items, v, &format!("{at}[{i}]"))?;
        }
    }
    Ok(())
}

pub const MDP_JSON: &str = r#"{
  "n_states": 2,
  "n_actions": 2,
  "gamma": 0.9,
  "transition": [[[0.8, 0.2], [0.3, 0.7]], [[0.5, 0.5], [0.9, 0.1]]],
  "reward": [[1.0, 0.0], [0.2, 0.8]],
  "mu_weights": [0.5, 0.5],
  "rho": [0.6, 0.4]
}"#;

/// Writes an MDP plus a small flow config into `dir` and returns the config path.
pub fn small_fixture(dir: &Path) -> PathBuf {
    std::fs::write(dir.join("mdp.json"), MDP_JSON).unwrap();
    let config = r#"{
  "mdp": "mdp.json",
  "feature": {"kind": "one_hidden", "hidden_dim": 3, "scale_cap": 1.0, "seed": 7},
  "flow": {"tau": 0.2, "sigma": 0.5, "eta": 0.001, "m": 12, "steps": 20, "seed": 11, "record_every": 5},
  "prior": {"sigma": 1.0}
}"#;
    let path = dir.join("config.json");
    std::fs::write(&path, config).unwrap();
    path
}
