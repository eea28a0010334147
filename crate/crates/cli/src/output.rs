//! Number formatting and run manifests shared by the subcommands.

use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::Value;

pub const SCHEMA_VERSION: &str = "bkk-cli/1";

/// JSON with every float written to 17 significant digits.
pub fn to_json(v: &impl Serialize) -> String {
    let value = serde_json::to_value(v).expect("serializable output");
    let mut out = String::new();
    write_value(&value, 0, &mut out);
    out.push('\n');
    out
}

fn write_value(v: &Value, indent: usize, out: &mut String) {
    let pad = |n: usize| "  ".repeat(n);
    match v {
        Value::Number(n) if n.is_f64() => out.push_str(&json_float(n.as_f64().unwrap_or(f64::NAN))),
        Value::Array(items) if !items.is_empty() => {
            out.push_str("[\n");
            for (i, item) in items.iter().enumerate() {
                out.push_str(&pad(indent + 1));
                write_value(item, indent + 1, out);
                out.push_str(if i + 1 < items.len() { ",\n" } else { "\n" });
            }
            out.push_str(&pad(indent));
            out.push(']');
        }
        Value::Object(map) if !map.is_empty() => {
            out.push_str("{\n");
            for (i, (k, item)) in map.iter().enumerate() {
                out.push_str(&pad(indent + 1));
                out.push_str(&Value::String(k.clone()).to_string());
                out.push_str(": ");
                write_value(item, indent + 1, out);
                out.push_str(if i + 1 < map.len() { ",\n" } else { "\n" });
            }
            out.push_str(&pad(indent));
            out.push('}');
        }
        other => out.push_str(&other.to_string()),
    }
}

pub fn json_float(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        "null".into()
    }
}

/// Six significant digits.
pub fn human(v: f64) -> String {
    if !v.is_finite() {
        return format!("{v}");
    }
    let mag = if v == 0.0 { 0 } else { v.abs().log10().floor() as i32 };
    if (-4..6).contains(&mag) {
        format!("{:.*}", (5 - mag).max(0) as usize, v)
    } else {
        format!("{v:.5e}")
    }
}

fn now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

/// What ran, with which settings, when.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub schema_version: &'static str,
    pub command: String,
    pub config: Value,
    pub code_version: &'static str,
    pub seeds: Vec<u64>,
    pub threads: Option<usize>,
    /// Unix seconds.
    pub started_at: f64,
    pub finished_at: Option<f64>,
}

impl RunManifest {
    pub fn start(command: &str, config: &impl Serialize, seeds: Vec<u64>, threads: Option<usize>) -> RunManifest {
        RunManifest {
            schema_version: SCHEMA_VERSION,
            command: command.into(),
            config: serde_json::to_value(config).expect("serializable config"),
            code_version: env!("CARGO_PKG_VERSION"),
            seeds,
            threads,
            started_at: now(),
            finished_at: None,
        }
    }

    pub fn finish(mut self) -> RunManifest {
        self.finished_at = Some(now());
        self
    }
}
