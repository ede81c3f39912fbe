use std::io::Write;
use std::path::Path;

use serde_json::Value;

use crate::CliError;

/// Writes `value` as pretty JSON to `path`, atomically.
pub fn write_json(path: &Path, value: &Value) -> Result<(), CliError> {
    tokforge::io::write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        w.write_all(b"\n")?;
        Ok(())
    })?;
    Ok(())
}

/// Saves the report if asked to and prints it, as JSON or as `key: value`
/// lines.
pub fn emit(report: &Value, json: bool, path: Option<&Path>) -> Result<(), CliError> {
    if let Some(p) = path {
        write_json(p, report)?;
    }
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let res = if json {
        serde_json::to_writer_pretty(&mut out, report)
            .map_err(std::io::Error::from)
            .and_then(|_| writeln!(out))
    } else {
        let mut lines = Vec::new();
        flatten("", report, &mut lines);
        lines.iter().try_for_each(|l| writeln!(out, "{l}"))
    };
    res.map_err(|source| CliError::Io {
        context: "writing to stdout".into(),
        source,
    })
}

const MAX_LISTED: usize = 20;

fn flatten(prefix: &str, v: &Value, lines: &mut Vec<String>) {
    match v {
        Value::Object(map) => {
            for (k, v) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, v, lines);
            }
        }
        Value::Array(items) if items.iter().all(|i| !i.is_object() && !i.is_array()) => {
            let shown: Vec<String> = items.iter().take(MAX_LISTED).map(scalar).collect();
            let more = if items.len() > MAX_LISTED {
                format!(" ... ({} more)", items.len() - MAX_LISTED)
            } else {
                String::new()
            };
            lines.push(format!("{prefix}: [{}]{more}", shown.join(", ")));
        }
        Value::Array(items) => {
            lines.push(format!("{prefix}: {} entries", items.len()));
        }
        _ => lines.push(format!("{prefix}: {}", scalar(v))),
    }
}

fn scalar(v: &Value) -> String {
    match v {
        Value::String(s) => format!("{s:?}"),
        Value::Null => "-".into(),
        other => other.to_string(),
    }
}
