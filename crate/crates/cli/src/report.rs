//! Versioned JSON report and atomic file output.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::Serialize;
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::error::CliError;

pub const SCHEMA: &str = "gradiform/1";

/// Result of one command. Non-finite numbers serialize as `null`.
#[derive(Debug, Clone)]
pub struct Report {
    pub command: String,
    pub config: RunConfig,
    pub results: Value,
    /// Wall-clock seconds per phase; excluded from determinism comparisons.
    pub timings: BTreeMap<String, f64>,
}

impl Report {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        Self {
            command: command.to_string(),
            config: config.clone(),
            results: Value::Null,
            timings: BTreeMap::new(),
        }
    }

    /// Everything except the timing block.
    pub fn body(&self) -> Value {
        json!({
            "schema": SCHEMA,
            "tool_version": env!("CARGO_PKG_VERSION"),
            "command": self.command,
            "config": self.config,
            "results": self.results,
        })
    }

    pub fn to_value(&self) -> Value {
        let mut v = self.body();
        v["timings"] = json!(self.timings);
        v
    }

    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.to_value()).expect("report values serialize");
        s.push('\n');
        s
    }
}

pub fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report values serialize")
}

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| CliError::Io(e.error))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn body_excludes_timings() {
        let mut r = Report::new("classify", &RunConfig::default());
        r.results = json!({"x": f64::NAN});
        r.timings.insert("total".into(), 1.5);
        assert!(r.body().get("timings").is_none());
        let v = r.to_value();
        assert_eq!(v["schema"], SCHEMA);
        assert_eq!(v["timings"]["total"], 1.5);
        assert!(v["results"]["x"].is_null());
    }

    #[test]
    fn atomic_write_replaces_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub/report.json");
        write_atomic(&path, b"one").unwrap();
        write_atomic(&path, b"two").unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "two");
        assert_eq!(std::fs::read_dir(path.parent().unwrap()).unwrap().count(), 1);
    }
}
