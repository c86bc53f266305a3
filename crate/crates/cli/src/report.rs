//! The JSON run report every command emits: the resolved config and its
//! digest, counts, timings, and the outcome of each invariant check.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::errors::{CliError, CliResult};

/// One invariant verdict.
#[derive(Debug, Clone, Serialize)]
pub struct InvariantCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Machine-readable summary of one command run. Serialized pretty to stdout
/// unless `--report` redirects it to a file.
#[derive(Debug, Serialize)]
pub struct RunReport {
    pub command: String,
    /// The fully resolved configuration the run actually used.
    pub config: serde_json::Value,
    /// SHA-256 of the canonical JSON form of `config`.
    pub config_sha256: String,
    pub seed: u64,
    pub counts: BTreeMap<String, u64>,
    pub values: BTreeMap<String, f64>,
    pub timings_ms: BTreeMap<String, f64>,
    pub invariants: Vec<InvariantCheck>,
    pub outputs: Vec<String>,
    #[serde(skip_serializing_if = "serde_json::Map::is_empty")]
    pub extra: serde_json::Map<String, serde_json::Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl RunReport {
    pub fn new(command: &str, seed: u64, config: serde_json::Value) -> Self {
        // serde_json maps are sorted by key, so the serialized echo is a
        // canonical form and its digest is stable across runs.
        let canonical = config.to_string();
        let config_sha256 = format!("{:x}", Sha256::digest(canonical.as_bytes()));
        Self {
            command: command.to_string(),
            config,
            config_sha256,
            seed,
            counts: BTreeMap::new(),
            values: BTreeMap::new(),
            timings_ms: BTreeMap::new(),
            invariants: Vec::new(),
            outputs: Vec::new(),
            extra: serde_json::Map::new(),
            error: None,
        }
    }

    /// A bare failure report for errors that stop a run before it can
    /// produce a full one.
    pub fn failure(command: &str, message: &str) -> Self {
        let mut report = Self::new(command, 0, serde_json::Value::Null);
        report.error = Some(message.to_string());
        report
    }

    pub fn count(&mut self, name: &str, n: u64) {
        self.counts.insert(name.to_string(), n);
    }

    pub fn value(&mut self, name: &str, v: f64) {
        self.values.insert(name.to_string(), v);
    }

    pub fn timing(&mut self, name: &str, since: Instant) {
        self.timings_ms
            .insert(name.to_string(), since.elapsed().as_secs_f64() * 1e3);
    }

    pub fn check(&mut self, name: &str, passed: bool, detail: impl Into<String>) {
        self.invariants.push(InvariantCheck {
            name: name.to_string(),
            passed,
            detail: detail.into(),
        });
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    pub fn extra(&mut self, name: &str, value: serde_json::Value) {
        self.extra.insert(name.to_string(), value);
    }

    /// True when no invariant failed and no error was recorded.
    pub fn passed(&self) -> bool {
        self.error.is_none() && self.invariants.iter().all(|c| c.passed)
    }

    /// Writes the report to the given file, or to stdout when none is set.
    pub fn emit(&self, to: Option<&Path>) -> CliResult<()> {
        let mut text = serde_json::to_string_pretty(self)
            .map_err(|e| CliError::Run(format!("report serialization: {e}")))?;
        text.push('\n');
        match to {
            Some(path) => std::fs::write(path, text)
                .map_err(|e| CliError::Run(format!("report {}: {e}", path.display()))),
            None => {
                print!("{text}");
                Ok(())
            }
        }
    }
}
