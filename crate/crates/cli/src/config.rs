//! TOML run configuration. Every command reads one optional section of the
//! file; flags always win over config values, and unknown keys are rejected
//! so typos surface as usage errors instead of silently applied defaults.

use std::cell::RefCell;
use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use crate::errors::{CliError, CliResult};

/// A loaded config file, or the empty config when none was given.
pub struct ConfigFile {
    root: toml::Table,
    label: String,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(Self {
                root: toml::Table::new(),
                label: "<none>".into(),
            });
        };
        let label = path.display().to_string();
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("config {label}: {e}")))?;
        let root: toml::Table = text
            .parse()
            .map_err(|e| CliError::Usage(format!("config {label}: {e}")))?;
        Ok(Self { root, label })
    }

    /// The `[name]` table, or an empty section when the file lacks one.
    pub fn section(&self, name: &str) -> CliResult<Section<'_>> {
        self.table_at(name, self.root.get(name))
    }

    /// The `[outer.inner]` table for nested commands.
    pub fn nested_section(&self, outer: &str, inner: &str) -> CliResult<Section<'_>> {
        let name = format!("{outer}.{inner}");
        let entry = match self.root.get(outer) {
            None => None,
            Some(toml::Value::Table(t)) => t.get(inner),
            Some(_) => {
                return Err(CliError::Usage(format!(
                    "config {}: [{outer}] must be a table",
                    self.label
                )))
            }
        };
        self.table_at(&name, entry)
    }

    fn table_at<'a>(&self, name: &str, entry: Option<&'a toml::Value>) -> CliResult<Section<'a>> {
        let table = match entry {
            None => None,
            Some(toml::Value::Table(t)) => Some(t),
            Some(_) => {
                return Err(CliError::Usage(format!(
                    "config {}: [{name}] must be a table",
                    self.label
                )))
            }
        };
        Ok(Section {
            label: self.label.clone(),
            name: name.to_string(),
            table,
            used: RefCell::new(BTreeSet::new()),
        })
    }

    /// Top-level `seed`, applied when neither the flag nor the section set one.
    pub fn top_seed(&self) -> CliResult<Option<u64>> {
        match self.root.get("seed") {
            None => Ok(None),
            Some(toml::Value::Integer(i)) if *i >= 0 => Ok(Some(*i as u64)),
            Some(_) => Err(CliError::Usage(format!(
                "config {}: seed must be a non-negative integer",
                self.label
            ))),
        }
    }
}

/// One command's config table with typed, tracked key access.
pub struct Section<'a> {
    label: String,
    name: String,
    table: Option<&'a toml::Table>,
    used: RefCell<BTreeSet<String>>,
}

impl Section<'_> {
    fn value(&self, key: &str) -> Option<&toml::Value> {
        self.used.borrow_mut().insert(key.to_string());
        self.table.and_then(|t| t.get(key))
    }

    fn type_err<T>(&self, key: &str, want: &str) -> CliResult<T> {
        Err(CliError::Usage(format!(
            "config {}: [{}].{key} must be {want}",
            self.label, self.name
        )))
    }

    pub fn u64(&self, key: &str) -> CliResult<Option<u64>> {
        match self.value(key) {
            None => Ok(None),
            Some(toml::Value::Integer(i)) if *i >= 0 => Ok(Some(*i as u64)),
            Some(_) => self.type_err(key, "a non-negative integer"),
        }
    }

    pub fn usize(&self, key: &str) -> CliResult<Option<usize>> {
        Ok(self.u64(key)?.map(|v| v as usize))
    }

    pub fn u32(&self, key: &str) -> CliResult<Option<u32>> {
        match self.u64(key)? {
            None => Ok(None),
            Some(v) if v <= u32::MAX as u64 => Ok(Some(v as u32)),
            Some(_) => self.type_err(key, "a 32-bit integer"),
        }
    }

    pub fn u8(&self, key: &str) -> CliResult<Option<u8>> {
        match self.u64(key)? {
            None => Ok(None),
            Some(v) if v <= u8::MAX as u64 => Ok(Some(v as u8)),
            Some(_) => self.type_err(key, "a small integer"),
        }
    }

    pub fn f64(&self, key: &str) -> CliResult<Option<f64>> {
        match self.value(key) {
            None => Ok(None),
            Some(toml::Value::Float(v)) => Ok(Some(*v)),
            Some(toml::Value::Integer(i)) => Ok(Some(*i as f64)),
            Some(_) => self.type_err(key, "a number"),
        }
    }

    pub fn bool(&self, key: &str) -> CliResult<Option<bool>> {
        match self.value(key) {
            None => Ok(None),
            Some(toml::Value::Boolean(b)) => Ok(Some(*b)),
            Some(_) => self.type_err(key, "a boolean"),
        }
    }

    pub fn string(&self, key: &str) -> CliResult<Option<String>> {
        match self.value(key) {
            None => Ok(None),
            Some(toml::Value::String(s)) => Ok(Some(s.clone())),
            Some(_) => self.type_err(key, "a string"),
        }
    }

    pub fn path(&self, key: &str) -> CliResult<Option<PathBuf>> {
        Ok(self.string(key)?.map(PathBuf::from))
    }

    pub fn strings(&self, key: &str) -> CliResult<Option<Vec<String>>> {
        match self.value(key) {
            None => Ok(None),
            Some(toml::Value::Array(items)) => {
                let mut out = Vec::with_capacity(items.len());
                for item in items {
                    match item {
                        toml::Value::String(s) => out.push(s.clone()),
                        _ => return self.type_err(key, "an array of strings"),
                    }
                }
                Ok(Some(out))
            }
            Some(_) => self.type_err(key, "an array of strings"),
        }
    }

    /// Rejects keys the command never read. Call after all lookups.
    pub fn deny_unknown(&self) -> CliResult<()> {
        let Some(table) = self.table else {
            return Ok(());
        };
        let used = self.used.borrow();
        for key in table.keys() {
            if !used.contains(key) && key != "seed" {
                return Err(CliError::Usage(format!(
                    "config {}: unknown key [{}].{key}",
                    self.label, self.name
                )));
            }
        }
        Ok(())
    }

    /// Section-local seed override.
    pub fn seed(&self) -> CliResult<Option<u64>> {
        self.u64("seed")
    }
}

/// Seed resolution: flag, then section, then top level, then the default.
pub fn resolve_seed(
    flag: Option<u64>,
    section: &Section<'_>,
    file: &ConfigFile,
    default: u64,
) -> CliResult<u64> {
    Ok(flag
        .or(section.seed()?)
        .or(file.top_seed()?)
        .unwrap_or(default))
}

/// Parses a clap value enum from a config string, accepting both kebab-case
/// and snake_case spellings.
pub fn parse_enum<T: clap::ValueEnum>(section: &Section<'_>, key: &str) -> CliResult<Option<T>> {
    let Some(s) = section.string(key)? else {
        return Ok(None);
    };
    T::from_str(&s.replace('_', "-"), true)
        .map(Some)
        .map_err(|_| {
            CliError::Usage(format!(
                "config [{}].{key}: unknown value {s:?}",
                section.name
            ))
        })
}
