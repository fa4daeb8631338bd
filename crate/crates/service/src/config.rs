//! Service configuration: one TOML file holding the engine settings plus a
//! `[service]` table, with `STORYREEL_` environment overrides.
//!
//! An override names a config path with `__` between segments, so
//! `STORYREEL_RETRIEVAL__TAU_UPDATE=0.5` sets `retrieval.tau_update` and
//! `STORYREEL_SERVICE__BIND=0.0.0.0:9000` sets `service.bind`. Variables whose
//! first segment is not a top-level config key are ignored.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use storyreel_core::config::EngineConfig;
use thiserror::Error;
use toml::{Table, Value};

pub const ENV_PREFIX: &str = "STORYREEL_";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("config is not valid TOML: {0}")]
    Syntax(#[from] toml::de::Error),
    #[error("config is invalid: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceSection {
    pub bind: String,
    pub data_dir: PathBuf,
    /// Prompt template documents; defaults to `{data_dir}/templates`.
    pub templates_dir: Option<PathBuf>,
    /// Utility descriptor documents; defaults to `{data_dir}/utilities`.
    pub utilities_dir: Option<PathBuf>,
    /// Pin every timestamp to this value, for reproducible output trees.
    pub fixed_clock_ms: Option<u64>,
}

impl Default for ServiceSection {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
            data_dir: PathBuf::from("storyreel-data"),
            templates_dir: None,
            utilities_dir: None,
            fixed_clock_ms: None,
        }
    }
}

impl ServiceSection {
    pub fn templates_dir(&self) -> PathBuf {
        self.templates_dir.clone().unwrap_or_else(|| self.data_dir.join("templates"))
    }

    pub fn utilities_dir(&self) -> PathBuf {
        self.utilities_dir.clone().unwrap_or_else(|| self.data_dir.join("utilities"))
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ServiceConfig {
    pub engine: EngineConfig,
    pub service: ServiceSection,
}

impl ServiceConfig {
    /// Read `path` (if given) and apply overrides from the process
    /// environment.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|source| ConfigError::Read {
                path: p.to_path_buf(),
                source,
            })?,
            None => String::new(),
        };
        Self::from_parts(&text, std::env::vars())
    }

    /// Parse config text and apply the given `(name, value)` overrides.
    pub fn from_parts(text: &str, env: impl IntoIterator<Item = (String, String)>) -> Result<Self, ConfigError> {
        let mut table: Table = toml::from_str(text)?;
        let mut known = Table::try_from(EngineConfig::default()).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        known.insert("service".into(), Value::Table(Table::new()));

        let mut overrides: Vec<(String, String)> = env.into_iter().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
        overrides.sort();
        for (name, raw) in overrides {
            let path: Vec<String> = name[ENV_PREFIX.len()..]
                .split("__")
                .map(|s| s.to_ascii_lowercase())
                .collect();
            if path.iter().any(String::is_empty) || !known.contains_key(&path[0]) {
                continue;
            }
            let current = lookup(&table, &path).or_else(|| lookup(&known, &path));
            let value = match current {
                Some(Value::String(_)) => Value::String(raw),
                _ => parse_scalar(&raw),
            };
            set(&mut table, &path, value).map_err(|e| ConfigError::Invalid(format!("{name}: {e}")))?;
        }

        let service = match table.remove("service") {
            Some(v) => v.try_into().map_err(|e: toml::de::Error| ConfigError::Invalid(format!("[service] {}", e.message())))?,
            None => ServiceSection::default(),
        };
        let engine: EngineConfig = Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Invalid(e.message().to_string()))?;
        Ok(Self { engine, service })
    }
}

fn lookup<'a>(table: &'a Table, path: &[String]) -> Option<&'a Value> {
    let (last, parents) = path.split_last()?;
    let mut t = table;
    for p in parents {
        t = t.get(p)?.as_table()?;
    }
    t.get(last)
}

fn set(table: &mut Table, path: &[String], value: Value) -> Result<(), String> {
    let (last, parents) = path.split_last().expect("path is not empty");
    let mut t = table;
    for p in parents {
        t = t
            .entry(p.clone())
            .or_insert_with(|| Value::Table(Table::new()))
            .as_table_mut()
            .ok_or_else(|| format!("{p} is not a table"))?;
    }
    t.insert(last.clone(), value);
    Ok(())
}

/// A TOML scalar if `raw` parses as one, else the raw string.
fn parse_scalar(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}
