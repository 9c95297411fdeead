//! JSON files and canonical serialization.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Serialize, Serializer};
use serde_json::Value;
use sha2::{Digest, Sha256};
use syncfin_core::scenario::ConfigError;
use syncfin_core::ScenarioConfig;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {source}", path.display())]
    Parse { path: PathBuf, source: serde_json::Error },
    #[error("config error: {0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Worlds(#[from] syncfin_core::worlds::WorldError),
    #[error("{0}")]
    Sim(#[from] syncfin_core::sim::SimError),
    #[error("{0}")]
    Forensic(#[from] syncfin_core::forensics::ForensicError),
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.into(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| CliError::Parse {
        path: path.into(),
        source,
    })
}

/// Pretty JSON with sorted keys, newline-terminated.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| CliError::Io {
            path: dir.into(),
            source,
        })?;
    }
    let mut text = to_pretty(value);
    text.push('\n');
    fs::write(path, text).map_err(|source| CliError::Io {
        path: path.into(),
        source,
    })
}

pub fn to_pretty<T: Serialize>(value: &T) -> String {
    let v = serde_json::to_value(value).expect("serializable");
    serde_json::to_string_pretty(&Canonical(&v)).expect("serializable")
}

/// Compact JSON with object keys sorted at every level.
pub fn canonical_json<T: Serialize>(value: &T) -> Vec<u8> {
    let v = serde_json::to_value(value).expect("serializable");
    serde_json::to_vec(&Canonical(&v)).expect("serializable")
}

/// Lowercase hex SHA-256 of the canonical JSON.
pub fn digest<T: Serialize>(value: &T) -> String {
    hex::encode(Sha256::digest(canonical_json(value)))
}

struct Canonical<'a>(&'a Value);

impl Serialize for Canonical<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self.0 {
            Value::Object(map) => {
                let sorted: BTreeMap<&String, Canonical<'_>> = map.iter().map(|(k, v)| (k, Canonical(v))).collect();
                sorted.serialize(s)
            }
            Value::Array(items) => s.collect_seq(items.iter().map(Canonical)),
            other => other.serialize(s),
        }
    }
}

/// Loads and validates a scenario; `seed` overrides the file's seed.
/// Without a path the default scenario is used.
pub fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<ScenarioConfig, CliError> {
    let mut cfg: ScenarioConfig = match path {
        Some(p) => read_json(p)?,
        None => ScenarioConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_sorts_nested_keys() {
        let v: Value = serde_json::from_str(r#"{"b": {"z": 1, "a": [ {"y": 2, "x": 3} ]}, "a": 0}"#).unwrap();
        assert_eq!(
            String::from_utf8(canonical_json(&v)).unwrap(),
            r#"{"a":0,"b":{"a":[{"x":3,"y":2}],"z":1}}"#
        );
    }

    #[test]
    fn digest_matches_sha256_of_canonical_bytes() {
        assert_eq!(
            digest(&serde_json::json!({"k": 1, "a": [1, 2]})),
            "da0e01f6fa603b13b2686551fcde6ec9902b80d6b9da391f4f53ef1cd64b821c"
        );
    }
}
