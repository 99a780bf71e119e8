//! Flat `key = value` config files.
//!
//! Values are typed by the field they set: a config struct is serialized to a
//! JSON object, each key is checked against it, and the result is
//! deserialized back. Unknown keys are rejected. Blank lines and `#`
//! comments are ignored.

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{origin}:{line}: expected `key = value`, found `{text}`")]
    Syntax { origin: String, line: usize, text: String },
    #[error("unknown config key `{key}` ({origin})")]
    UnknownKey { key: String, origin: String },
    #[error("invalid value `{value}` for `{key}`: expected {expected}")]
    Type { key: String, value: String, expected: String },
}

/// One assignment with where it came from, for error messages.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    pub key: String,
    pub value: String,
    pub origin: String,
}

impl Assignment {
    pub fn new(key: impl Into<String>, value: impl Into<String>, origin: impl Into<String>) -> Self {
        Self {
            key: key.into(),
            value: value.into(),
            origin: origin.into(),
        }
    }
}

pub fn parse_assignments(text: &str, origin: &str) -> Result<Vec<Assignment>, ConfigError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(ConfigError::Syntax {
                origin: origin.to_string(),
                line: i + 1,
                text: raw.trim().to_string(),
            });
        };
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(ConfigError::Syntax {
                origin: origin.to_string(),
                line: i + 1,
                text: raw.trim().to_string(),
            });
        }
        out.push(Assignment::new(k, v, format!("{origin}:{}", i + 1)));
    }
    Ok(out)
}

pub fn read_assignments(path: &Path) -> Result<Vec<Assignment>, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_assignments(&text, &path.display().to_string())
}

/// Applies `assignments` in order on top of `base`.
pub fn apply<T: Serialize + DeserializeOwned>(base: &T, assignments: &[Assignment]) -> Result<T, ConfigError> {
    let mut obj: Map<String, Value> = match serde_json::to_value(base) {
        Ok(Value::Object(m)) => m,
        _ => unreachable!("config structs serialize to objects"),
    };
    for a in assignments {
        let Some(current) = obj.get(&a.key) else {
            return Err(ConfigError::UnknownKey {
                key: a.key.clone(),
                origin: a.origin.clone(),
            });
        };
        let type_err = |expected: &str| ConfigError::Type {
            key: a.key.clone(),
            value: a.value.clone(),
            expected: expected.to_string(),
        };
        let parsed = match current {
            Value::Bool(_) => Value::Bool(a.value.parse().map_err(|_| type_err("true or false"))?),
            Value::Number(n) if n.is_u64() => {
                Value::from(a.value.parse::<u64>().map_err(|_| type_err("a non-negative integer"))?)
            }
            Value::Number(_) => {
                let v: f64 = a.value.parse().map_err(|_| type_err("a number"))?;
                if !v.is_finite() {
                    return Err(type_err("a finite number"));
                }
                Value::from(v)
            }
            _ => Value::String(a.value.clone()),
        };
        let previous = obj.insert(a.key.clone(), parsed);
        if let Err(e) = serde_json::from_value::<T>(Value::Object(obj.clone())) {
            obj.insert(a.key.clone(), previous.expect("key existed"));
            return Err(type_err(&e.to_string()));
        }
    }
    Ok(serde_json::from_value(Value::Object(obj)).expect("validated per assignment"))
}

/// Defaults, then the file, then `overrides`.
pub fn load_config<T: Default + Serialize + DeserializeOwned>(
    path: Option<&Path>,
    overrides: &[Assignment],
) -> Result<T, ConfigError> {
    let mut all = match path {
        Some(p) => read_assignments(p)?,
        None => Vec::new(),
    };
    all.extend_from_slice(overrides);
    apply(&T::default(), &all)
}

/// Keys of a config struct, in declaration order.
pub fn keys<T: Serialize + Default>() -> Vec<String> {
    match serde_json::to_value(T::default()) {
        Ok(Value::Object(m)) => m.keys().cloned().collect(),
        _ => Vec::new(),
    }
}
