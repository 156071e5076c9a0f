//! Flat `key = value` run configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}:{line}: expected `key = value`")]
    BadLine { file: String, line: usize },
    #[error("missing required key `{0}`")]
    Missing(String),
    #[error("key `{key}`: cannot parse `{value}`")]
    BadValue { key: String, value: String },
    #[error("key `{key}`: path {path} does not exist")]
    MissingPath { key: String, path: String },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn new() -> Self {
        Self::default()
    }

    /// Parse `key = value` lines; `#` starts a comment line.
    pub fn parse(text: &str, file: &str) -> Result<Self, ConfigError> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let l = raw.trim();
            if l.is_empty() || l.starts_with('#') {
                continue;
            }
            let (k, v) = l.split_once('=').ok_or_else(|| ConfigError::BadLine {
                file: file.to_string(),
                line: i + 1,
            })?;
            let k = k.trim();
            if k.is_empty() {
                return Err(ConfigError::BadLine {
                    file: file.to_string(),
                    line: i + 1,
                });
            }
            values.insert(k.to_string(), v.trim().to_string());
        }
        Ok(RunConfig { values })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.values.insert(key.to_string(), value.to_string());
    }

    pub fn contains(&self, key: &str) -> bool {
        self.values.contains_key(key)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn require(&self, key: &str) -> Result<&str, ConfigError> {
        self.get(key).ok_or_else(|| ConfigError::Missing(key.to_string()))
    }

    pub fn parse_or<T: FromStr>(&self, key: &str, default: T) -> Result<T, ConfigError> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| ConfigError::BadValue {
                key: key.to_string(),
                value: v.to_string(),
            }),
        }
    }

    pub fn parse_required<T: FromStr>(&self, key: &str) -> Result<T, ConfigError> {
        let v = self.require(key)?;
        v.parse().map_err(|_| ConfigError::BadValue {
            key: key.to_string(),
            value: v.to_string(),
        })
    }

    /// `true`/`false`/`1`/`0`/`yes`/`no`.
    pub fn flag(&self, key: &str) -> Result<bool, ConfigError> {
        match self.get(key) {
            None => Ok(false),
            Some(v) => match v.to_ascii_lowercase().as_str() {
                "true" | "1" | "yes" => Ok(true),
                "false" | "0" | "no" => Ok(false),
                _ => Err(ConfigError::BadValue {
                    key: key.to_string(),
                    value: v.to_string(),
                }),
            },
        }
    }

    /// A path that must already exist.
    pub fn input_path(&self, key: &str) -> Result<PathBuf, ConfigError> {
        let p = PathBuf::from(self.require(key)?);
        if !p.exists() {
            return Err(ConfigError::MissingPath {
                key: key.to_string(),
                path: p.display().to_string(),
            });
        }
        Ok(p)
    }

    pub fn output_path(&self, key: &str) -> Result<PathBuf, ConfigError> {
        Ok(PathBuf::from(self.require(key)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_override() {
        let mut c = RunConfig::parse("# c\nseed = 4\nlr=0.001\n\nname = a=b\n", "cfg").unwrap();
        assert_eq!(c.parse_required::<u64>("seed").unwrap(), 4);
        assert_eq!(c.get("name"), Some("a=b"));
        c.set("seed", 9);
        assert_eq!(c.parse_or("seed", 0u64).unwrap(), 9);
        assert_eq!(c.parse_or("steps", 100usize).unwrap(), 100);
        assert!(matches!(c.parse_required::<u64>("lr"), Err(ConfigError::BadValue { .. })));
        assert!(matches!(c.require("out"), Err(ConfigError::Missing(_))));
    }

    #[test]
    fn bad_line() {
        assert!(matches!(
            RunConfig::parse("a = 1\nnonsense\n", "f"),
            Err(ConfigError::BadLine { line: 2, .. })
        ));
    }

    #[test]
    fn flags_and_paths() {
        let c = RunConfig::parse("freeze = yes\nmissing = /no/such/file\n", "f").unwrap();
        assert!(c.flag("freeze").unwrap());
        assert!(!c.flag("other").unwrap());
        assert!(matches!(c.input_path("missing"), Err(ConfigError::MissingPath { .. })));
    }
}
