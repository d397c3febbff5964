//! Key-value run configuration.
//!
//! Files hold one `key = value` pair per line with dotted keys; `#` starts
//! a comment. Values given on the command line replace file values.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::CliError;

#[derive(Debug, Default)]
pub struct Config {
    given: BTreeMap<String, String>,
    /// Every value read by the command, defaults included.
    effective: BTreeMap<String, String>,
}

impl Config {
    pub fn parse(text: &str, origin: &str) -> Result<Config, CliError> {
        let mut cfg = Config::default();
        for (no, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                CliError::usage(format!("{origin}:{}: expected `key = value`", no + 1))
            })?;
            cfg.set(k.trim(), v.trim());
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Config, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        if text.trim_start().starts_with('{') {
            return Config::from_provenance(&text, path);
        }
        Config::parse(&text, &path.display().to_string())
    }

    /// The `config` object of a provenance record.
    fn from_provenance(text: &str, path: &Path) -> Result<Config, CliError> {
        let bad = || CliError::usage(format!("{} is not a provenance record", path.display()));
        let v: serde_json::Value = serde_json::from_str(text).map_err(|_| bad())?;
        let mut cfg = Config::default();
        for (k, v) in v["config"].as_object().ok_or_else(bad)? {
            cfg.set(k, v.as_str().ok_or_else(bad)?);
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.given.insert(key.to_string(), value.into());
    }

    /// Applies a `key=value` override.
    pub fn set_pair(&mut self, pair: &str) -> Result<(), CliError> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| CliError::usage(format!("--set expects key=value, got {pair:?}")))?;
        self.set(k.trim(), v.trim());
        Ok(())
    }

    pub fn contains(&self, key: &str) -> bool {
        self.given.contains_key(key)
    }

    /// Rejects keys outside `allowed`; an entry ending in `.` admits a
    /// whole prefix.
    pub fn check_keys(&self, allowed: &[&str]) -> Result<(), CliError> {
        for k in self.given.keys() {
            let ok = allowed.iter().any(|a| {
                if a.ends_with('.') {
                    k.starts_with(a)
                } else {
                    k == a
                }
            });
            if !ok {
                return Err(CliError::usage(format!("unknown config key `{k}`")));
            }
        }
        Ok(())
    }

    fn raw(&self, key: &str) -> Option<&str> {
        self.given.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr + Display>(&mut self, key: &str, default: T) -> Result<T, CliError>
    where
        T::Err: Display,
    {
        let v = match self.raw(key) {
            Some(s) => s
                .parse::<T>()
                .map_err(|e| CliError::usage(format!("bad value {s:?} for `{key}`: {e}")))?,
            None => default,
        };
        self.effective.insert(key.to_string(), v.to_string());
        Ok(v)
    }

    pub fn require<T: FromStr + Display>(&mut self, key: &str) -> Result<T, CliError>
    where
        T::Err: Display,
    {
        if self.raw(key).is_none() {
            return Err(CliError::usage(format!("missing required key `{key}`")));
        }
        let s = self.raw(key).unwrap_or_default().to_string();
        let v = s
            .parse::<T>()
            .map_err(|e| CliError::usage(format!("bad value {s:?} for `{key}`: {e}")))?;
        self.effective.insert(key.to_string(), s);
        Ok(v)
    }

    pub fn path(&mut self, key: &str) -> Result<PathBuf, CliError> {
        self.require::<String>(key).map(PathBuf::from)
    }

    pub fn opt_path(&mut self, key: &str) -> Option<PathBuf> {
        let v = self.raw(key)?.to_string();
        self.effective.insert(key.to_string(), v.clone());
        Some(PathBuf::from(v))
    }

    /// Comma-separated list.
    pub fn list(&mut self, key: &str, default: &str) -> Vec<String> {
        let s = self.raw(key).unwrap_or(default).to_string();
        self.effective.insert(key.to_string(), s.clone());
        s.split(',')
            .map(|p| p.trim().to_string())
            .filter(|p| !p.is_empty())
            .collect()
    }

    pub fn effective(&self) -> &BTreeMap<String, String> {
        &self.effective
    }
}
