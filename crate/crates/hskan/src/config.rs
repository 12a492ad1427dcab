//! `key=value` run configuration files.

use std::path::Path;

use hskan_core::optim::AdamConfig;
use hskan_core::ModelConfig;

use crate::error::{Error, Result};

/// Ordered `key=value` pairs; later entries win.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Settings {
    pub pairs: Vec<(String, String)>,
}

impl Settings {
    /// Parses one pair per line; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got {raw:?}", n + 1)))?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(Settings { pairs })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Adds `key=value` strings from the command line.
    pub fn extend_args(&mut self, args: &[String]) -> Result<()> {
        for a in args {
            let (k, v) = a.split_once('=').ok_or_else(|| Error::Config(format!("expected key=value, got {a:?}")))?;
            self.pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.pairs.push((key.to_string(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.pairs.iter().rev().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn parse_or<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| Error::Config(format!("invalid value {v:?} for {key}"))),
        }
    }

    /// Applies every model key, leaving other keys alone.
    pub fn model_config(&self) -> Result<ModelConfig> {
        let mut cfg = ModelConfig::default();
        for (k, v) in &self.pairs {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    pub fn adam(&self) -> Result<AdamConfig> {
        let d = AdamConfig::default();
        Ok(AdamConfig {
            lr: self.parse_or("lr", d.lr)?,
            beta1: self.parse_or("beta1", d.beta1)?,
            beta2: self.parse_or("beta2", d.beta2)?,
            eps: self.parse_or("eps", d.eps)?,
        })
    }

    /// Rejects keys that no command understands.
    pub fn check_keys(&self, extra: &[&str]) -> Result<()> {
        let mut probe = ModelConfig::default();
        for (k, v) in &self.pairs {
            let known = extra.contains(&k.as_str())
                || ["lr", "beta1", "beta2", "eps"].contains(&k.as_str())
                || probe.set(k, v)?;
            if !known {
                return Err(Error::Config(format!("unknown key {k:?}")));
            }
        }
        Ok(())
    }
}
