use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::HarnessError;
use crate::precision::{BigScalar, BigVec, PrecisionContext};

/// Flat `key=value` experiment parameters. Values stay strings until a
/// command asks for them, so the record serializes exactly as given.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ExperimentConfig {
    entries: BTreeMap<String, String>,
}

impl ExperimentConfig {
    pub fn new() -> Self {
        Self::default()
    }

    /// Parses `key=value` lines; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let mut cfg = Self::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| HarnessError::Config(format!("line {}: expected key=value, got {line:?}", i + 1)))?;
            cfg.set(k.trim(), v.trim());
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path)
            .map_err(|e| HarnessError::Io(format!("reading config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) -> &mut Self {
        self.entries.insert(key.to_string(), value.into());
        self
    }

    pub fn with(mut self, key: &str, value: impl Into<String>) -> Self {
        self.set(key, value);
        self
    }

    pub fn remove(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key)
    }

    /// `other` wins on conflicts.
    pub fn merged(&self, other: &ExperimentConfig) -> Self {
        let mut out = self.clone();
        for (k, v) in &other.entries {
            out.entries.insert(k.clone(), v.clone());
        }
        out
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn require(&self, key: &str) -> Result<&str, HarnessError> {
        self.get(key).ok_or_else(|| HarnessError::Config(format!("missing required parameter {key:?}")))
    }

    pub fn str_or<'a>(&'a self, key: &str, default: &'a str) -> &'a str {
        self.get(key).unwrap_or(default)
    }

    pub fn usize(&self, key: &str) -> Result<usize, HarnessError> {
        let v = self.require(key)?;
        v.parse().map_err(|_| bad(key, v, "a non-negative integer"))
    }

    pub fn usize_or(&self, key: &str, default: usize) -> Result<usize, HarnessError> {
        if self.contains(key) {
            self.usize(key)
        } else {
            Ok(default)
        }
    }

    pub fn u32(&self, key: &str) -> Result<u32, HarnessError> {
        let v = self.require(key)?;
        v.parse().map_err(|_| bad(key, v, "a non-negative integer"))
    }

    pub fn u32_or(&self, key: &str, default: u32) -> Result<u32, HarnessError> {
        if self.contains(key) {
            self.u32(key)
        } else {
            Ok(default)
        }
    }

    pub fn bool_or(&self, key: &str, default: bool) -> Result<bool, HarnessError> {
        match self.get(key) {
            None => Ok(default),
            Some("true" | "yes" | "1") => Ok(true),
            Some("false" | "no" | "0") => Ok(false),
            Some(v) => Err(bad(key, v, "true or false")),
        }
    }

    pub fn scalar(&self, key: &str, ctx: &PrecisionContext) -> Result<BigScalar, HarnessError> {
        let v = self.require(key)?;
        ctx.parse(v).map_err(|_| bad(key, v, "a decimal number"))
    }

    pub fn scalar_or(&self, key: &str, default: &str, ctx: &PrecisionContext) -> Result<BigScalar, HarnessError> {
        let v = self.str_or(key, default);
        ctx.parse(v).map_err(|_| bad(key, v, "a decimal number"))
    }

    /// Comma-separated list of raw strings.
    pub fn list(&self, key: &str) -> Result<Vec<String>, HarnessError> {
        let v = self.require(key)?;
        let items: Vec<String> = v.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
        if items.is_empty() {
            return Err(bad(key, v, "a non-empty comma-separated list"));
        }
        Ok(items)
    }

    pub fn scalar_list(&self, key: &str, ctx: &PrecisionContext) -> Result<Vec<BigScalar>, HarnessError> {
        self.list(key)?
            .iter()
            .map(|s| ctx.parse(s).map_err(|_| bad(key, s, "decimal numbers")))
            .collect()
    }

    pub fn usize_list(&self, key: &str) -> Result<Vec<usize>, HarnessError> {
        self.list(key)?.iter().map(|s| s.parse().map_err(|_| bad(key, s, "integers"))).collect()
    }

    pub fn vector_or(&self, key: &str, default: &str, ctx: &PrecisionContext) -> Result<BigVec, HarnessError> {
        let v = self.str_or(key, default);
        let parts: Vec<&str> = v.split(',').map(str::trim).collect();
        ctx.vec_parse(&parts).map_err(|_| bad(key, v, "comma-separated decimal numbers"))
    }

    /// `key=value` lines in key order.
    pub fn to_lines(&self) -> Vec<String> {
        self.entries.iter().map(|(k, v)| format!("{k}={v}")).collect()
    }
}

fn bad(key: &str, value: &str, what: &str) -> HarnessError {
    HarnessError::Config(format!("parameter {key}={value:?}: expected {what}"))
}
