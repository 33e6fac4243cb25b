//! `key = value` configuration files.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use anyhow::{bail, Context, Result};

/// Ordered key/value settings with a fixed set of accepted keys.
#[derive(Debug, Clone, Default)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    /// Parse `key = value` lines. `#` starts a comment; blank lines are
    /// ignored. Keys outside `allowed` are rejected.
    pub fn parse(text: &str, origin: &str, allowed: &[&str]) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!("{origin}:{}: expected `key = value`, got {raw:?}", n + 1);
            };
            let key = key.trim();
            if !allowed.contains(&key) {
                bail!(
                    "{origin}:{}: unknown key {key:?} (accepted: {})",
                    n + 1,
                    allowed.join(", ")
                );
            }
            values.insert(key.to_string(), value.trim().to_string());
        }
        Ok(Self { values })
    }

    pub fn load(path: &Path, allowed: &[&str]) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text, &path.display().to_string(), allowed)
    }

    /// Apply `key=value` overrides.
    pub fn apply_overrides(&mut self, overrides: &[String], allowed: &[&str]) -> Result<()> {
        let text = overrides.join("\n");
        let extra = Self::parse(&text, "--set", allowed)?;
        self.values.extend(extra.values);
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: impl Display) {
        self.values.insert(key.to_string(), value.to_string());
    }

    pub fn get<T>(&self, key: &str, default: T) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        match self.values.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|e| anyhow::anyhow!("config key {key}: cannot parse {v:?}: {e}")),
        }
    }

    pub fn get_opt<T>(&self, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.values
            .get(key)
            .map(|v| {
                v.parse()
                    .map_err(|e| anyhow::anyhow!("config key {key}: cannot parse {v:?}: {e}"))
            })
            .transpose()
    }

    /// A value that may be switched off with `none`.
    pub fn get_or_none<T>(&self, key: &str, default: Option<T>) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        match self.values.get(key).map(String::as_str) {
            None => Ok(default),
            Some("none") => Ok(None),
            Some(_) => self.get_opt(key),
        }
    }

    /// Comma-separated list.
    pub fn get_list<T>(&self, key: &str, default: Vec<T>) -> Result<Vec<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        match self.values.get(key) {
            None => Ok(default),
            Some(v) => parse_list(v).with_context(|| format!("config key {key}")),
        }
    }
}

pub fn parse_list<T>(text: &str) -> Result<Vec<T>>
where
    T: FromStr,
    T::Err: Display,
{
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|e| anyhow::anyhow!("cannot parse {s:?}: {e}")))
        .collect()
}

/// Print resolved settings as comment lines on standard error.
pub fn print_resolved(command: &str, entries: &[(&str, String)]) {
    eprintln!("# pottscolor {command}");
    for (k, v) in entries {
        eprintln!("# {k} = {v}");
    }
}
