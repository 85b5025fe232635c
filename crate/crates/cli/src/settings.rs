//! Flat `key = value` settings merged from a config file and command-line flags.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};

/// Name of the resolved settings file written into every output directory.
pub const ECHO_FILE: &str = "config.txt";

/// Settings for one command. Every key read is recorded together with the
/// default it fell back to, so the echo reproduces the run on its own.
#[derive(Debug, Default)]
pub struct Settings {
    command: String,
    values: BTreeMap<String, String>,
    used: BTreeSet<String>,
}

pub fn parse_flat(text: &str) -> Result<BTreeMap<String, String>> {
    let mut values = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| anyhow!("config line {}: expected key = value", i + 1))?;
        let key = k.trim().replace('-', "_");
        if key.is_empty() {
            bail!("config line {}: empty key", i + 1);
        }
        values.insert(key, v.trim().to_string());
    }
    Ok(values)
}

impl Settings {
    /// Loads `config` (if any) and applies the flag overrides on top.
    pub fn new(command: &str, config: Option<&Path>, overrides: Vec<(&str, Option<String>)>) -> Result<Self> {
        let mut values = match config {
            Some(path) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
                parse_flat(&text).with_context(|| format!("in config {}", path.display()))?
            }
            None => BTreeMap::new(),
        };
        if let Some(c) = values.remove("command") {
            if c != command {
                bail!("config was written for command {c:?}, not {command:?}");
            }
        }
        for (k, v) in overrides {
            if let Some(v) = v {
                values.insert(k.to_string(), v);
            }
        }
        Ok(Settings { command: command.to_string(), values, used: BTreeSet::new() })
    }

    fn parse<T: FromStr>(&self, key: &str, raw: &str) -> Result<T>
    where
        T::Err: Display,
    {
        raw.parse::<T>().map_err(|e| anyhow!("invalid value {raw:?} for {key}: {e}"))
    }

    pub fn opt<T: FromStr>(&mut self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        self.used.insert(key.to_string());
        match self.values.get(key) {
            Some(raw) => Ok(Some(self.parse(key, raw)?)),
            None => Ok(None),
        }
    }

    pub fn get<T: FromStr + Display>(&mut self, key: &str, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        match self.opt(key)? {
            Some(v) => Ok(v),
            None => {
                self.values.insert(key.to_string(), default.to_string());
                Ok(default)
            }
        }
    }

    pub fn require<T: FromStr>(&mut self, key: &str) -> Result<T>
    where
        T::Err: Display,
    {
        self.opt(key)?.ok_or_else(|| anyhow!("missing required setting {key} (flag --{})", key.replace('_', "-")))
    }

    /// Comma-separated list with a default.
    pub fn list<T: FromStr>(&mut self, key: &str, default: &str) -> Result<Vec<T>>
    where
        T::Err: Display,
    {
        let raw: String = self.get(key, default.to_string())?;
        raw.split(',').map(|v| self.parse(key, v.trim())).collect()
    }

    /// Fails on keys that the command never read, which catches typos in config files.
    pub fn finish(&self) -> Result<()> {
        let unused: Vec<&str> =
            self.values.keys().filter(|k| !self.used.contains(*k)).map(String::as_str).collect();
        if !unused.is_empty() {
            bail!("unknown setting(s) for {}: {}", self.command, unused.join(", "));
        }
        Ok(())
    }

    pub fn echo_text(&self) -> String {
        let mut out = format!("command = {}\n", self.command);
        for (k, v) in &self.values {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }

    pub fn write_echo(&self, dir: &Path) -> Result<()> {
        let path = dir.join(ECHO_FILE);
        fs::write(&path, self.echo_text()).with_context(|| format!("writing {}", path.display()))
    }
}
