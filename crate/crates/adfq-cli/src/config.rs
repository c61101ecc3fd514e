//! Flat `key = value` config files.
//!
//! Keys are the long flag names without the leading dashes (`sigma-w`, or
//! `sigma_w`). Blank lines and lines starting with `#` are skipped.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::CliError;

#[derive(Debug, Default)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::Config(format!("line {}: expected `key = value`", i + 1)));
            };
            let key = key.trim().replace('_', "-");
            if key.is_empty() {
                return Err(CliError::Config(format!("line {}: empty key", i + 1)));
            }
            if values.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(CliError::Config(format!("line {}: duplicate key `{key}`", i + 1)));
            }
        }
        Ok(Self { values })
    }

    /// Fails on any key outside `allowed`.
    pub fn check_keys(&self, allowed: &[&str]) -> Result<(), CliError> {
        match self.values.keys().find(|k| !allowed.contains(&k.as_str())) {
            Some(k) => Err(CliError::Config(format!("unknown config key `{k}`"))),
            None => Ok(()),
        }
    }

    /// The flag value if given, else the file value.
    pub fn pick<T: FromStr>(&self, key: &str, flag: Option<T>) -> Result<Option<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.values.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|e| CliError::Config(format!("config key `{key}`: cannot parse {v:?}: {e}"))),
        }
    }

    /// A switch is on if the flag is given or the file sets it to `true`.
    pub fn switch(&self, key: &str, flag: bool) -> Result<bool, CliError> {
        Ok(flag || self.pick::<bool>(key, None)?.unwrap_or(false))
    }
}
