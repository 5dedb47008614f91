//! `key = value` config files merged with command-line flags.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::CliError;

/// Settings for one command. Every key must be one the command declares.
#[derive(Debug, Clone)]
pub struct Settings {
    allowed: &'static [&'static str],
    values: BTreeMap<String, String>,
}

impl Settings {
    pub fn new(allowed: &'static [&'static str]) -> Self {
        Self {
            allowed,
            values: BTreeMap::new(),
        }
    }

    /// Reads `key = value` lines. Blank lines and `#` comments are skipped.
    pub fn load(allowed: &'static [&'static str], path: Option<&Path>) -> Result<Self, CliError> {
        let mut settings = Self::new(allowed);
        let Some(path) = path else {
            return Ok(settings);
        };
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::Usage(format!(
                    "config {} line {}: expected `key = value`",
                    path.display(),
                    i + 1
                )));
            };
            settings.set(key.trim(), value.trim())?;
        }
        Ok(settings)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<(), CliError> {
        if !self.allowed.contains(&key) {
            return Err(CliError::Usage(format!(
                "unknown setting {key:?}; expected one of {}",
                self.allowed.join(", ")
            )));
        }
        self.values.insert(key.to_string(), value.into());
        Ok(())
    }

    /// Applies a flag on top of the file; flags that were not given leave the file value.
    pub fn flag<T: Display>(&mut self, key: &str, value: &Option<T>) -> Result<(), CliError> {
        match value {
            Some(v) => self.set(key, v.to_string()),
            None => Ok(()),
        }
    }

    pub fn get<T>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T: FromStr,
        T::Err: Display,
    {
        debug_assert!(self.allowed.contains(&key), "undeclared key {key}");
        self.values
            .get(key)
            .map(|v| {
                v.parse()
                    .map_err(|e| CliError::Usage(format!("invalid {key} {v:?}: {e}")))
            })
            .transpose()
    }

    pub fn get_or<T>(&self, key: &str, default: T) -> Result<T, CliError>
    where
        T: FromStr,
        T::Err: Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn require<T>(&self, key: &str) -> Result<T, CliError>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.get(key)?
            .ok_or_else(|| CliError::Usage(format!("missing required setting {key}")))
    }
}
