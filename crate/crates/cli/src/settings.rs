//! `key=value` settings: a `--config` file overlaid by command-line flags.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use featsel::train::parse_kv_lines;

use crate::error::CliError;

/// Manifest bookkeeping keys carry this prefix and are ignored on reload.
pub const MANIFEST_PREFIX: &str = "manifest.";

#[derive(Debug, Default)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

fn normalize(key: &str) -> String {
    key.trim().replace('-', "_")
}

impl Settings {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let mut values = BTreeMap::new();
        if let Some(path) = path {
            let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            for (k, v) in parse_kv_lines(&text)? {
                if !k.starts_with(MANIFEST_PREFIX) {
                    values.insert(normalize(&k), v);
                }
            }
        }
        Ok(Settings { values })
    }

    /// A flag given on the command line replaces the file value.
    pub fn flag<T: Display>(&mut self, key: &str, value: &Option<T>) {
        if let Some(v) = value {
            self.values.insert(key.to_string(), v.to_string());
        }
    }

    pub fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: Display,
    {
        match self.values.remove(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|e| CliError::Usage(format!("{key}: cannot parse {v:?}: {e}"))),
        }
    }

    pub fn take_or<T: FromStr>(&mut self, key: &str, default: T) -> Result<T, CliError>
    where
        T::Err: Display,
    {
        Ok(self.take(key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&mut self, key: &str) -> Result<T, CliError>
    where
        T::Err: Display,
    {
        self.take(key)?
            .ok_or_else(|| CliError::Usage(format!("{key}: required (flag --{} or config key)", key.replace('_', "-"))))
    }

    /// Comma-separated list.
    pub fn take_list<T: FromStr>(&mut self, key: &str) -> Result<Option<Vec<T>>, CliError>
    where
        T::Err: Display,
    {
        match self.values.remove(key) {
            None => Ok(None),
            Some(v) => v
                .split(',')
                .filter(|s| !s.trim().is_empty())
                .map(|s| {
                    s.trim()
                        .parse()
                        .map_err(|e| CliError::Usage(format!("{key}: cannot parse {s:?}: {e}")))
                })
                .collect::<Result<Vec<T>, _>>()
                .map(Some),
        }
    }

    /// Drains the remaining entries.
    pub fn drain(&mut self) -> Vec<(String, String)> {
        std::mem::take(&mut self.values).into_iter().collect()
    }

    /// Fails on keys no command consumed.
    pub fn finish(self) -> Result<(), CliError> {
        if self.values.is_empty() {
            return Ok(());
        }
        let keys: Vec<_> = self.values.into_keys().collect();
        Err(CliError::Usage(format!("unknown setting(s): {}", keys.join(", "))))
    }
}
