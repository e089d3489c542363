//! Plain-text `key = value` config files backing the training commands.
//! Flags override file values; unknown keys are errors.

use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
}

impl ConfigFile {
    /// Parses one `key = value` pair per line; '#' starts a comment.
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(format!("config line {}: expected key = value", i + 1));
            };
            let key = key.trim().to_string();
            if values.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(format!("config line {}: duplicate key {key}", i + 1));
            }
        }
        Ok(ConfigFile { values })
    }

    /// Resolves one setting: CLI flag if given, else config value parsed as
    /// `T`, else the default. Consumes the key so leftovers can be rejected.
    pub fn resolve<T: std::str::FromStr>(
        &mut self,
        key: &str,
        flag: Option<T>,
        default: T,
    ) -> Result<T, String> {
        let file_value = self.values.remove(key);
        if let Some(v) = flag {
            return Ok(v);
        }
        match file_value {
            Some(raw) => raw.parse().map_err(|_| format!("config key {key}: bad value {raw}")),
            None => Ok(default),
        }
    }

    /// Errors on any key not consumed by `resolve`.
    pub fn finish(self) -> Result<(), String> {
        match self.values.into_keys().next() {
            Some(key) => Err(format!("unknown config key: {key}")),
            None => Ok(()),
        }
    }
}
