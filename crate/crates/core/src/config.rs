//! Flat key-value configuration files.
//!
//! Format: one `key = value` per line, `#` comments, blank lines ignored.
//! Consumers read typed values; [`KvConfig::finish`] then rejects any key
//! that was never consumed, so typos fail loudly instead of silently
//! falling back to defaults.

use std::cell::RefCell;
use std::collections::BTreeSet;
use std::path::Path;

use indexmap::IndexMap;

use crate::error::{Error, Result};

#[derive(Debug, Default)]
pub struct KvConfig {
    entries: IndexMap<String, String>,
    used: RefCell<BTreeSet<String>>,
}

impl KvConfig {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut entries = IndexMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                file: origin.into(),
                line: idx + 1,
                msg: format!("expected `key = value`, got `{line}`"),
            })?;
            let key = key.trim().to_string();
            if entries.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(Error::Parse {
                    file: origin.into(),
                    line: idx + 1,
                    msg: format!("duplicate key `{key}`"),
                });
            }
        }
        Ok(KvConfig {
            entries,
            used: RefCell::new(BTreeSet::new()),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Empty config (pure defaults).
    pub fn empty() -> Self {
        KvConfig::default()
    }

    fn raw(&self, key: &str) -> Option<&str> {
        let v = self.entries.get(key).map(|s| s.as_str());
        if v.is_some() {
            self.used.borrow_mut().insert(key.to_string());
        }
        v
    }

    pub fn get_str(&self, key: &str, default: &str) -> String {
        self.raw(key).unwrap_or(default).to_string()
    }

    fn parse_value<T: std::str::FromStr>(&self, key: &str, raw: &str) -> Result<T> {
        raw.parse().map_err(|_| {
            Error::Config(format!(
                "key `{key}`: cannot parse `{raw}` as {}",
                std::any::type_name::<T>()
            ))
        })
    }

    pub fn get_f64(&self, key: &str, default: f64) -> Result<f64> {
        match self.raw(key) {
            Some(v) => self.parse_value(key, v),
            None => Ok(default),
        }
    }

    pub fn get_usize(&self, key: &str, default: usize) -> Result<usize> {
        match self.raw(key) {
            Some(v) => self.parse_value(key, v),
            None => Ok(default),
        }
    }

    pub fn get_u64(&self, key: &str, default: u64) -> Result<u64> {
        match self.raw(key) {
            Some(v) => self.parse_value(key, v),
            None => Ok(default),
        }
    }

    pub fn get_bool(&self, key: &str, default: bool) -> Result<bool> {
        match self.raw(key) {
            Some("true") | Some("1") | Some("on") => Ok(true),
            Some("false") | Some("0") | Some("off") => Ok(false),
            Some(other) => Err(Error::Config(format!(
                "key `{key}`: expected a boolean, got `{other}`"
            ))),
            None => Ok(default),
        }
    }

    /// Comma-separated list of sizes, e.g. `64,64`.
    pub fn get_usize_list(&self, key: &str, default: &[usize]) -> Result<Vec<usize>> {
        match self.raw(key) {
            Some(v) => v
                .split(',')
                .map(|s| self.parse_value(key, s.trim()))
                .collect(),
            None => Ok(default.to_vec()),
        }
    }

    /// Errors when any key was present but never consumed.
    pub fn finish(&self) -> Result<()> {
        let used = self.used.borrow();
        let unknown: Vec<&str> = self
            .entries
            .keys()
            .filter(|k| !used.contains(*k))
            .map(|k| k.as_str())
            .collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "unknown keys: {}",
                unknown.join(", ")
            )))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_types_values() {
        let cfg = KvConfig::parse("alpha = 0.001\nepochs = 3\nsecond_order = true\n", "mem")
            .unwrap();
        assert_eq!(cfg.get_f64("alpha", 1.0).unwrap(), 0.001);
        assert_eq!(cfg.get_usize("epochs", 1).unwrap(), 3);
        assert!(cfg.get_bool("second_order", false).unwrap());
        cfg.finish().unwrap();
    }

    #[test]
    fn unknown_keys_rejected() {
        let cfg = KvConfig::parse("alpha = 0.1\nmystery = 1\n", "mem").unwrap();
        let _ = cfg.get_f64("alpha", 1.0).unwrap();
        let err = cfg.finish().unwrap_err();
        assert!(err.to_string().contains("mystery"));
    }

    #[test]
    fn defaults_used_when_absent() {
        let cfg = KvConfig::parse("", "mem").unwrap();
        assert_eq!(cfg.get_usize("batch_size", 512).unwrap(), 512);
        assert_eq!(cfg.get_usize_list("hidden", &[64, 64]).unwrap(), vec![64, 64]);
        cfg.finish().unwrap();
    }

    #[test]
    fn bad_values_and_duplicates_error() {
        let cfg = KvConfig::parse("alpha = zero\n", "mem").unwrap();
        assert!(cfg.get_f64("alpha", 1.0).is_err());
        assert!(KvConfig::parse("a = 1\na = 2\n", "mem").is_err());
        assert!(KvConfig::parse("just a line\n", "mem").is_err());
    }
}
