//! Flat `key = value` configuration with dotted sections.
//!
//! ```text
//! # comment
//! seed = 7
//! fed.algorithm = fedprox
//! partition.labels = 0 1 | 2 3 | 4 5
//! ```
//!
//! Keys are unique; every key a loader reads is marked, and
//! [`KvConfig::finish`] rejects the ones nobody asked for so typos surface.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::CliError;

#[derive(Debug, Clone, Default)]
pub struct KvConfig {
    source: String,
    entries: BTreeMap<String, (usize, String)>,
    used: RefCell<BTreeSet<String>>,
}

fn valid_key(key: &str) -> bool {
    !key.is_empty()
        && key
            .split('.')
            .all(|part| !part.is_empty() && part.chars().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_'))
}

impl KvConfig {
    pub fn parse(source: &str, text: &str) -> Result<Self, CliError> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split_once('#').map_or(raw, |(before, _)| before).trim();
            if line.is_empty() {
                continue;
            }
            let bad = |reason: String| CliError::Config {
                origin: source.to_string(),
                line: line_no,
                reason,
            };
            let (key, value) = line.split_once('=').ok_or_else(|| bad(format!("expected `key = value`, got `{line}`")))?;
            let key = key.trim();
            if !valid_key(key) {
                return Err(bad(format!("invalid key `{key}`")));
            }
            if let Some((first, _)) = entries.insert(key.to_string(), (line_no, value.trim().to_string())) {
                return Err(bad(format!("duplicate key `{key}` (first set on line {first})")));
            }
        }
        Ok(Self {
            source: source.to_string(),
            entries,
            used: RefCell::default(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::parse(&path.display().to_string(), &text)
    }

    /// Set or replace a key (command-line overrides).
    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.entries.insert(key.to_string(), (0, value.into()));
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        let (_, v) = self.entries.get(key)?;
        self.used.borrow_mut().insert(key.to_string());
        Some(v)
    }

    fn invalid(&self, key: &str, reason: impl std::fmt::Display) -> CliError {
        CliError::Config {
            origin: self.source.clone(),
            line: self.entries.get(key).map_or(0, |(l, _)| *l),
            reason: format!("{key}: {reason}"),
        }
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|e| self.invalid(key, format!("`{v}`: {e}"))),
        }
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key)?.ok_or_else(|| self.invalid(key, "missing required key"))
    }

    /// Comma- or whitespace-separated list.
    pub fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        let Some(v) = self.raw(key) else { return Ok(None) };
        v.split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|e| self.invalid(key, format!("`{s}`: {e}"))))
            .collect::<Result<Vec<T>, _>>()
            .map(Some)
    }

    /// `|`-separated groups of lists, e.g. `0 1 | 2 3`.
    pub fn groups<T: FromStr>(&self, key: &str) -> Result<Option<Vec<Vec<T>>>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        let Some(v) = self.raw(key) else { return Ok(None) };
        v.split('|')
            .map(|g| {
                g.split(|c: char| c == ',' || c.is_whitespace())
                    .filter(|s| !s.is_empty())
                    .map(|s| s.parse().map_err(|e| self.invalid(key, format!("`{s}`: {e}"))))
                    .collect::<Result<Vec<T>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Some)
    }

    /// Path relative to the config file's directory.
    pub fn path(&self, key: &str, base: Option<&Path>) -> Result<Option<PathBuf>, CliError> {
        Ok(self.raw(key).map(|v| match base {
            Some(b) if Path::new(v).is_relative() => b.join(v),
            _ => PathBuf::from(v),
        }))
    }

    /// Error on keys that were never read.
    pub fn finish(&self) -> Result<(), CliError> {
        let used = self.used.borrow();
        let unknown: Vec<&String> = self.entries.keys().filter(|k| !used.contains(*k)).collect();
        match unknown.first() {
            None => Ok(()),
            Some(first) => Err(self.invalid(first, format!("unknown key ({} unknown in total)", unknown.len()))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections_lists_and_groups() {
        let cfg = KvConfig::parse(
            "t",
            "# header\nseed = 7\nfed.lr = 0.5  # trailing\npartition.labels = 0 1 | 2,3 | 4\nselect.p0 = 0.2, 0.3,0.5\n",
        )
        .unwrap();
        assert_eq!(cfg.require::<u64>("seed").unwrap(), 7);
        assert_eq!(cfg.get::<f64>("fed.lr").unwrap(), Some(0.5));
        assert_eq!(cfg.groups::<usize>("partition.labels").unwrap().unwrap(), vec![vec![0, 1], vec![2, 3], vec![4]]);
        assert_eq!(cfg.list::<f64>("select.p0").unwrap().unwrap(), vec![0.2, 0.3, 0.5]);
        assert_eq!(cfg.get_or("missing", 3usize).unwrap(), 3);
        cfg.finish().unwrap();
    }

    #[test]
    fn rejects_bad_lines() {
        let err = KvConfig::parse("t", "seed = 1\nseed = 2\n").unwrap_err().to_string();
        assert!(err.contains("line 2") && err.contains("duplicate"), "{err}");
        assert!(KvConfig::parse("t", "no equals sign").is_err());
        assert!(KvConfig::parse("t", "Fed.LR = 1").is_err());
        assert!(KvConfig::parse("t", "a..b = 1").is_err());
    }

    #[test]
    fn unread_and_malformed_keys_are_reported() {
        let cfg = KvConfig::parse("t", "seed = 1\nfed.rounds = many\ntypo.key = 3\n").unwrap();
        let err = cfg.get::<usize>("fed.rounds").unwrap_err().to_string();
        assert!(err.contains("line 2") && err.contains("many"), "{err}");
        cfg.raw("seed");
        let err = cfg.finish().unwrap_err().to_string();
        assert!(err.contains("typo.key"), "{err}");
    }
}
