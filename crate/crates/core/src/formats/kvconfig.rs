//! Flat `section.key = value` configuration text.
//!
//! One entry per line, `#` starts a comment, blank lines are ignored. Lists
//! are comma separated. Reading tracks which keys were consumed so that
//! misspelled keys can be reported instead of silently ignored.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Default)]
pub struct KvConfig {
    entries: BTreeMap<String, String>,
    used: RefCell<BTreeSet<String>>,
}

impl Clone for KvConfig {
    fn clone(&self) -> Self {
        Self {
            entries: self.entries.clone(),
            used: RefCell::new(self.used.borrow().clone()),
        }
    }
}

impl KvConfig {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::config(
                    format!("line {}", n + 1),
                    format!("expected `key = value`, got `{line}`"),
                ));
            };
            let key = k.trim();
            if key.is_empty() || key.contains(char::is_whitespace) {
                return Err(Error::config(format!("line {}", n + 1), "malformed key"));
            }
            if entries.insert(key.to_string(), v.trim().to_string()).is_some() {
                return Err(Error::config(key, "duplicate key"));
            }
        }
        Ok(Self {
            entries,
            used: RefCell::default(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: impl Display) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn set_list<T: Display>(&mut self, key: &str, values: &[T]) {
        let joined: Vec<String> = values.iter().map(ToString::to_string).collect();
        self.set(key, joined.join(","));
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        let v = self.entries.get(key)?;
        self.used.borrow_mut().insert(key.to_string());
        Some(v)
    }

    /// Parsed value, or `default` when the key is absent.
    pub fn get<T>(&self, key: &str, default: T) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|e| Error::config(key, format!("cannot parse `{v}`: {e}"))),
        }
    }

    pub fn get_list<T>(&self, key: &str, default: Vec<T>) -> Result<Vec<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| {
                    s.parse()
                        .map_err(|e| Error::config(key, format!("cannot parse `{s}`: {e}")))
                })
                .collect(),
        }
    }

    /// Fails on the first key under one of `sections` that was never read.
    pub fn reject_unused(&self, sections: &[&str]) -> Result<()> {
        let used = self.used.borrow();
        for key in self.entries.keys() {
            let section = key.split('.').next().unwrap_or("");
            if sections.contains(&section) && !used.contains(key) {
                return Err(Error::config(key.as_str(), "unknown key"));
            }
        }
        Ok(())
    }

    /// Canonical text: sorted `key = value` lines.
    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// Keeps only the entries under `sections`.
    pub fn restrict(&self, sections: &[&str]) -> Self {
        let entries = self
            .entries
            .iter()
            .filter(|(k, _)| sections.contains(&k.split('.').next().unwrap_or("")))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        Self {
            entries,
            used: RefCell::default(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_typed_and_lists() {
        let c = KvConfig::parse("# c\n train.epochs = 7 \n\nrpn.scales=2, 4,8 # tail\n").unwrap();
        assert_eq!(c.get("train.epochs", 1usize).unwrap(), 7);
        assert_eq!(c.get("train.lr", 0.5f64).unwrap(), 0.5);
        assert_eq!(c.get_list("rpn.scales", vec![1.0]).unwrap(), vec![2.0, 4.0, 8.0]);
    }

    #[test]
    fn errors_name_the_field() {
        let c = KvConfig::parse("train.epochs = many").unwrap();
        match c.get("train.epochs", 1usize) {
            Err(Error::Config { field, .. }) => assert_eq!(field, "train.epochs"),
            other => panic!("{other:?}"),
        }
        assert!(KvConfig::parse("a = 1\na = 2").is_err());
        assert!(KvConfig::parse("novalue").is_err());
    }

    #[test]
    fn unused_keys_reported() {
        let c = KvConfig::parse("train.epochs = 3\ntrain.epoch = 4\nother.x = 1").unwrap();
        c.get("train.epochs", 0usize).unwrap();
        assert!(c.reject_unused(&["train"]).is_err());
        c.get("train.epoch", 0usize).unwrap();
        c.reject_unused(&["train"]).unwrap();
    }

    #[test]
    fn canonical_text_round_trips() {
        let mut c = KvConfig::new();
        c.set("b.x", 2);
        c.set_list("a.y", &[1.5, 2.0]);
        let text = c.to_text();
        assert_eq!(text, "a.y = 1.5,2\nb.x = 2\n");
        assert_eq!(KvConfig::parse(&text).unwrap().to_text(), text);
    }
}
