//! Line-oriented `key = value` text, used for experiment configs, config
//! echoes, corpus manifests and checkpoint manifests.
//!
//! Blank lines and lines starting with `#` are ignored. Keys are unique.

use std::fmt::Display;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KvDoc {
    entries: Vec<(String, String)>,
}

impl KvDoc {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut doc = KvDoc::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", lineno + 1)))?;
            let k = k.trim();
            if k.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", lineno + 1)));
            }
            if doc.get(k).is_some() {
                return Err(Error::Config(format!("duplicate key {k}")));
            }
            doc.entries.push((k.to_string(), v.trim().to_string()));
        }
        Ok(doc)
    }

    pub fn set(&mut self, key: &str, value: impl Display) {
        let value = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(slot) => slot.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn extend(&mut self, other: &KvDoc) {
        for (k, v) in &other.entries {
            self.set(k, v);
        }
    }

    pub fn render(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

pub fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

/// Parses `lo..hi` style inclusive pairs written as `lo,hi`.
pub fn parse_pair<T: FromStr>(key: &str, value: &str) -> Result<(T, T)> {
    let (a, b) = value
        .split_once(',')
        .ok_or_else(|| Error::Config(format!("{key} expects `a,b`, got {value:?}")))?;
    Ok((parse_value(key, a.trim())?, parse_value(key, b.trim())?))
}
