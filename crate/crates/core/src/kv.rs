//! Flat `key = value` documents with `[section]` headers.
//!
//! Keys are addressed as `section.key`; keys before any header have no
//! prefix. `#` starts a comment line.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{DtsError, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct KvDoc {
    entries: BTreeMap<String, String>,
}

impl KvDoc {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut doc = Self::new();
        let mut section = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest.strip_suffix(']').ok_or_else(|| {
                    DtsError::Config(format!("line {}: unterminated section header", lineno + 1))
                })?;
                section = name.trim().to_string();
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                DtsError::Config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            let key = if section.is_empty() {
                k.trim().to_string()
            } else {
                format!("{section}.{}", k.trim())
            };
            if doc
                .entries
                .insert(key.clone(), v.trim().to_string())
                .is_some()
            {
                return Err(DtsError::Config(format!(
                    "line {}: duplicate key {key}",
                    lineno + 1
                )));
            }
        }
        Ok(doc)
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| DtsError::Config(format!("{key}: cannot parse `{v}`"))),
        }
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Fails on any key outside `known`.
    pub fn reject_unknown(&self, known: &[&str]) -> Result<()> {
        match self.keys().find(|k| !known.contains(k)) {
            Some(k) => Err(DtsError::Config(format!("unknown key {k}"))),
            None => Ok(()),
        }
    }

    /// Serializes bare keys first, then one header per section, sections
    /// in key order.
    pub fn render(&self) -> String {
        let split = |k: &str| -> (String, String) {
            match k.rsplit_once('.') {
                Some((s, k)) => (s.to_string(), k.to_string()),
                None => (String::new(), k.to_string()),
            }
        };
        let mut items: Vec<(String, String, &str)> = self
            .entries
            .iter()
            .map(|(k, v)| {
                let (s, k) = split(k);
                (s, k, v.as_str())
            })
            .collect();
        items.sort();
        let mut out = String::new();
        let mut current: Option<&str> = None;
        for (section, key, v) in &items {
            if current != Some(section.as_str()) {
                if !section.is_empty() {
                    if current.is_some() {
                        out.push('\n');
                    }
                    let _ = writeln!(out, "[{section}]");
                }
                current = Some(section.as_str());
            }
            let _ = writeln!(out, "{key} = {v}");
        }
        out
    }
}
