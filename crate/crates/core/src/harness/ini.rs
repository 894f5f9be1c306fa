//! Flat INI dialect: `[section]` headers, `key = value` lines, `#` or `;`
//! comments. Section names may contain dots (`[schedule.epsilon]`).
//!
//! Keys are addressed as `section.key`; an override `a.b.c=v` splits at the
//! last dot. Reads are tracked so that misspelt keys can be reported.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::str::FromStr;

use crate::{Error, Result};

#[derive(Debug, Default, Clone)]
pub struct Ini {
    values: BTreeMap<String, String>,
    read: RefCell<BTreeSet<String>>,
}

impl Ini {
    pub fn parse(text: &str) -> Result<Self> {
        let mut ini = Ini::default();
        let mut section = String::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| Error::config(format!("line {}", n + 1), "unterminated section header"))?
                    .trim();
                if name.is_empty() {
                    return Err(Error::config(format!("line {}", n + 1), "empty section name"));
                }
                section = name.to_string();
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}", n + 1), "expected key = value"))?;
            if section.is_empty() {
                return Err(Error::config(format!("line {}", n + 1), "key outside any section"));
            }
            let key = format!("{section}.{}", k.trim());
            if ini.values.insert(key.clone(), v.trim().to_string()).is_some() {
                return Err(Error::config(key, "duplicate key"));
            }
        }
        Ok(ini)
    }

    /// Applies `section.key=value`, replacing any existing value.
    pub fn apply_override(&mut self, spec: &str) -> Result<()> {
        let (k, v) = spec
            .split_once('=')
            .ok_or_else(|| Error::config(spec, "override must look like section.key=value"))?;
        let k = k.trim();
        match k.rsplit_once('.') {
            Some((s, key)) if !s.is_empty() && !key.is_empty() => {
                self.values.insert(k.to_string(), v.trim().to_string());
                Ok(())
            }
            _ => Err(Error::config(k, "override key must be section.key")),
        }
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.values.insert(key.to_string(), value.to_string());
    }

    pub fn contains(&self, key: &str) -> bool {
        self.values.contains_key(key)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.read.borrow_mut().insert(key.to_string());
        self.values.get(key).map(String::as_str)
    }

    /// Parsed value, or `default` when absent.
    pub fn get<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::config(key, format!("cannot parse {v:?}"))),
        }
    }

    /// Comma-separated list, or `default` when absent.
    pub fn get_list<T: FromStr>(&self, key: &str, default: Vec<T>) -> Result<Vec<T>> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| s.parse().map_err(|_| Error::config(key, format!("cannot parse {s:?}"))))
                .collect(),
        }
    }

    /// Keys that were never read, in sorted order.
    pub fn unread_keys(&self) -> Vec<String> {
        let read = self.read.borrow();
        self.values.keys().filter(|k| !read.contains(*k)).cloned().collect()
    }

    /// Fails on the first unread key.
    pub fn reject_unknown(&self) -> Result<()> {
        match self.unread_keys().into_iter().next() {
            Some(k) => Err(Error::config(k, "unknown key")),
            None => Ok(()),
        }
    }
}
