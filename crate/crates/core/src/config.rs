//! Plain-text `key = value` configuration files.
//!
//! One assignment per line, `#` starts a comment. Keys are looked up
//! against a known-key table so typos fail loudly with a suggestion.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvConfig {
    entries: BTreeMap<String, String>,
    source: String,
}

impl KvConfig {
    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: source.to_string(),
                line: i + 1,
                msg: format!("expected `key = value`, got `{line}`"),
            })?;
            let key = k.trim();
            if key.is_empty() {
                return Err(Error::Parse {
                    path: source.to_string(),
                    line: i + 1,
                    msg: "empty key".into(),
                });
            }
            entries.insert(key.to_string(), v.trim().to_string());
        }
        Ok(KvConfig {
            entries,
            source: source.to_string(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some(v) => v.parse::<T>().map(Some).map_err(|_| {
                Error::Config(format!("{}: cannot parse `{key} = {v}`", self.source))
            }),
        }
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    /// Booleans accept `true/false`, `yes/no`, `1/0`, `on/off`.
    pub fn get_bool_or(&self, key: &str, default: bool) -> Result<bool> {
        match self.entries.get(key).map(|s| s.to_ascii_lowercase()) {
            None => Ok(default),
            Some(v) => match v.as_str() {
                "true" | "yes" | "1" | "on" => Ok(true),
                "false" | "no" | "0" | "off" => Ok(false),
                _ => Err(Error::Config(format!(
                    "{}: `{key} = {v}` is not a boolean",
                    self.source
                ))),
            },
        }
    }

    /// Fails on the first key that is not in `known`, suggesting the closest match.
    pub fn check_known(&self, known: &[&str]) -> Result<()> {
        for key in self.entries.keys() {
            if !known.contains(&key.as_str()) {
                let hint = suggest(key, known)
                    .map(|s| format!(" (did you mean `{s}`?)"))
                    .unwrap_or_default();
                return Err(Error::Config(format!(
                    "{}: unknown key `{key}`{hint}",
                    self.source
                )));
            }
        }
        Ok(())
    }
}

pub fn suggest<'a>(key: &str, known: &[&'a str]) -> Option<&'a str> {
    known
        .iter()
        .map(|k| (strsim::levenshtein(key, k), *k))
        .filter(|(d, _)| *d <= 3)
        .min()
        .map(|(_, k)| k)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_blanks() {
        let c = KvConfig::parse("# header\nlr = 1e-3  # inline\n\nsteps=20\n", "t").unwrap();
        assert_eq!(c.get::<f64>("lr").unwrap(), Some(1e-3));
        assert_eq!(c.get_or("steps", 0usize).unwrap(), 20);
        assert_eq!(c.get_or("batch", 16usize).unwrap(), 16);
    }

    #[test]
    fn rejects_missing_equals() {
        let e = KvConfig::parse("lr 1e-3", "cfg").unwrap_err();
        assert!(e.to_string().contains("cfg:1"));
    }

    #[test]
    fn unknown_key_suggests() {
        let c = KvConfig::parse("stesp = 3", "cfg").unwrap();
        let e = c.check_known(&["steps", "lr"]).unwrap_err();
        assert!(e.to_string().contains("did you mean `steps`"));
    }
}
