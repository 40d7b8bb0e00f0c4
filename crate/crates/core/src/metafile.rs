//! Flat `key=value` text files: one pair per line, `#` starts a comment.

use std::fmt::Display;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Ordered key/value pairs; later `set`s of an existing key overwrite it.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Meta {
    entries: Vec<(String, String)>,
}

impl Meta {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, key: &str, value: impl Display) {
        let value = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(slot) => slot.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    /// Parses the value for `key`; `origin` names the source in errors.
    pub fn get_parsed<T>(&self, key: &str, origin: &Path) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| Error::parse(origin, format!("{key}={v}: {e}")))
            })
            .transpose()
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(k, _)| k.as_str())
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Meta> {
        let mut meta = Meta::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::parse(origin, format!("line {}: expected key=value", lineno + 1))
            })?;
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::parse(origin, format!("line {}: empty key", lineno + 1)));
            }
            meta.set(key, value.trim());
        }
        Ok(meta)
    }

    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }

    pub fn load(path: &Path) -> Result<Meta> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Meta::parse(&text, path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_whitespace() {
        let text = "# header\n depth = 8 \nwidths=4,8 # trailing\n\n";
        let meta = Meta::parse(text, Path::new("cfg")).unwrap();
        assert_eq!(meta.get("depth"), Some("8"));
        assert_eq!(meta.get("widths"), Some("4,8"));
        assert_eq!(meta.get_parsed::<u32>("depth", Path::new("cfg")).unwrap(), Some(8));
        assert!(meta.get_parsed::<u32>("widths", Path::new("cfg")).is_err());
    }

    #[test]
    fn rejects_lines_without_equals() {
        assert!(Meta::parse("depth 8\n", Path::new("cfg")).is_err());
        assert!(Meta::parse("=8\n", Path::new("cfg")).is_err());
    }

    #[test]
    fn later_values_win_and_order_is_kept() {
        let mut m = Meta::new();
        m.set("b", 1);
        m.set("a", 2);
        m.set("b", 3);
        assert_eq!(m.to_text(), "b=3\na=2\n");
    }
}
