//! Flat `key=value` config files merged under command-line flags.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use dln_core::metafile::Meta;

use crate::error::{LabError, Result};

/// Comma-separated list usable both as a flag value and a config value.
#[derive(Clone, Debug, PartialEq)]
pub struct List<T>(pub Vec<T>);

impl<T> FromStr for List<T>
where
    T: FromStr,
    T::Err: Display,
{
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let items = s
            .split(',')
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .map(|p| p.parse::<T>().map_err(|e| format!("{p:?}: {e}")))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        if items.is_empty() {
            return Err("empty list".into());
        }
        Ok(List(items))
    }
}

/// Config-file values; flags always win.
#[derive(Clone, Debug, Default)]
pub struct Settings {
    meta: Meta,
    origin: PathBuf,
}

fn canonical(key: &str) -> String {
    key.trim().replace('-', "_")
}

impl Settings {
    /// Loads `path` (if any) and rejects keys outside `allowed`.
    pub fn load(path: Option<&Path>, allowed: &[&str]) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Settings::default());
        };
        let raw = Meta::load(path)?;
        let mut meta = Meta::new();
        for key in raw.keys() {
            let k = canonical(key);
            if !allowed.contains(&k.as_str()) {
                return Err(LabError::usage(format!(
                    "{}: unknown key {key:?} (expected one of {})",
                    path.display(),
                    allowed.join(", ")
                )));
            }
            meta.set(&k, raw.get(key).unwrap_or_default());
        }
        Ok(Settings {
            meta,
            origin: path.to_path_buf(),
        })
    }

    /// `flag` if given, else the parsed config value for `key`.
    pub fn pick<T>(&self, flag: Option<T>, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.meta.get(key) {
            None => Ok(None),
            Some(v) => v.parse::<T>().map(Some).map_err(|e| {
                LabError::usage(format!("{}: {key}={v}: {e}", self.origin.display()))
            }),
        }
    }
}
