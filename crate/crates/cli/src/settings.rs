//! Layered `key=value` settings: command-line flags over a config file over defaults.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::CliError;

/// Every key any command understands. A config file may be shared between
/// commands, so keys of other commands are accepted and ignored.
pub const KNOWN_KEYS: &[&str] = &[
    "alpha",
    "alpha-mode",
    "batch-size",
    "bottom",
    "checkpoint",
    "classifier",
    "dims",
    "epochs",
    "few-max",
    "gamma",
    "generated",
    "imbalance",
    "input",
    "lr",
    "lr-schedule",
    "many-min",
    "max-jitter",
    "mixup-alpha",
    "mode",
    "model",
    "momentum",
    "n-head",
    "neighbors",
    "noise-scale",
    "normalize",
    "output",
    "power-mode",
    "rounding",
    "seed",
    "stats-space",
    "target",
    "threads",
    "tukey",
    "val",
    "warm-start",
    "weight-decay",
];

#[derive(Debug, Default)]
pub struct Settings {
    layered: BTreeMap<String, String>,
    resolved: BTreeMap<String, String>,
}

/// Parses a config file body. Blank lines and lines starting with `#` are skipped.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("config line {}: expected key=value, got {line:?}", n + 1)))?;
        let k = k.trim().replace('_', "-");
        if !KNOWN_KEYS.contains(&k.as_str()) {
            return Err(CliError::Usage(format!("config line {}: unknown key {k:?}", n + 1)));
        }
        out.insert(k, v.trim().to_string());
    }
    Ok(out)
}

impl Settings {
    pub fn new(
        config_file: Option<&Path>,
        flags: impl IntoIterator<Item = (String, String)>,
    ) -> Result<Self, CliError> {
        let mut layered = match config_file {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::Io(format!("cannot read config file {}: {e}", path.display())))?;
                parse_config(&text)?
            }
            None => BTreeMap::new(),
        };
        layered.extend(flags);
        Ok(Settings { layered, resolved: BTreeMap::new() })
    }

    fn raw(&mut self, key: &str) -> Option<String> {
        debug_assert!(KNOWN_KEYS.contains(&key), "unregistered key {key}");
        self.layered.get(key).cloned()
    }

    /// Reads a value without recording it in the resolved config, for
    /// settings that must not change the outputs (thread count, output path).
    pub fn unrecorded(&mut self, key: &str) -> Option<String> {
        self.raw(key)
    }

    fn record(&mut self, key: &str, value: impl Display) {
        self.resolved.insert(key.to_string(), value.to_string());
    }

    fn parse<T: FromStr>(key: &str, s: &str) -> Result<T, CliError>
    where
        T::Err: Display,
    {
        s.parse().map_err(|e| CliError::Usage(format!("invalid value {s:?} for {key}: {e}")))
    }

    pub fn get<T: FromStr + Display>(&mut self, key: &str, default: T) -> Result<T, CliError>
    where
        T::Err: Display,
    {
        let v = match self.raw(key) {
            Some(s) => Self::parse(key, &s)?,
            None => default,
        };
        self.record(key, &v);
        Ok(v)
    }

    pub fn optional<T: FromStr + Display>(&mut self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: Display,
    {
        match self.raw(key) {
            Some(s) if s != "none" => {
                let v: T = Self::parse(key, &s)?;
                self.record(key, &v);
                Ok(Some(v))
            }
            _ => {
                self.record(key, "none");
                Ok(None)
            }
        }
    }

    pub fn flag(&mut self, key: &str, default: bool) -> Result<bool, CliError> {
        let v = match self.raw(key).as_deref() {
            None => default,
            Some("true" | "1" | "yes" | "on") => true,
            Some("false" | "0" | "no" | "off") => false,
            Some(other) => {
                return Err(CliError::Usage(format!("invalid value {other:?} for {key}: expected true or false")))
            }
        };
        self.record(key, v);
        Ok(v)
    }

    /// A named choice, recorded verbatim.
    pub fn choice<'a>(&mut self, key: &str, default: &'a str, allowed: &[&'a str]) -> Result<&'a str, CliError> {
        let raw = self.raw(key).unwrap_or_else(|| default.to_string());
        let v = allowed.iter().find(|a| **a == raw).ok_or_else(|| {
            CliError::Usage(format!("invalid value {raw:?} for {key}: expected one of {}", allowed.join(", ")))
        })?;
        self.record(key, v);
        Ok(v)
    }

    pub fn path(&mut self, key: &str) -> Result<PathBuf, CliError> {
        let v = self.raw(key).ok_or_else(|| CliError::Usage(format!("missing required setting --{key}")))?;
        self.record(key, &v);
        Ok(PathBuf::from(v))
    }

    pub fn optional_path(&mut self, key: &str) -> Option<PathBuf> {
        let v = self.raw(key)?;
        self.record(key, &v);
        Some(PathBuf::from(v))
    }

    /// Every value the command read, defaults included, as `key=value` lines.
    pub fn resolved_text(&self) -> String {
        self.resolved.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        std::fs::write(&path, "# comment\nneighbors = 2\nalpha=0.5\nmax_jitter=1e-6\n").unwrap();
        let mut s = Settings::new(Some(&path), [("neighbors".to_string(), "4".to_string())]).unwrap();
        assert_eq!(s.get("neighbors", 3usize).unwrap(), 4);
        assert_eq!(s.get("alpha", 0.0f64).unwrap(), 0.5);
        assert_eq!(s.get("max-jitter", 1e-4f64).unwrap(), 1e-6);
        assert_eq!(s.get("epochs", 30usize).unwrap(), 30);
        assert_eq!(s.resolved_text(), "alpha=0.5\nepochs=30\nmax-jitter=0.000001\nneighbors=4\n");
    }

    #[test]
    fn rejects_unknown_keys_and_bad_lines() {
        assert!(matches!(parse_config("colour=red"), Err(CliError::Usage(_))));
        assert!(matches!(parse_config("neighbors"), Err(CliError::Usage(_))));
    }

    #[test]
    fn typed_errors_are_usage_errors() {
        let mut s = Settings::new(None, [("epochs".to_string(), "many".to_string())]).unwrap();
        assert!(matches!(s.get("epochs", 1usize), Err(CliError::Usage(_))));
        let mut s = Settings::new(None, [("normalize".to_string(), "maybe".to_string())]).unwrap();
        assert!(s.flag("normalize", false).is_err());
        let mut s = Settings::new(None, []).unwrap();
        assert!(s.path("input").is_err());
        assert_eq!(s.optional::<f64>("tukey").unwrap(), None);
        assert_eq!(s.choice("mode", "plain", &["plain", "mixup"]).unwrap(), "plain");
    }
}
