//! Plain-text configuration files.
//!
//! Grammar, one setting per line:
//!
//! ```text
//! # comment
//! key = value   # trailing comment
//! ```
//!
//! Keys are the long flag names without the leading dashes; `-` and `_` are
//! interchangeable. Blank lines are ignored, a key may appear only once, and
//! values run to the end of the line (or to a ` #` comment).

use std::collections::BTreeMap;
use std::path::Path;

pub const KEYS: &[&str] = &[
    "mode",
    "prior",
    "sigma",
    "mu",
    "mu_t",
    "sigma_t2",
    "cutoff",
    "grid",
    "out",
    "seed",
    "k_max",
    "mc_samples",
];

#[derive(Debug, Default, Clone, PartialEq)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut values = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let line = line.split_once(" #").map_or(line, |(body, _)| body).trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| format!("config line {}: expected `key = value`", lineno + 1))?;
            let key = key.trim().replace('-', "_");
            if !KEYS.contains(&key.as_str()) {
                return Err(format!("config line {}: unknown key `{key}`", lineno + 1));
            }
            let value = value.trim();
            if value.is_empty() {
                return Err(format!("config line {}: `{key}` has no value", lineno + 1));
            }
            if values.insert(key.clone(), value.to_string()).is_some() {
                return Err(format!("config line {}: `{key}` set twice", lineno + 1));
            }
        }
        Ok(Self { values })
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        Self::parse(&text)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    /// The flag value when given, otherwise the parsed config value.
    pub fn merge<T>(&self, flag: Option<T>, key: &str) -> Result<Option<T>, String>
    where
        T: std::str::FromStr,
        T::Err: std::fmt::Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        self.get(key)
            .map(|v| v.parse::<T>().map_err(|e| format!("config `{key} = {v}`: {e}")))
            .transpose()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_keys_comments_and_dashes() {
        let c = ConfigFile::parse("# sweep\nmode = fig2\nmu-t = 2   # fixed mean\n\ngrid=0.2:2:10:log\n").unwrap();
        assert_eq!(c.get("mode"), Some("fig2"));
        assert_eq!(c.get("mu_t"), Some("2"));
        assert_eq!(c.get("grid"), Some("0.2:2:10:log"));
        assert_eq!(c.get("sigma"), None);
    }

    #[test]
    fn rejects_malformed_lines() {
        assert!(ConfigFile::parse("sigma 1").is_err());
        assert!(ConfigFile::parse("colour = red").is_err());
        assert!(ConfigFile::parse("sigma =").is_err());
        assert!(ConfigFile::parse("sigma = 1\nsigma = 2").is_err());
    }

    #[test]
    fn flags_win_over_file() {
        let c = ConfigFile::parse("sigma = 1.5\nseed = 4").unwrap();
        assert_eq!(c.merge(Some(2.0f64), "sigma").unwrap(), Some(2.0));
        assert_eq!(c.merge(None::<f64>, "sigma").unwrap(), Some(1.5));
        assert_eq!(c.merge(None::<u64>, "seed").unwrap(), Some(4));
        assert_eq!(c.merge(None::<u64>, "k_max").unwrap(), None);
        assert!(ConfigFile::parse("seed = x")
            .unwrap()
            .merge(None::<u64>, "seed")
            .is_err());
    }
}
