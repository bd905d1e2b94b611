//! Key-value configuration files with SI-suffixed decimal values.
//!
//! Format: one `key = value` pair per line, `#` comments, blank lines
//! ignored. Values are decimal numbers with an optional SI suffix
//! (`p n u m k M G`), e.g. `f_lo = 120M` or `sigma_t = 1.2p`. Unknown keys
//! are rejected so typos cannot silently fall back to defaults.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

#[derive(Debug)]
pub struct ConfigError {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config line {}: {}", self.line, self.message)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Default)]
pub struct KeyValues {
    entries: BTreeMap<String, (usize, String)>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(ConfigError {
                line: i + 1,
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if key.is_empty() || value.is_empty() {
                return Err(ConfigError {
                    line: i + 1,
                    message: "empty key or value".into(),
                });
            }
            if entries.insert(key.clone(), (i + 1, value)).is_some() {
                return Err(ConfigError {
                    line: i + 1,
                    message: format!("duplicate key `{key}`"),
                });
            }
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
            line: 0,
            message: format!("cannot read {}: {e}", path.display()),
        })?;
        Self::parse(&text)
    }

    /// Take a numeric value (SI suffixes allowed), removing it from the set.
    pub fn take_number(&mut self, key: &str) -> Result<Option<f64>, ConfigError> {
        match self.entries.remove(key) {
            None => Ok(None),
            Some((line, v)) => parse_si_number(&v)
                .map(Some)
                .ok_or(ConfigError {
                    line,
                    message: format!("key `{key}`: `{v}` is not a number"),
                }),
        }
    }

    pub fn take_string(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key).map(|(_, v)| v)
    }

    /// Error out if any keys were never consumed.
    pub fn reject_unknown(&self) -> Result<(), ConfigError> {
        if let Some((key, (line, _))) = self.entries.iter().next() {
            return Err(ConfigError {
                line: *line,
                message: format!("unknown key `{key}`"),
            });
        }
        Ok(())
    }
}

/// Parse `12.5k`, `-1.2p`, `3e8`, `0.5` and friends.
pub fn parse_si_number(s: &str) -> Option<f64> {
    let s = s.trim();
    if let Ok(v) = s.parse::<f64>() {
        return Some(v);
    }
    let (head, suffix) = s.split_at(s.len().checked_sub(1)?);
    let scale = match suffix {
        "p" => 1e-12,
        "n" => 1e-9,
        "u" => 1e-6,
        "m" => 1e-3,
        "k" => 1e3,
        "M" => 1e6,
        "G" => 1e9,
        _ => return None,
    };
    head.trim().parse::<f64>().ok().map(|v| v * scale)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_si_suffixes() {
        assert_eq!(parse_si_number("120M"), Some(120e6));
        assert_eq!(parse_si_number("1.2p"), Some(1.2e-12));
        assert_eq!(parse_si_number("-5m"), Some(-5e-3));
        assert_eq!(parse_si_number("3e8"), Some(3e8));
        assert_eq!(parse_si_number("50"), Some(50.0));
        assert_eq!(parse_si_number("junk"), None);
    }

    #[test]
    fn rejects_unknown_keys() {
        let mut kv = KeyValues::parse("f_lo = 120M\nbogus = 1\n").unwrap();
        assert_eq!(kv.take_number("f_lo").unwrap(), Some(120e6));
        assert!(kv.reject_unknown().is_err());
    }

    #[test]
    fn rejects_duplicates_and_garbage() {
        assert!(KeyValues::parse("a = 1\na = 2\n").is_err());
        assert!(KeyValues::parse("nonsense line\n").is_err());
        let kv = KeyValues::parse("# comment only\n\n").unwrap();
        assert!(kv.reject_unknown().is_ok());
    }
}
