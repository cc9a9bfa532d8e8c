//! Plain-text `key = value` configuration parsing shared by model, training,
//! and CLI config files, plus the digest used to tie checkpoints to the
//! config they were produced under.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Parse `key = value` lines into a map. Blank lines and `#` comments are
/// ignored; a repeated key keeps the last value, which is how file values
/// are overridden by appended CLI flags.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or(Error::Format {
            line: idx + 1,
            msg: format!("expected 'key = value', got '{line}'"),
        })?;
        let key = key.trim();
        if key.is_empty() {
            return Err(Error::Format { line: idx + 1, msg: "empty key".into() });
        }
        map.insert(key.to_string(), value.trim().to_string());
    }
    Ok(map)
}

/// Typed lookups over a parsed key-value map with explicit defaults, so
/// precedence is: built-in default < config file < CLI flag.
pub struct ConfigMap {
    map: BTreeMap<String, String>,
}

impl ConfigMap {
    pub fn from_text(text: &str) -> Result<ConfigMap> {
        Ok(ConfigMap { map: parse_key_values(text)? })
    }

    pub fn empty() -> ConfigMap {
        ConfigMap { map: BTreeMap::new() }
    }

    /// Later sources win; used to layer a config file under CLI overrides.
    pub fn set(&mut self, key: &str, value: String) {
        self.map.insert(key.to_string(), value);
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(|s| s.as_str())
    }

    pub fn get_f64(&self, key: &str, default: f64) -> Result<f64> {
        match self.map.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::Config(format!("'{key}' must be a number, got '{v}'"))),
        }
    }

    pub fn get_usize(&self, key: &str, default: usize) -> Result<usize> {
        match self.map.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::Config(format!("'{key}' must be a non-negative integer, got '{v}'"))),
        }
    }

    pub fn get_u64(&self, key: &str, default: u64) -> Result<u64> {
        match self.map.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::Config(format!("'{key}' must be a non-negative integer, got '{v}'"))),
        }
    }

    pub fn get_str<'a>(&'a self, key: &str, default: &'a str) -> &'a str {
        self.map.get(key).map(|s| s.as_str()).unwrap_or(default)
    }
}

/// FNV-1a 64-bit hash; stable across platforms, used for config digests.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_blank_lines_and_overrides() {
        let map = parse_key_values("# comment\n\na = 1\nb = two words\na = 3\n").unwrap();
        assert_eq!(map.get("a").unwrap(), "3");
        assert_eq!(map.get("b").unwrap(), "two words");
    }

    #[test]
    fn missing_equals_is_format_error_with_line() {
        match parse_key_values("a = 1\nnonsense line\n") {
            Err(Error::Format { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn typed_lookups_with_defaults() {
        let mut c = ConfigMap::from_text("lr = 1e-3\nepochs = 50\n").unwrap();
        assert_eq!(c.get_f64("lr", 1e-5).unwrap(), 1e-3);
        assert_eq!(c.get_usize("epochs", 100).unwrap(), 50);
        assert_eq!(c.get_usize("batch_size", 75).unwrap(), 75);
        assert!(c.get_f64("epochs_bad", 0.0).is_ok());
        c.set("lr", "not a number".into());
        assert!(c.get_f64("lr", 0.0).is_err());
    }

    #[test]
    fn fnv_known_vectors() {
        // Reference values for the 64-bit FNV-1a test suite.
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }
}
