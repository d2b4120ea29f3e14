//! Flat `key = value` configuration files with `include` directives.
//!
//! Later assignments override earlier ones for scalar lookups; [`KvConfig::all`]
//! returns every assignment in file order for repeatable keys. Includes are
//! resolved relative to the including file and expanded in place.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{origin}: expected `key = value`, got `{text}`")]
    Syntax { origin: String, text: String },
    #[error("{origin}: include cycle through {path}")]
    IncludeCycle { origin: String, path: String },
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{origin}: invalid value `{value}` for `{key}`: {message}")]
    Value { origin: String, key: String, value: String, message: String },
    #[error("missing required key `{0}`")]
    Missing(String),
    #[error("{origin}: unknown key `{key}`")]
    UnknownKey { origin: String, key: String },
}

/// Where an assignment came from, for error messages.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Origin {
    pub file: String,
    pub line: usize,
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.file, self.line)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub origin: Origin,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KvConfig {
    entries: Vec<Entry>,
}

impl KvConfig {
    /// Parses in-memory text; includes resolve against `base`.
    pub fn parse_str(text: &str, name: &str, base: Option<&Path>) -> Result<Self, ConfigError> {
        let mut cfg = KvConfig::default();
        let mut stack = HashSet::new();
        cfg.parse_into(text, name, base, &mut stack)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let mut cfg = KvConfig::default();
        let mut stack = HashSet::new();
        cfg.load_into(path, "<command line>", &mut stack)?;
        Ok(cfg)
    }

    fn load_into(&mut self, path: &Path, origin: &str, stack: &mut HashSet<PathBuf>) -> Result<(), ConfigError> {
        let canonical =
            path.canonicalize().map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        if !stack.insert(canonical.clone()) {
            return Err(ConfigError::IncludeCycle { origin: origin.to_string(), path: path.display().to_string() });
        }
        let text = std::fs::read_to_string(&canonical)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        self.parse_into(&text, &path.display().to_string(), canonical.parent(), stack)?;
        stack.remove(&canonical);
        Ok(())
    }

    fn parse_into(
        &mut self,
        text: &str,
        name: &str,
        base: Option<&Path>,
        stack: &mut HashSet<PathBuf>,
    ) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let origin = Origin { file: name.to_string(), line: i + 1 };
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("include").filter(|r| r.starts_with([' ', '\t', '='])) {
                let target = rest.trim_start().trim_start_matches('=').trim();
                let path = match base {
                    Some(dir) => dir.join(target),
                    None => PathBuf::from(target),
                };
                self.load_into(&path, &origin.to_string(), stack)?;
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(ConfigError::Syntax { origin: origin.to_string(), text: line.to_string() });
            };
            let key = k.trim();
            if key.is_empty() || key.contains(char::is_whitespace) {
                return Err(ConfigError::Syntax { origin: origin.to_string(), text: line.to_string() });
            }
            self.entries.push(Entry { key: key.to_string(), value: v.trim().to_string(), origin });
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.entries.push(Entry {
            key: key.to_string(),
            value: value.into(),
            origin: Origin { file: "<override>".into(), line: 0 },
        });
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn last(&self, key: &str) -> Option<&Entry> {
        self.entries.iter().rev().find(|e| e.key == key)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.last(key).map(|e| e.value.as_str())
    }

    pub fn all(&self, key: &str) -> Vec<&Entry> {
        self.entries.iter().filter(|e| e.key == key).collect()
    }

    /// Typed lookup of the last assignment, `None` when absent.
    pub fn parse<T>(&self, key: &str) -> Result<Option<T>, ConfigError>
    where
        T: FromStr,
        T::Err: fmt::Display,
    {
        let Some(e) = self.last(key) else { return Ok(None) };
        e.value.parse().map(Some).map_err(|err: T::Err| ConfigError::Value {
            origin: e.origin.to_string(),
            key: key.to_string(),
            value: e.value.clone(),
            message: err.to_string(),
        })
    }

    pub fn require<T>(&self, key: &str) -> Result<T, ConfigError>
    where
        T: FromStr,
        T::Err: fmt::Display,
    {
        self.parse(key)?.ok_or_else(|| ConfigError::Missing(key.to_string()))
    }

    /// Fails on the first key outside `known`.
    pub fn check_keys(&self, known: &[&str]) -> Result<(), ConfigError> {
        match self.entries.iter().find(|e| !known.contains(&e.key.as_str())) {
            Some(e) => Err(ConfigError::UnknownKey { origin: e.origin.to_string(), key: e.key.clone() }),
            None => Ok(()),
        }
    }

    pub fn value_error(entry: &Entry, message: impl Into<String>) -> ConfigError {
        ConfigError::Value {
            origin: entry.origin.to_string(),
            key: entry.key.clone(),
            value: entry.value.clone(),
            message: message.into(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn last_assignment_wins_and_lists_accumulate() {
        let c = KvConfig::parse_str("a = 1\n# note\nb = x y  # trailing\na = 2\nb = z\n", "t", None).unwrap();
        assert_eq!(c.get("a"), Some("2"));
        assert_eq!(c.all("b").iter().map(|e| e.value.as_str()).collect::<Vec<_>>(), ["x y", "z"]);
        assert_eq!(c.parse::<u32>("a").unwrap(), Some(2));
        assert!(c.parse::<u32>("b").is_err());
        assert!(matches!(c.require::<u32>("zz"), Err(ConfigError::Missing(_))));
    }

    #[test]
    fn syntax_errors_carry_line_numbers() {
        let err = KvConfig::parse_str("a = 1\nnonsense\n", "f.cfg", None).unwrap_err();
        assert_eq!(err.to_string(), "f.cfg:2: expected `key = value`, got `nonsense`");
    }

    #[test]
    fn includes_are_relative_and_cycles_rejected() {
        let dir = std::env::temp_dir().join(format!("kvcfg-{}", std::process::id()));
        std::fs::create_dir_all(dir.join("sub")).unwrap();
        std::fs::write(dir.join("sub/base.cfg"), "a = 1\nb = 1\n").unwrap();
        std::fs::write(dir.join("main.cfg"), "include sub/base.cfg\nb = 2\n").unwrap();
        let c = KvConfig::load(&dir.join("main.cfg")).unwrap();
        assert_eq!(c.get("a"), Some("1"));
        assert_eq!(c.get("b"), Some("2"));

        std::fs::write(dir.join("x.cfg"), "include = y.cfg\n").unwrap();
        std::fs::write(dir.join("y.cfg"), "include x.cfg\n").unwrap();
        assert!(matches!(KvConfig::load(&dir.join("x.cfg")), Err(ConfigError::IncludeCycle { .. })));
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn unknown_keys_are_reported() {
        let c = KvConfig::parse_str("a = 1\nzz = 2\n", "t", None).unwrap();
        assert!(c.check_keys(&["a", "zz"]).is_ok());
        assert!(matches!(c.check_keys(&["a"]), Err(ConfigError::UnknownKey { .. })));
    }
}
