//! Plain-text `key = value` configuration with `[section]` headers.
//!
//! Files parse into a flat ordered map with dotted keys
//! (`section.key = value`); command-line `--set key=value` overrides win.
//! The effective configuration snapshot written into every run directory is
//! this map serialized back out, sorted, so runs diff cleanly.

use std::collections::BTreeMap;
use std::path::Path;

#[derive(Clone, Debug, Default)]
pub struct Config {
    values: BTreeMap<String, String>,
}

impl Config {
    pub fn new() -> Config {
        Config::default()
    }

    pub fn parse(text: &str, origin: &str) -> Result<Config, String> {
        let mut cfg = Config::new();
        let mut section = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if line.starts_with('[') {
                if !line.ends_with(']') {
                    return Err(format!("{origin}:{}: unterminated section header", lineno + 1));
                }
                section = line[1..line.len() - 1].trim().to_string();
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(format!("{origin}:{}: expected `key = value`", lineno + 1));
            };
            let key = key.trim();
            if key.is_empty() {
                return Err(format!("{origin}:{}: empty key", lineno + 1));
            }
            let full = if section.is_empty() {
                key.to_string()
            } else {
                format!("{section}.{key}")
            };
            cfg.values.insert(full, value.trim().to_string());
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Config, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("{}: {e}", path.display()))?;
        Config::parse(&text, &path.display().to_string())
    }

    /// Apply a dotted `key=value` override.
    pub fn set(&mut self, assignment: &str) -> Result<(), String> {
        let Some((key, value)) = assignment.split_once('=') else {
            return Err(format!("--set needs key=value, got `{assignment}`"));
        };
        self.values.insert(key.trim().to_string(), value.trim().to_string());
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|s| s.as_str())
    }

    pub fn get_or(&self, key: &str, default: &str) -> String {
        self.get(key).unwrap_or(default).to_string()
    }

    pub fn get_parse<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T, String>
    where
        T::Err: std::fmt::Display,
    {
        match self.get(key) {
            None => Ok(default),
            Some(raw) => raw
                .parse()
                .map_err(|e| format!("config key `{key}` = `{raw}`: {e}")),
        }
    }

    pub fn insert(&mut self, key: &str, value: impl ToString) {
        self.values.insert(key.to_string(), value.to_string());
    }

    /// Snapshot, grouped back into sections, keys sorted.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let mut last_section = None::<String>;
        for (key, value) in &self.values {
            let (section, name) = match key.rsplit_once('.') {
                Some((s, n)) => (Some(s.to_string()), n),
                None => (None, key.as_str()),
            };
            if section != last_section {
                if let Some(s) = &section {
                    if !out.is_empty() {
                        out.push('\n');
                    }
                    out.push_str(&format!("[{s}]\n"));
                }
                last_section = section;
            }
            out.push_str(&format!("{name} = {value}\n"));
        }
        out
    }
}
