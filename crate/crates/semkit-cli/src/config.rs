//! Flat key-value run configuration: `section.key = value` lines with `#`
//! comments. Command-line flags override file values; every artifact embeds
//! the resolved settings it was produced with.

use anyhow::{anyhow, Context, Result};
use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

#[derive(Clone, Debug, Default)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<RunConfig> {
        let mut config = RunConfig::default();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            for (i, line) in text.lines().enumerate() {
                let line = line.split('#').next().unwrap_or("").trim();
                if line.is_empty() {
                    continue;
                }
                let (key, value) = line
                    .split_once('=')
                    .ok_or_else(|| anyhow!("config line {}: expected `key = value`", i + 1))?;
                config
                    .values
                    .insert(key.trim().to_string(), value.trim().to_string());
            }
        }
        Ok(config)
    }

    /// Flag value wins, then the config file, then the default.
    pub fn resolve<T: FromStr + ToString>(
        &mut self,
        key: &str,
        flag: Option<T>,
        default: T,
    ) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let value = match flag {
            Some(v) => v,
            None => match self.values.get(key) {
                Some(raw) => raw
                    .parse()
                    .map_err(|e| anyhow!("config key {key}: {e}"))?,
                None => default,
            },
        };
        self.values.insert(key.to_string(), value.to_string());
        Ok(value)
    }

    /// The resolved settings, for embedding into output artifacts.
    pub fn resolved_json(&self) -> serde_json::Value {
        serde_json::json!(self.values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_values() {
        let dir = std::env::temp_dir().join("semkit-config-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("run.conf");
        std::fs::write(&path, "synth.seed = 7\nsynth.n = 50 # fifty\n").unwrap();
        let mut config = RunConfig::load(Some(&path)).unwrap();
        assert_eq!(config.resolve("synth.seed", None::<u64>, 0).unwrap(), 7);
        assert_eq!(config.resolve("synth.n", Some(10usize), 1).unwrap(), 10);
        assert_eq!(config.resolve("synth.budget", None::<usize>, 64).unwrap(), 64);
        let resolved = config.resolved_json();
        assert_eq!(resolved["synth.n"], "10");
        assert_eq!(resolved["synth.seed"], "7");
    }

    #[test]
    fn malformed_lines_rejected() {
        let dir = std::env::temp_dir().join("semkit-config-test2");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.conf");
        std::fs::write(&path, "just words\n").unwrap();
        assert!(RunConfig::load(Some(&path)).is_err());
    }
}
