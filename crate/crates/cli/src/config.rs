//! TOML config with one table per verb. Command-line flags win over the
//! file, the file wins over built-in defaults.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result, anyhow};
use memcart::hashing::sha256_hex;
use serde::de::DeserializeOwned;

#[derive(Debug, Clone, Default)]
pub struct Config {
    table: toml::Table,
}

impl Config {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let table = text
            .parse::<toml::Table>()
            .with_context(|| format!("parsing config {}", path.display()))?;
        Ok(Self { table })
    }

    pub fn from_table(table: toml::Table) -> Self {
        Self { table }
    }

    fn lookup<T: DeserializeOwned>(&self, section: &str, key: &str) -> Result<Option<T>> {
        let Some(v) = self.table.get(section).and_then(|s| s.get(key)) else {
            return Ok(None);
        };
        v.clone()
            .try_into()
            .map(Some)
            .map_err(|e| anyhow!("config [{section}] {key}: {e}"))
    }

    pub fn section<'a>(&'a self, name: &'static str) -> Resolver<'a> {
        Resolver {
            config: self,
            section: name,
            settings: BTreeMap::new(),
        }
    }
}

/// Resolves the settings of one verb and records every effective value,
/// so the run can be stamped with a hash of what it actually used.
pub struct Resolver<'a> {
    config: &'a Config,
    section: &'static str,
    settings: BTreeMap<String, String>,
}

impl Resolver<'_> {
    fn record(&mut self, key: &str, value: String) {
        self.settings.insert(key.to_owned(), value);
    }

    pub fn value<T>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T>
    where
        T: DeserializeOwned + Display,
    {
        let v = match flag {
            Some(v) => v,
            None => self.config.lookup(self.section, key)?.unwrap_or(default),
        };
        self.record(key, v.to_string());
        Ok(v)
    }

    pub fn optional<T>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>>
    where
        T: DeserializeOwned + Display,
    {
        let v = match flag {
            Some(v) => Some(v),
            None => self.config.lookup(self.section, key)?,
        };
        if let Some(v) = &v {
            self.record(key, v.to_string());
        }
        Ok(v)
    }

    pub fn required<T>(&mut self, key: &str, flag: Option<T>) -> Result<T>
    where
        T: DeserializeOwned + Display,
    {
        self.optional(key, flag)?
            .ok_or_else(|| anyhow!("missing --{} (or `{key}` under [{}] in the config)", key.replace('_', "-"), self.section))
    }

    pub fn path(&mut self, key: &str, flag: Option<PathBuf>) -> Result<PathBuf> {
        self.opt_path(key, flag)?
            .ok_or_else(|| anyhow!("missing --{} (or `{key}` under [{}] in the config)", key.replace('_', "-"), self.section))
    }

    pub fn opt_path(&mut self, key: &str, flag: Option<PathBuf>) -> Result<Option<PathBuf>> {
        let v = match flag {
            Some(v) => Some(v),
            None => self.config.lookup::<String>(self.section, key)?.map(PathBuf::from),
        };
        if let Some(p) = &v {
            self.record(key, p.display().to_string());
        }
        Ok(v)
    }

    pub fn flag(&mut self, key: &str, flag: bool) -> Result<bool> {
        let v = flag || self.config.lookup(self.section, key)?.unwrap_or(false);
        self.record(key, v.to_string());
        Ok(v)
    }

    pub fn settings(&self) -> &BTreeMap<String, String> {
        &self.settings
    }

    pub fn config_hash(&self) -> String {
        let mut text = format!("[{}]\n", self.section);
        for (k, v) in &self.settings {
            text.push_str(&format!("{k}={v}\n"));
        }
        sha256_hex(text)
    }

    /// Writes `<output>.meta.json` next to an output file.
    pub fn stamp(&self, output: &Path, extra: serde_json::Value) -> Result<String> {
        let hash = self.config_hash();
        let meta = serde_json::json!({
            "command": self.section,
            "config_hash": hash,
            "settings": self.settings,
            "tool_version": env!("CARGO_PKG_VERSION"),
            "outputs": extra,
        });
        let mut name = output.as_os_str().to_owned();
        name.push(".meta.json");
        let path = PathBuf::from(name);
        std::fs::write(&path, serde_json::to_string_pretty(&meta)? + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(hash)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(text: &str) -> Config {
        Config::from_table(text.parse().unwrap())
    }

    #[test]
    fn flag_beats_file_beats_default() {
        let c = cfg("[splits]\nseeds = 8\nmaster_seed = 3\n");
        let mut r = c.section("splits");
        assert_eq!(r.value("seeds", Some(4usize), 2).unwrap(), 4);
        assert_eq!(r.value("master_seed", None, 0u64).unwrap(), 3);
        assert_eq!(r.value("fraction", None, 0.5f64).unwrap(), 0.5);
        assert_eq!(r.settings()["seeds"], "4");
    }

    #[test]
    fn hash_follows_effective_values() {
        let a = cfg("[x]\nk = 1\n");
        let b = cfg("");
        let mut ra = a.section("x");
        ra.value("k", None, 0u32).unwrap();
        let mut rb = b.section("x");
        rb.value("k", Some(1u32), 0).unwrap();
        assert_eq!(ra.config_hash(), rb.config_hash());
        let mut rc = b.section("x");
        rc.value("k", None, 0u32).unwrap();
        assert_ne!(ra.config_hash(), rc.config_hash());
    }

    #[test]
    fn wrong_type_is_reported() {
        let c = cfg("[x]\nk = \"many\"\n");
        let err = c.section("x").value("k", None, 0u32).unwrap_err();
        assert!(err.to_string().contains("[x] k"));
    }

    #[test]
    fn missing_required() {
        let c = Config::default();
        let err = c.section("score").path("score_log", None).unwrap_err();
        assert!(err.to_string().contains("--score-log"));
    }
}
