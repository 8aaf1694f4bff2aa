//! Flat key-value run configuration: `key = value` lines, `#`
//! comments. CLI flags override file values; unknown keys are
//! rejected so typos surface as configuration errors.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{AvnError, Result};

/// Every recognized key with its default, as (key, default, doc).
pub const KNOWN_KEYS: &[(&str, &str, &str)] = &[
    ("seed", "0", "master seed; every subsystem derives from it"),
    ("embed_dim", "16", "token/node feature dimensionality"),
    ("num_heads", "2", "attention heads (must divide embed_dim)"),
    ("train_worlds", "30", "number of training worlds"),
    ("unseen_worlds", "4", "number of held-out test worlds"),
    ("nav_episodes_per_world", "30", "imitation episodes per training world"),
    ("gate_episodes_per_world", "6", "gate-training episode pairs per training world"),
    ("test_episodes", "100", "test episode pairs on unseen worlds"),
    ("nav_iterations", "8000", "navigator imitation iterations"),
    ("nav_lr", "3e-3", "navigator learning rate"),
    ("pretrain_iterations", "7000", "relevance-span pre-training iterations"),
    ("pretrain_lr", "1e-4", "pre-training learning rate"),
    ("pretrain_hidden", "16", "pre-training BiLSTM hidden size"),
    ("pretrain_holdout", "0.2", "pre-training validation fraction"),
    ("iv_iterations", "2000", "IV classifier training iterations"),
    ("iv_lr", "1e-4", "IV learning rate"),
    ("baseline_iterations", "2000", "linear baseline training iterations"),
    ("baseline_lr", "1e-2", "linear baseline learning rate"),
    ("cp_tolerance", "0.9", "conformal tolerance (target coverage of flags)"),
    ("entropy_epsilon", "0.1", "entropy pseudo-label margin ε"),
    ("max_steps", "15", "rollout step budget"),
    ("out_dir", "out", "artifact/report directory"),
];

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Config {
    values: BTreeMap<String, String>,
}

impl Config {
    pub fn defaults() -> Self {
        let values = KNOWN_KEYS
            .iter()
            .map(|(k, v, _)| (k.to_string(), v.to_string()))
            .collect();
        Config { values }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| AvnError::io(path.display().to_string(), e))?;
        let mut cfg = Config::defaults();
        for (lineno, line) in raw.lines().enumerate() {
            let line = line.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                AvnError::Config(format!(
                    "{}:{}: expected `key = value`",
                    path.display(),
                    lineno + 1
                ))
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !KNOWN_KEYS.iter().any(|(k, _, _)| *k == key) {
            return Err(AvnError::Config(format!("unknown config key `{key}`")));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn get(&self, key: &str) -> Result<&str> {
        self.values
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| AvnError::Config(format!("unknown config key `{key}`")))
    }

    pub fn get_u64(&self, key: &str) -> Result<u64> {
        let v = self.get(key)?;
        v.parse()
            .map_err(|_| AvnError::Config(format!("key `{key}`: `{v}` is not an integer")))
    }

    pub fn get_usize(&self, key: &str) -> Result<usize> {
        let v = self.get(key)?;
        v.parse()
            .map_err(|_| AvnError::Config(format!("key `{key}`: `{v}` is not an integer")))
    }

    pub fn get_f64(&self, key: &str) -> Result<f64> {
        let v = self.get(key)?;
        v.parse()
            .map_err(|_| AvnError::Config(format!("key `{key}`: `{v}` is not a number")))
    }

    pub fn get_path(&self, key: &str) -> Result<PathBuf> {
        Ok(PathBuf::from(self.get(key)?))
    }

    /// Config echo in file syntax (stable ordering).
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.values {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(v);
            out.push('\n');
        }
        out
    }
}
