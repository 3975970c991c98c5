//! Optional TOML run configuration. Command-line flags take precedence.

use std::path::Path;

use anyhow::Context;
use serde::{Deserialize, Serialize};

#[derive(Debug, Default, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub folds: Option<usize>,
    pub split: Option<String>,
    pub preset: Option<String>,
    pub d: Option<usize>,
    pub grid: Option<Vec<String>>,
    pub link: Option<String>,
    pub epochs: Option<usize>,
    pub learning_rate: Option<f64>,
    pub l2: Option<f64>,
    pub init_std: Option<f64>,
    pub burn_in: Option<usize>,
    pub full_batch: Option<bool>,
    pub point_estimate: Option<bool>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

/// First of flag, config value, default.
pub fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}
