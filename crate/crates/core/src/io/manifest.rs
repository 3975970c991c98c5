use std::collections::BTreeMap;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{KtmError, Result};

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_digest(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| KtmError::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Provenance record written next to every CLI output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub config_digest: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    pub started_unix: u64,
    pub finished_unix: u64,
}

impl RunManifest {
    pub fn start(command: &str, seed: u64, config: serde_json::Value) -> Self {
        // serde_json maps are key-sorted, so this is stable across platforms
        let config_digest = sha256_hex(config.to_string().as_bytes());
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            seed,
            config,
            config_digest,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            started_unix: unix_now(),
            finished_unix: 0,
        }
    }

    pub fn add_input(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.inputs
            .insert(path.display().to_string(), file_digest(path)?);
        Ok(())
    }

    pub fn add_output(&mut self, path: impl AsRef<Path>) {
        self.outputs.push(path.as_ref().display().to_string());
    }

    pub fn finish(&mut self) {
        self.finished_unix = unix_now();
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| KtmError::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_known_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn config_digest_ignores_key_order() {
        let a = RunManifest::start("cv", 1, serde_json::json!({"a": 1, "b": [1, 2]}));
        let b = RunManifest::start("cv", 1, serde_json::json!({"b": [1, 2], "a": 1}));
        assert_eq!(a.config_digest, b.config_digest);
    }
}
