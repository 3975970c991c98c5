//! Versioned JSON model files.
//!
//! The file carries the feature layout, encoding, link and parameters, the
//! digest of the vocabulary used at encode time and a checksum over all of it.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::EncodingConfig;
use crate::error::{KtmError, Result};
use crate::io::dataset::Vocab;
use crate::io::manifest::sha256_hex;
use crate::model::{FMParams, Link};
use crate::sparse::FeatureSpace;

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub preset: String,
    pub link: Link,
    pub encoding: EncodingConfig,
    pub space: FeatureSpace,
    pub params: FMParams,
    pub vocab_digest: String,
    #[serde(default)]
    pub checksum: String,
}

impl ModelFile {
    pub fn new(
        preset: &str,
        link: Link,
        encoding: EncodingConfig,
        space: FeatureSpace,
        params: FMParams,
        vocab: &Vocab,
    ) -> Result<Self> {
        let mut model = Self {
            format_version: MODEL_FORMAT_VERSION,
            preset: preset.to_string(),
            link,
            encoding,
            space,
            params,
            vocab_digest: vocab.digest(),
            checksum: String::new(),
        };
        model.validate_layout()?;
        model.checksum = model.compute_checksum()?;
        Ok(model)
    }

    fn compute_checksum(&self) -> Result<String> {
        let body = Self {
            checksum: String::new(),
            ..self.clone()
        };
        Ok(sha256_hex(serde_json::to_string(&body)?.as_bytes()))
    }

    fn validate_layout(&self) -> Result<()> {
        if self.params.n_features() != self.space.total_width() {
            return Err(KtmError::CorruptModel(format!(
                "{} biases for a {}-wide feature space",
                self.params.n_features(),
                self.space.total_width()
            )));
        }
        self.params.check_finite()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| KtmError::CorruptModel(e.to_string()))?;
        let found = value
            .get("format_version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| KtmError::CorruptModel("missing format_version".into()))?;
        if found != u64::from(MODEL_FORMAT_VERSION) {
            return Err(KtmError::VersionMismatch {
                found: found as u32,
                expected: MODEL_FORMAT_VERSION,
            });
        }
        let model: Self =
            serde_json::from_value(value).map_err(|e| KtmError::CorruptModel(e.to_string()))?;
        let checksum = model.compute_checksum()?;
        if checksum != model.checksum {
            return Err(KtmError::CorruptModel("checksum mismatch".into()));
        }
        model.validate_layout()?;
        Ok(model)
    }

    pub fn check_vocab(&self, vocab: &Vocab) -> Result<()> {
        let digest = vocab.digest();
        if digest != self.vocab_digest {
            return Err(KtmError::DigestMismatch {
                model: self.vocab_digest.clone(),
                vocab: digest,
            });
        }
        Ok(())
    }
}

pub fn save_model(model: &ModelFile, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, model.to_json()?).map_err(|e| KtmError::io(path, e))
}

/// Loads and verifies a model; with `vocab`, also refuses a model encoded
/// under a different vocabulary.
pub fn load_model(path: impl AsRef<Path>, vocab: Option<&Vocab>) -> Result<ModelFile> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| KtmError::io(path, e))?;
    let model = ModelFile::from_json(&text)?;
    if let Some(v) = vocab {
        model.check_vocab(v)?;
    }
    Ok(model)
}
