use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, KtmError>;

#[derive(Debug, Error)]
pub enum KtmError {
    #[error("unknown feature block `{0}`")]
    UnknownBlock(String),
    #[error("duplicate feature block `{0}`")]
    DuplicateBlock(String),
    #[error("feature block `{0}` must have positive width")]
    EmptyBlock(String),
    #[error("local id {id} out of range for block `{block}` of width {width}")]
    LocalIdOutOfRange {
        block: String,
        id: usize,
        width: usize,
    },
    #[error("feature index {index} out of range for {width} features")]
    IndexOutOfRange { index: usize, width: usize },
    #[error("sparse row indices must be strictly increasing (found {prev} then {next})")]
    UnsortedRow { prev: usize, next: usize },
    #[error("non-finite value {value} at feature {index}")]
    NonFinite { index: usize, value: f64 },
    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("label must be 0 or 1, got {0}")]
    InvalidLabel(String),
    #[error("invalid encoding config: {0}")]
    InvalidConfig(String),
    #[error("{kind} id {id} out of range (count {count})")]
    IdOutOfRange {
        kind: &'static str,
        id: usize,
        count: usize,
    },
    #[error("invalid q-matrix: {0}")]
    InvalidQMatrix(String),
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
    #[error("preset {preset} is incompatible: {reason}")]
    IncompatiblePreset { preset: String, reason: String },
    #[error("training diverged: non-finite loss at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("empty dataset")]
    EmptyData,
    #[error("invalid fold spec: {0}")]
    InvalidFolds(String),
    #[error("invalid training config: {0}")]
    InvalidTrainConfig(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("unknown {kind} value `{value}`")]
    UnknownCategory { kind: String, value: String },
    #[error("model format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("vocabulary digest mismatch: model has {model}, vocabulary has {vocab}")]
    DigestMismatch { model: String, vocab: String },
    #[error("corrupt model: {0}")]
    CorruptModel(String),
    #[error("invalid synthetic spec: {0}")]
    InvalidSynth(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl KtmError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        KtmError::Io {
            path: path.into(),
            source,
        }
    }
}
