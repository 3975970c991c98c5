//! Loaders, synthetic data, model files and run manifests.

pub mod dataset;
pub mod manifest;
pub mod persist;
pub mod synth;

pub use dataset::{load_assistments, load_triplets, write_triplets, Dataset, IdMap, Schema, Vocab};
pub use manifest::{sha256_hex, RunManifest};
pub use persist::{load_model, save_model, ModelFile, MODEL_FORMAT_VERSION};
pub use synth::{generate_synthetic, Generator, SynthOutput, SynthSpec};
