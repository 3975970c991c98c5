//! Knowledge tracing machines.
//!
//! Student interaction logs are encoded into sparse rows over users, items,
//! skills, win/fail/attempt counters and extra categorical columns, then
//! scored by a second-order factorization machine
//!
//! ```text
//! link(p(x)) = mu + sum_k w_k x_k + sum_{k<l} x_k x_l <v_k, v_l>
//! ```
//!
//! With `d = 0` and the right block selection the machine is exactly IRT,
//! AFM or PFA; with users and items and `d > 0` it is MIRT with biases.
//! Models are fit by MAP gradient descent (logit link) or Gibbs sampling
//! (probit link) and compared under k-fold cross-validation.

pub mod encoder;
pub mod error;
pub mod eval;
pub mod io;
pub mod model;
pub mod sparse;
pub mod trainers;

pub use encoder::{encode_dataset, CounterState, EncodingConfig, ExtraColumn, QMatrix, Triplet};
pub use error::{KtmError, Result};
pub use model::{export_embeddings, preset_encoding, FMParams, Link, Preset};
pub use sparse::{DesignMatrix, FeatureSpace, SparseRow};
pub use trainers::{train_gibbs_probit, train_map_logit, TrainConfig};
