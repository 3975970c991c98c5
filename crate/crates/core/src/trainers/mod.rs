//! Training procedures: MAP gradient descent under the logit link and Gibbs
//! sampling with truncated-normal data augmentation under the probit link.

mod gibbs;
mod map;
pub mod truncnorm;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use gibbs::{train_gibbs_probit, GibbsOutput, HyperPriors};
pub use map::{regularized_objective, row_gradient, row_nll, train_map_logit, RowGradient};

use crate::error::{KtmError, Result};
use crate::eval::metrics;
use crate::model::{FMParams, Link};
use crate::sparse::DesignMatrix;

/// Named RNG streams derived from the single run seed.
#[derive(Debug, Clone, Copy)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    Shuffle = 2,
    Sampler = 3,
    Folds = 4,
    Synth = 5,
}

pub fn rng_for(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BatchMode {
    /// One shuffled pass of per-row updates per epoch.
    Stochastic,
    /// One gradient step on the mean objective per epoch.
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub dim: usize,
    /// Epochs for MAP, sampling iterations for Gibbs.
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub seed: u64,
    pub init_std: f64,
    pub batch: BatchMode,
    /// Gibbs burn-in; `None` means 20% of `epochs`.
    pub burn_in: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dim: 0,
            epochs: 100,
            learning_rate: 0.01,
            l2: 0.01,
            seed: 42,
            init_std: 0.01,
            batch: BatchMode::Stochastic,
            burn_in: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(KtmError::InvalidTrainConfig(msg.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive");
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return bad("l2 must be nonnegative");
        }
        if !(self.init_std > 0.0 && self.init_std.is_finite()) {
            return bad("init std must be positive");
        }
        Ok(())
    }

    pub fn burn_in(&self) -> usize {
        self.burn_in.unwrap_or(self.epochs / 5)
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_nll: f64,
    pub test: Option<TestMetrics>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestMetrics {
    pub acc: f64,
    pub auc: Option<f64>,
    pub nll: f64,
}

impl TestMetrics {
    pub fn compute(predictions: &[f64], labels: &[u8]) -> Result<Self> {
        Ok(Self {
            acc: metrics::accuracy(predictions, labels)?,
            auc: metrics::auc(predictions, labels)?,
            nll: metrics::nll(predictions, labels)?,
        })
    }
}

/// CSV with header `epoch,train_nll[,test_acc,test_auc,test_nll]`.
pub fn log_to_csv(log: &[EpochRecord]) -> String {
    let with_test = log.iter().any(|r| r.test.is_some());
    let mut out = String::from(if with_test {
        "epoch,train_nll,test_acc,test_auc,test_nll\n"
    } else {
        "epoch,train_nll\n"
    });
    for r in log {
        out.push_str(&format!("{},{}", r.epoch, r.train_nll));
        if with_test {
            match r.test {
                Some(t) => {
                    let auc = t.auc.map_or("NA".to_string(), |a| a.to_string());
                    out.push_str(&format!(",{},{auc},{}", t.acc, t.nll));
                }
                None => out.push_str(",NA,NA,NA"),
            }
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub params: FMParams,
    pub link: Link,
    pub log: Vec<EpochRecord>,
    pub test_predictions: Option<Vec<f64>>,
}

pub use metrics::nll;

/// Trains with the procedure matching `link`: MAP gradient descent for logit,
/// Gibbs sampling for probit.
pub fn fit(
    train: &DesignMatrix,
    test: Option<&DesignMatrix>,
    config: &TrainConfig,
    link: Link,
    priors: &HyperPriors,
) -> Result<TrainOutput> {
    match link {
        Link::Logit => train_map_logit(train, test, config),
        Link::Probit => Ok(train_gibbs_probit(train, test, config, priors)?.into()),
    }
}

/// `μ = 0`, `w = 0`, `V ~ N(0, init_std²)` from the init stream of `seed`.
pub fn init_params(config: &TrainConfig, n_features: usize) -> FMParams {
    let mut params = FMParams::zeros(n_features, config.dim);
    if config.dim > 0 {
        let mut rng = rng_for(config.seed, Stream::Init);
        let normal = Normal::new(0.0, config.init_std).expect("validated std");
        for x in params.embeddings_mut() {
            *x = normal.sample(&mut rng);
        }
    }
    params
}

/// Features with at least one nonzero in `data`.
pub(crate) fn seen_features(data: &DesignMatrix) -> Vec<bool> {
    let mut seen = vec![false; data.width()];
    for row in data.rows() {
        for &(k, _) in row.entries() {
            seen[k] = true;
        }
    }
    seen
}

/// Resets never-observed features to the prior mean of zero.
pub(crate) fn zero_unseen(params: &mut FMParams, seen: &[bool]) {
    for (k, &s) in seen.iter().enumerate() {
        if !s {
            params.w[k] = 0.0;
            params.embedding_mut(k).fill(0.0);
        }
    }
}

pub fn predict_all(params: &FMParams, data: &DesignMatrix, link: Link) -> Vec<f64> {
    data.rows()
        .iter()
        .map(|x| link.inverse(params.raw_score_unchecked(x)))
        .collect()
}

pub(crate) fn check_compatible(train: &DesignMatrix, test: Option<&DesignMatrix>) -> Result<()> {
    if train.is_empty() {
        return Err(KtmError::EmptyData);
    }
    if let Some(test) = test {
        if test.width() != train.width() {
            return Err(KtmError::LengthMismatch {
                expected: train.width(),
                actual: test.width(),
            });
        }
    }
    let first = train.labels()[0];
    if train.labels().iter().all(|&y| y == first) {
        log::warn!("all training labels equal {first}");
    }
    Ok(())
}
