//! Bayesian factorization machine under the probit link.
//!
//! Each sweep draws latent utilities from truncated normals, then every
//! parameter from its Gaussian full conditional (the score is linear in any
//! single parameter), then the per-group prior mean and precision. Biases form
//! one prior group and every embedding dimension forms its own group, with
//! hyperpriors `mean ~ N(0, 1)` and `precision ~ Gamma(shape 1, rate 1)`. The
//! global bias has a flat prior.

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use super::truncnorm::sample_latent;
use super::{
    check_compatible, init_params, predict_all, rng_for, seen_features, zero_unseen, EpochRecord,
    Stream, TestMetrics, TrainConfig, TrainOutput,
};
use crate::error::Result;
use crate::eval::metrics;
use crate::model::{FMParams, Link};
use crate::sparse::DesignMatrix;

/// Hyperprior constants for every prior group.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperPriors {
    pub mean_mean: f64,
    pub mean_precision: f64,
    pub precision_shape: f64,
    pub precision_rate: f64,
}

impl Default for HyperPriors {
    fn default() -> Self {
        Self {
            mean_mean: 0.0,
            mean_precision: 1.0,
            precision_shape: 1.0,
            precision_rate: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Group {
    mean: f64,
    precision: f64,
}

impl Group {
    fn initial() -> Self {
        Self {
            mean: 0.0,
            precision: 1.0,
        }
    }

    fn resample<R: Rng>(&mut self, rng: &mut R, values: impl Iterator<Item = f64> + Clone, priors: &HyperPriors) {
        let count = values.clone().count() as f64;
        let sum: f64 = values.clone().sum();
        let mean_prec = priors.mean_precision + count * self.precision;
        let mean_mu = (priors.mean_precision * priors.mean_mean + self.precision * sum) / mean_prec;
        self.mean = gaussian(rng, mean_mu, mean_prec);

        let sq: f64 = values.map(|x| (x - self.mean) * (x - self.mean)).sum();
        let shape = priors.precision_shape + 0.5 * count;
        let rate = priors.precision_rate + 0.5 * sq;
        let drawn = Gamma::new(shape, 1.0 / rate)
            .map(|g| g.sample(rng))
            .unwrap_or(f64::NAN);
        self.precision = if drawn.is_finite() && drawn > 0.0 {
            drawn
        } else {
            log::warn!("prior precision draw {drawn} is unusable; resetting to 1");
            1.0
        };
    }
}

fn gaussian<R: Rng>(rng: &mut R, mean: f64, precision: f64) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    mean + z / precision.sqrt()
}

#[derive(Debug, Clone)]
pub struct GibbsOutput {
    /// Post-burn-in average of the sampled parameters.
    pub params: FMParams,
    /// Running average of per-sweep test probabilities after burn-in.
    pub test_predictions: Option<Vec<f64>>,
    pub log: Vec<EpochRecord>,
}

impl From<GibbsOutput> for TrainOutput {
    fn from(out: GibbsOutput) -> Self {
        TrainOutput {
            params: out.params,
            link: Link::Probit,
            log: out.log,
            test_predictions: out.test_predictions,
        }
    }
}

/// Column view: for every feature, the rows where it is nonzero.
struct Columns {
    cols: Vec<Vec<(usize, f64)>>,
}

impl Columns {
    fn new(data: &DesignMatrix) -> Self {
        let mut cols = vec![Vec::new(); data.width()];
        for (r, row) in data.rows().iter().enumerate() {
            for &(k, x) in row.entries() {
                cols[k].push((r, x));
            }
        }
        Self { cols }
    }
}

struct RunningMean {
    sum: Vec<f64>,
    count: usize,
}

impl RunningMean {
    fn new(len: usize) -> Self {
        Self {
            sum: vec![0.0; len],
            count: 0,
        }
    }

    fn add(&mut self, values: impl IntoIterator<Item = f64>) {
        for (s, v) in self.sum.iter_mut().zip(values) {
            *s += v;
        }
        self.count += 1;
    }

    fn mean(&self) -> Vec<f64> {
        let n = self.count.max(1) as f64;
        self.sum.iter().map(|s| s / n).collect()
    }
}

pub fn train_gibbs_probit(
    train: &DesignMatrix,
    test: Option<&DesignMatrix>,
    cfg: &TrainConfig,
    priors: &HyperPriors,
) -> Result<GibbsOutput> {
    cfg.validate()?;
    check_compatible(train, test)?;
    let d = cfg.dim;
    let n_rows = train.len();
    let mut params = init_params(cfg, train.width());
    let seen = seen_features(train);
    zero_unseen(&mut params, &seen);
    let active: Vec<usize> = (0..train.width()).filter(|&k| seen[k]).collect();
    let columns = Columns::new(train);
    let labels = train.labels();
    let burn_in = cfg.burn_in();

    let mut rng = rng_for(cfg.seed, Stream::Sampler);
    let mut bias_group = Group::initial();
    let mut dim_groups = vec![Group::initial(); d];

    let mut latent = vec![0.0; n_rows];
    // residual e_i = score_i - latent_i
    let mut resid = vec![0.0; n_rows];
    let mut q = vec![0.0; n_rows];

    let mut param_mean = RunningMean::new(1 + params.n_features() + params.embeddings().len());
    let mut train_mean = RunningMean::new(n_rows);
    let mut test_mean = test.map(|t| RunningMean::new(t.len()));
    let mut log = Vec::with_capacity(cfg.epochs);

    for iter in 1..=cfg.epochs {
        for (r, x) in train.rows().iter().enumerate() {
            let score = params.raw_score_unchecked(x);
            latent[r] = sample_latent(&mut rng, score, labels[r] == 1);
            resid[r] = score - latent[r];
        }

        // global bias, flat prior
        let old = params.mu;
        let mean = old - resid.iter().sum::<f64>() / n_rows as f64;
        params.mu = gaussian(&mut rng, mean, n_rows as f64);
        let delta = params.mu - old;
        resid.iter_mut().for_each(|e| *e += delta);

        bias_group.resample(&mut rng, active.iter().map(|&k| params.w[k]), priors);
        for &k in &active {
            let col = &columns.cols[k];
            let old = params.w[k];
            let mut prec = bias_group.precision;
            let mut num = bias_group.precision * bias_group.mean;
            for &(r, x) in col {
                prec += x * x;
                num += x * (x * old - resid[r]);
            }
            params.w[k] = gaussian(&mut rng, num / prec, prec);
            let delta = params.w[k] - old;
            for &(r, x) in col {
                resid[r] += x * delta;
            }
        }

        for f in 0..d {
            for (r, x) in train.rows().iter().enumerate() {
                q[r] = x
                    .entries()
                    .iter()
                    .map(|&(k, xk)| xk * params.embeddings()[k * d + f])
                    .sum();
            }
            let group = &mut dim_groups[f];
            group.resample(
                &mut rng,
                active.iter().map(|&k| params.embeddings()[k * d + f]),
                priors,
            );
            for &k in &active {
                let col = &columns.cols[k];
                let old = params.embeddings()[k * d + f];
                let mut prec = group.precision;
                let mut num = group.precision * group.mean;
                for &(r, x) in col {
                    let h = x * (q[r] - x * old);
                    prec += h * h;
                    num += h * (h * old - resid[r]);
                }
                let new = gaussian(&mut rng, num / prec, prec);
                params.embeddings_mut()[k * d + f] = new;
                let delta = new - old;
                for &(r, x) in col {
                    let h = x * (q[r] - x * old);
                    resid[r] += h * delta;
                    q[r] += x * delta;
                }
            }
        }

        let train_probs: Vec<f64> = latent
            .iter()
            .zip(&resid)
            .map(|(z, e)| Link::Probit.inverse(z + e))
            .collect();
        let test_probs = test.map(|t| predict_all(&params, t, Link::Probit));
        let post_burn_in = iter > burn_in;
        let (train_report, test_report) = if post_burn_in {
            param_mean.add(
                std::iter::once(params.mu)
                    .chain(params.w.iter().copied())
                    .chain(params.embeddings().iter().copied()),
            );
            train_mean.add(train_probs);
            if let (Some(acc), Some(p)) = (test_mean.as_mut(), test_probs) {
                acc.add(p);
            }
            (train_mean.mean(), test_mean.as_ref().map(RunningMean::mean))
        } else {
            (train_probs, test_probs)
        };
        let train_nll = metrics::nll(&train_report, labels)?;
        let test = match (test, test_report) {
            (Some(t), Some(p)) => Some(TestMetrics::compute(&p, t.labels())?),
            _ => None,
        };
        log.push(EpochRecord {
            epoch: iter,
            train_nll,
            test,
        });
    }

    let final_params = if param_mean.count > 0 {
        let flat = param_mean.mean();
        let n = params.n_features();
        FMParams::from_parts(flat[0], flat[1..1 + n].to_vec(), d, flat[1 + n..].to_vec())?
    } else {
        params.check_finite()?;
        params
    };
    let test_predictions = test.map(|t| match &test_mean {
        Some(acc) if acc.count > 0 => acc.mean(),
        _ => predict_all(&final_params, t, Link::Probit),
    });
    Ok(GibbsOutput {
        params: final_params,
        test_predictions,
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::{FeatureSpace, SparseRow};

    fn single_feature_all_positive() -> DesignMatrix {
        let rows = vec![SparseRow::new(vec![(0, 1.0)]).unwrap(); 20];
        DesignMatrix::new(FeatureSpace::flat(1).unwrap(), rows, vec![1; 20]).unwrap()
    }

    #[test]
    fn all_positive_labels_predict_above_half() {
        let data = single_feature_all_positive();
        let cfg = TrainConfig {
            epochs: 100,
            ..Default::default()
        };
        let out = train_gibbs_probit(&data, Some(&data), &cfg, &HyperPriors::default()).unwrap();
        let preds = out.test_predictions.unwrap();
        assert!(preds.iter().all(|&p| p > 0.5));
        let p = out.params.predict_proba(&data.rows()[0], Link::Probit).unwrap();
        assert!(p > 0.5);
    }

    #[test]
    fn same_seed_same_chain() {
        let data = single_feature_all_positive();
        let cfg = TrainConfig {
            dim: 2,
            epochs: 30,
            ..Default::default()
        };
        let a = train_gibbs_probit(&data, Some(&data), &cfg, &HyperPriors::default()).unwrap();
        let b = train_gibbs_probit(&data, Some(&data), &cfg, &HyperPriors::default()).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.test_predictions, b.test_predictions);
        assert_eq!(a.log, b.log);
    }

    #[test]
    fn group_precision_stays_positive() {
        let mut rng = rng_for(0, Stream::Sampler);
        let mut g = Group::initial();
        let values = [1e200, -1e200, 3.0];
        for _ in 0..10 {
            g.resample(&mut rng, values.iter().copied(), &HyperPriors::default());
            assert!(g.precision > 0.0 && g.precision.is_finite());
        }
    }
}
