use rand::seq::SliceRandom;

use super::{
    check_compatible, init_params, predict_all, rng_for, seen_features, zero_unseen, BatchMode,
    EpochRecord, Stream, TestMetrics, TrainConfig, TrainOutput,
};
use crate::error::{KtmError, Result};
use crate::model::{sigmoid, FMParams, Link};
use crate::sparse::{DesignMatrix, SparseRow};

/// Gradient of one row's logit NLL. Only features present in the row appear.
#[derive(Debug, Clone, PartialEq)]
pub struct RowGradient {
    pub mu: f64,
    pub w: Vec<(usize, f64)>,
    /// `(feature, ∂/∂v_k)` with one entry per embedding dimension.
    pub v: Vec<(usize, Vec<f64>)>,
}

/// `-[y log p + (1 - y) log(1 - p)]` with `p = sigmoid(score)`, computed
/// without forming `p`.
pub fn row_nll(params: &FMParams, x: &SparseRow, y: u8) -> Result<f64> {
    let z = params.raw_score(x)?;
    Ok(logistic_loss(z, y))
}

fn logistic_loss(z: f64, y: u8) -> f64 {
    // log(1 + e^{-s}) with s = z for positives, -z for negatives
    let s = if y == 1 { z } else { -z };
    if s > 0.0 {
        (-s).exp().ln_1p()
    } else {
        -s + s.exp().ln_1p()
    }
}

fn embedding_sums(params: &FMParams, x: &SparseRow, sums: &mut Vec<f64>) {
    let d = params.dim();
    sums.clear();
    sums.resize(d, 0.0);
    for &(k, xk) in x.entries() {
        for (s, v) in sums.iter_mut().zip(params.embedding(k)) {
            *s += xk * v;
        }
    }
}

pub fn row_gradient(params: &FMParams, x: &SparseRow, y: u8) -> Result<RowGradient> {
    let z = params.raw_score(x)?;
    let g = sigmoid(z) - f64::from(y);
    let mut sums = Vec::new();
    embedding_sums(params, x, &mut sums);
    let w = x.entries().iter().map(|&(k, xk)| (k, g * xk)).collect();
    let v = if params.dim() == 0 {
        Vec::new()
    } else {
        x.entries()
            .iter()
            .map(|&(k, xk)| {
                let grad = params
                    .embedding(k)
                    .iter()
                    .zip(&sums)
                    .map(|(vkf, qf)| g * (xk * qf - xk * xk * vkf))
                    .collect();
                (k, grad)
            })
            .collect()
    };
    Ok(RowGradient { mu: g, w, v })
}

fn mean_nll(params: &FMParams, data: &DesignMatrix) -> f64 {
    let total: f64 = data
        .rows()
        .iter()
        .zip(data.labels())
        .map(|(x, &y)| logistic_loss(params.raw_score_unchecked(x), y))
        .sum();
    total / data.len() as f64
}

fn sgd_epoch(
    params: &mut FMParams,
    data: &DesignMatrix,
    order: &[usize],
    cfg: &TrainConfig,
    sums: &mut Vec<f64>,
) {
    let lr = cfg.learning_rate;
    let l2 = cfg.l2;
    let d = params.dim();
    for &r in order {
        let x = &data.rows()[r];
        let z = params.raw_score_unchecked(x);
        let g = sigmoid(z) - f64::from(data.labels()[r]);
        embedding_sums(params, x, sums);
        params.mu -= lr * g;
        for &(k, xk) in x.entries() {
            params.w[k] -= lr * (g * xk + l2 * params.w[k]);
            if d > 0 {
                for (vkf, qf) in params.embedding_mut(k).iter_mut().zip(sums.iter()) {
                    let grad = g * (xk * qf - xk * xk * *vkf);
                    *vkf -= lr * (grad + l2 * *vkf);
                }
            }
        }
    }
}

/// One step on `mean NLL + l2/2 (|w|² + |V|²)`; the global bias is not
/// penalized.
fn full_batch_step(params: &mut FMParams, data: &DesignMatrix, cfg: &TrainConfig, sums: &mut Vec<f64>) {
    let d = params.dim();
    let scale = 1.0 / data.len() as f64;
    let mut g_mu = 0.0;
    let mut g_w = vec![0.0; params.n_features()];
    let mut g_v = vec![0.0; params.embeddings().len()];
    for (x, &y) in data.rows().iter().zip(data.labels()) {
        let g = sigmoid(params.raw_score_unchecked(x)) - f64::from(y);
        embedding_sums(params, x, sums);
        g_mu += g;
        for &(k, xk) in x.entries() {
            g_w[k] += g * xk;
            for f in 0..d {
                let vkf = params.embeddings()[k * d + f];
                g_v[k * d + f] += g * (xk * sums[f] - xk * xk * vkf);
            }
        }
    }
    let lr = cfg.learning_rate;
    params.mu -= lr * g_mu * scale;
    for (w, g) in params.w.iter_mut().zip(&g_w) {
        *w -= lr * (g * scale + cfg.l2 * *w);
    }
    for (v, g) in params.embeddings_mut().iter_mut().zip(&g_v) {
        *v -= lr * (g * scale + cfg.l2 * *v);
    }
}

/// MAP estimate of a logit-link machine by gradient descent. Each epoch is a
/// shuffled SGD pass ([`BatchMode::Stochastic`], L2 applied to the parameters
/// touched by each row) or one full-batch step ([`BatchMode::Full`]).
pub fn train_map_logit(
    train: &DesignMatrix,
    test: Option<&DesignMatrix>,
    cfg: &TrainConfig,
) -> Result<TrainOutput> {
    cfg.validate()?;
    check_compatible(train, test)?;
    let mut params = init_params(cfg, train.width());
    let seen = seen_features(train);
    zero_unseen(&mut params, &seen);
    let mut rng = rng_for(cfg.seed, Stream::Shuffle);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut sums = Vec::new();
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        match cfg.batch {
            BatchMode::Stochastic => {
                order.shuffle(&mut rng);
                sgd_epoch(&mut params, train, &order, cfg, &mut sums);
            }
            BatchMode::Full => full_batch_step(&mut params, train, cfg, &mut sums),
        }
        let train_nll = mean_nll(&params, train);
        if !train_nll.is_finite() || params.check_finite().is_err() {
            return Err(KtmError::Diverged { epoch });
        }
        let test = match test {
            Some(t) => Some(TestMetrics::compute(
                &predict_all(&params, t, Link::Logit),
                t.labels(),
            )?),
            None => None,
        };
        log.push(EpochRecord {
            epoch,
            train_nll,
            test,
        });
    }
    let test_predictions = test.map(|t| predict_all(&params, t, Link::Logit));
    Ok(TrainOutput {
        params,
        link: Link::Logit,
        log,
        test_predictions,
    })
}

/// Regularized full-batch objective, exposed for convergence checks.
pub fn regularized_objective(params: &FMParams, data: &DesignMatrix, l2: f64) -> f64 {
    let penalty: f64 = params.w.iter().chain(params.embeddings()).map(|x| x * x).sum();
    mean_nll(params, data) + 0.5 * l2 * penalty
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::FeatureSpace;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_instance(rng: &mut ChaCha8Rng, d: usize) -> (FMParams, SparseRow, u8) {
        let n = 15;
        let mut p = FMParams::zeros(n, d);
        p.mu = rng.random_range(-0.5..0.5);
        p.w.iter_mut().for_each(|x| *x = rng.random_range(-0.5..0.5));
        p.embeddings_mut()
            .iter_mut()
            .for_each(|x| *x = rng.random_range(-0.5..0.5));
        let mut idx = rand::seq::index::sample(rng, n, 5).into_vec();
        idx.sort_unstable();
        let x = SparseRow::new(idx.into_iter().map(|i| (i, rng.random_range(0.5..2.0))).collect())
            .unwrap();
        (p, x, rng.random_range(0..2))
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let h = 1e-5;
        for d in [0, 5] {
            let mut worst: f64 = 0.0;
            for _ in 0..20 {
                let (p, x, y) = random_instance(&mut rng, d);
                let grad = row_gradient(&p, &x, y).unwrap();
                let fd = |perturb: &dyn Fn(&mut FMParams, f64)| {
                    let mut plus = p.clone();
                    perturb(&mut plus, h);
                    let mut minus = p.clone();
                    perturb(&mut minus, -h);
                    (row_nll(&plus, &x, y).unwrap() - row_nll(&minus, &x, y).unwrap()) / (2.0 * h)
                };
                worst = worst.max(rel_err(grad.mu, fd(&|q, e| q.mu += e)));
                for &(k, g) in &grad.w {
                    worst = worst.max(rel_err(g, fd(&|q, e| q.w[k] += e)));
                }
                for (k, gv) in &grad.v {
                    for (f, &g) in gv.iter().enumerate() {
                        worst = worst.max(rel_err(g, fd(&|q, e| q.embedding_mut(*k)[f] += e)));
                    }
                }
            }
            assert!(worst <= 1e-4, "d={d}: worst relative error {worst}");
        }
    }

    fn toy_separable() -> DesignMatrix {
        let space = FeatureSpace::flat(2).unwrap();
        let rows = vec![
            SparseRow::new(vec![(0, 1.0)]).unwrap(),
            SparseRow::new(vec![(0, 1.0)]).unwrap(),
            SparseRow::new(vec![(1, 1.0)]).unwrap(),
            SparseRow::new(vec![(1, 1.0)]).unwrap(),
        ];
        DesignMatrix::new(space, rows, vec![1, 1, 0, 0]).unwrap()
    }

    #[test]
    fn separable_toy_nll_decreases() {
        let cfg = TrainConfig {
            epochs: 10,
            learning_rate: 0.1,
            l2: 0.0,
            ..Default::default()
        };
        let out = train_map_logit(&toy_separable(), None, &cfg).unwrap();
        for pair in out.log.windows(2) {
            assert!(pair[1].train_nll < pair[0].train_nll);
        }
        assert!(out.params.w[0] > 0.0 && out.params.w[1] < 0.0);
    }

    #[test]
    fn full_batch_is_monotone_at_d0() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let space = FeatureSpace::flat(12).unwrap();
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..200 {
            let mut idx = rand::seq::index::sample(&mut rng, 12, 3).into_vec();
            idx.sort_unstable();
            rows.push(SparseRow::new(idx.into_iter().map(|i| (i, 1.0)).collect()).unwrap());
            labels.push(rng.random_range(0..2));
        }
        let data = DesignMatrix::new(space, rows, labels).unwrap();
        let mut params = FMParams::zeros(12, 0);
        let cfg = TrainConfig {
            learning_rate: 0.5,
            l2: 0.01,
            batch: BatchMode::Full,
            ..Default::default()
        };
        let mut sums = Vec::new();
        let mut prev = regularized_objective(&params, &data, cfg.l2);
        for _ in 0..100 {
            full_batch_step(&mut params, &data, &cfg, &mut sums);
            let obj = regularized_objective(&params, &data, cfg.l2);
            assert!(obj <= prev + 1e-15, "{obj} > {prev}");
            prev = obj;
        }
    }

    #[test]
    fn divergence_is_reported() {
        let cfg = TrainConfig {
            epochs: 50,
            learning_rate: 1e300,
            l2: 1.0,
            ..Default::default()
        };
        let err = train_map_logit(&toy_separable(), None, &cfg).unwrap_err();
        assert!(matches!(err, KtmError::Diverged { .. }));
    }

    #[test]
    fn seeded_determinism() {
        let cfg = TrainConfig {
            dim: 2,
            epochs: 5,
            ..Default::default()
        };
        let a = train_map_logit(&toy_separable(), None, &cfg).unwrap();
        let b = train_map_logit(&toy_separable(), None, &cfg).unwrap();
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn empty_data_is_rejected() {
        let data = DesignMatrix::new(FeatureSpace::flat(2).unwrap(), vec![], vec![]).unwrap();
        assert!(matches!(
            train_map_logit(&data, None, &TrainConfig::default()),
            Err(KtmError::EmptyData)
        ));
    }
}
