use crate::error::{KtmError, Result};

pub const NLL_EPS: f64 = 1e-12;

fn check_lengths(predictions: &[f64], labels: &[u8]) -> Result<()> {
    if predictions.len() != labels.len() {
        return Err(KtmError::LengthMismatch {
            expected: labels.len(),
            actual: predictions.len(),
        });
    }
    if predictions.is_empty() {
        return Err(KtmError::EmptyData);
    }
    if let Some(&y) = labels.iter().find(|&&y| y > 1) {
        return Err(KtmError::InvalidLabel(y.to_string()));
    }
    Ok(())
}

/// Mean negative log-likelihood; probabilities are clamped to
/// `[1e-12, 1 - 1e-12]`.
pub fn nll(predictions: &[f64], labels: &[u8]) -> Result<f64> {
    check_lengths(predictions, labels)?;
    let mut total = 0.0;
    for (i, (&p, &y)) in predictions.iter().zip(labels).enumerate() {
        if !(0.0..=1.0).contains(&p) {
            return Err(KtmError::NonFinite { index: i, value: p });
        }
        let p = p.clamp(NLL_EPS, 1.0 - NLL_EPS);
        total -= if y == 1 { p.ln() } else { (1.0 - p).ln() };
    }
    Ok(total / predictions.len() as f64)
}

/// Fraction of rows where `p >= 0.5` agrees with the label.
pub fn accuracy(predictions: &[f64], labels: &[u8]) -> Result<f64> {
    check_lengths(predictions, labels)?;
    let hits = predictions
        .iter()
        .zip(labels)
        .filter(|(&p, &y)| (p >= 0.5) == (y == 1))
        .count();
    Ok(hits as f64 / predictions.len() as f64)
}

/// Mann-Whitney AUC from average ranks; ties between a positive and a
/// negative count one half. `None` when only one class is present.
pub fn auc(predictions: &[f64], labels: &[u8]) -> Result<Option<f64>> {
    check_lengths(predictions, labels)?;
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Ok(None);
    }
    if let Some((i, &p)) = predictions.iter().enumerate().find(|(_, p)| p.is_nan()) {
        return Err(KtmError::NonFinite { index: i, value: p });
    }
    let mut order: Vec<usize> = (0..predictions.len()).collect();
    order.sort_by(|&a, &b| predictions[a].total_cmp(&predictions[b]));
    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let value = predictions[order[start]];
        let mut end = start + 1;
        while end < order.len() && predictions[order[end]] == value {
            end += 1;
        }
        let avg_rank = (start + 1 + end) as f64 / 2.0;
        let positives = order[start..end].iter().filter(|&&i| labels[i] == 1).count();
        rank_sum += avg_rank * positives as f64;
        start = end;
    }
    let n_pos = n_pos as f64;
    let u = rank_sum - n_pos * (n_pos + 1.0) / 2.0;
    Ok(Some(u / (n_pos * n_neg as f64)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn all_pairs_auc(p: &[f64], y: &[u8]) -> Option<f64> {
        let mut twice_credit = 0u64;
        let mut pairs = 0u64;
        for i in 0..p.len() {
            for j in 0..p.len() {
                if y[i] == 1 && y[j] == 0 {
                    pairs += 1;
                    if p[i] > p[j] {
                        twice_credit += 2;
                    } else if p[i] == p[j] {
                        twice_credit += 1;
                    }
                }
            }
        }
        (pairs > 0).then(|| (twice_credit as f64 / 2.0) / pairs as f64)
    }

    #[test]
    fn nll_examples() {
        let v = nll(&[0.5, 0.5], &[0, 1]).unwrap();
        assert!((v - std::f64::consts::LN_2).abs() < 1e-15);
        let perfect = nll(&[1.0, 0.0], &[1, 0]).unwrap();
        assert!((0.0..1e-11).contains(&perfect));
        assert!(nll(&[0.5], &[0, 1]).is_err());
        assert!(nll(&[1.5], &[1]).is_err());
    }

    #[test]
    fn nll_matches_high_precision_reference() {
        // mpmath, 40 digits: -(ln 0.9 + ln(1 - 0.2) + ln 0.35 + ln(1 - 0.999)) / 4
        let v = nll(&[0.9, 0.2, 0.35, 0.999], &[1, 0, 1, 0]).unwrap();
        let reference = 2.071_520_367_613_213;
        assert!(((v - reference) / reference).abs() <= 1e-10, "{v}");
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[0.9, 0.1], &[1, 0]).unwrap(), 1.0);
        assert_eq!(accuracy(&[0.5, 0.5], &[1, 0]).unwrap(), 0.5);
        assert!(accuracy(&[0.5], &[]).is_err());
    }

    #[test]
    fn accuracy_matches_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p: Vec<f64> = (0..300).map(|_| (rng.random_range(0..11) as f64) / 10.0).collect();
        let y: Vec<u8> = (0..300).map(|_| rng.random_range(0..2)).collect();
        let mut hits = 0;
        for i in 0..300 {
            let predicted = if p[i] >= 0.5 { 1 } else { 0 };
            if predicted == y[i] {
                hits += 1;
            }
        }
        assert_eq!(accuracy(&p, &y).unwrap(), hits as f64 / 300.0);
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap(), Some(1.0));
        assert_eq!(auc(&[0.3; 5], &[0, 1, 0, 1, 1]).unwrap(), Some(0.5));
        assert_eq!(auc(&[0.3, 0.4], &[1, 1]).unwrap(), None);
    }

    #[test]
    fn auc_matches_all_pairs_on_200_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let p: Vec<f64> = (0..200).map(|_| (rng.random_range(0..40) as f64) / 40.0).collect();
        let y: Vec<u8> = (0..200).map(|_| rng.random_range(0..2)).collect();
        assert_eq!(auc(&p, &y).unwrap(), all_pairs_auc(&p, &y));
    }

    proptest! {
        #[test]
        fn auc_invariant_under_monotone_maps(
            pairs in proptest::collection::vec((0u8..30, 0u8..2), 2..80)
        ) {
            let p: Vec<f64> = pairs.iter().map(|&(s, _)| s as f64 / 30.0).collect();
            let y: Vec<u8> = pairs.iter().map(|&(_, y)| y).collect();
            let mapped: Vec<f64> = p.iter().map(|&x| (3.0 * x).exp() - 7.0).collect();
            prop_assert_eq!(auc(&p, &y).unwrap(), auc(&mapped, &y).unwrap());
        }

        #[test]
        fn auc_flip_symmetry_without_ties(
            y in proptest::collection::vec(0u8..2, 2..60), seed in 0u64..1000
        ) {
            use rand::seq::SliceRandom;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut p: Vec<f64> = (0..y.len()).map(|i| i as f64 / y.len() as f64).collect();
            p.shuffle(&mut rng);
            let flipped_p: Vec<f64> = p.iter().map(|x| 1.0 - x).collect();
            let flipped_y: Vec<u8> = y.iter().map(|v| 1 - v).collect();
            if let Some(a) = auc(&p, &y).unwrap() {
                let labels_only = auc(&p, &flipped_y).unwrap().unwrap();
                let scores_only = auc(&flipped_p, &y).unwrap().unwrap();
                let both = auc(&flipped_p, &flipped_y).unwrap().unwrap();
                prop_assert!((labels_only - (1.0 - a)).abs() < 1e-12);
                prop_assert!((scores_only - (1.0 - a)).abs() < 1e-12);
                prop_assert!((both - a).abs() < 1e-12);
            }
        }
    }
}
