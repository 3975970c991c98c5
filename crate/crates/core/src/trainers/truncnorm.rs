//! Truncated standard normal sampling (Robert, 1995).

use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};

/// Draws `X ~ N(0, 1)` conditioned on `X >= lower`.
///
/// Below zero plain rejection accepts at least half the time; above zero an
/// exponential proposal with the optimal rate is used.
pub fn sample_lower<R: Rng + ?Sized>(rng: &mut R, lower: f64) -> f64 {
    if lower <= 0.0 {
        loop {
            let x: f64 = StandardNormal.sample(rng);
            if x >= lower {
                return x;
            }
        }
    }
    let rate = if lower < 1.0 {
        0.5 * (lower + (lower * lower + 4.0).sqrt())
    } else {
        0.5 * lower * (1.0 + (1.0 + 4.0 / (lower * lower)).sqrt())
    };
    let exp = Exp::new(rate).expect("positive rate");
    loop {
        let x = lower + exp.sample(rng);
        let u: f64 = rng.random();
        if u <= (-0.5 * (x - rate) * (x - rate)).exp() {
            return x;
        }
    }
}

/// Latent utility for a probit observation: `N(mean, 1)` restricted to
/// `(0, ∞)` when `positive`, else `(-∞, 0)`. The result is never zero.
pub fn sample_latent<R: Rng + ?Sized>(rng: &mut R, mean: f64, positive: bool) -> f64 {
    if positive {
        let z = mean + sample_lower(rng, -mean);
        if z > 0.0 {
            z
        } else {
            f64::MIN_POSITIVE
        }
    } else {
        let z = mean - sample_lower(rng, mean);
        if z < 0.0 {
            z
        } else {
            -f64::MIN_POSITIVE
        }
    }
}
