//! Synthetic interaction logs with known generating parameters.

use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::encoder::{CounterState, EncodingConfig, QMatrix, RowEncoder, Triplet};
use crate::error::{KtmError, Result};
use crate::io::dataset::{parse_triplets, Dataset};
use crate::model::{FMParams, Link};
use crate::trainers::{rng_for, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Generator {
    Rasch,
    Mirt,
    Pfa,
    Ktm,
}

impl FromStr for Generator {
    type Err = KtmError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rasch" => Ok(Self::Rasch),
            "mirt" => Ok(Self::Mirt),
            "pfa" => Ok(Self::Pfa),
            "ktm" => Ok(Self::Ktm),
            _ => Err(KtmError::InvalidSynth(format!("unknown generator `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub generator: Generator,
    pub students: usize,
    pub items: usize,
    pub skills: usize,
    pub dim: usize,
    /// Attempts per (student, item) pair.
    pub attempts: usize,
    pub link: Link,
    pub seed: u64,
    /// Standard deviation of biases (and the scale of embeddings).
    pub sigma: f64,
    /// Scale of the per-skill win and fail slopes (pfa, ktm).
    pub win_scale: f64,
    pub fail_scale: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            generator: Generator::Rasch,
            students: 100,
            items: 20,
            skills: 5,
            dim: 2,
            attempts: 1,
            link: Link::Logit,
            seed: 42,
            sigma: 1.0,
            win_scale: 0.1,
            fail_scale: 0.05,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(KtmError::InvalidSynth(m.to_string()));
        if self.students == 0 || self.items == 0 || self.skills == 0 || self.attempts == 0 {
            return bad("students, items, skills and attempts must be positive");
        }
        if matches!(self.generator, Generator::Mirt | Generator::Ktm) && self.dim == 0 {
            return bad("mirt and ktm generators need dim >= 1");
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return bad("sigma must be positive");
        }
        if !(self.win_scale >= 0.0 && self.fail_scale >= 0.0) {
            return bad("win/fail scales must be nonnegative");
        }
        Ok(())
    }

    fn encoding(&self) -> EncodingConfig {
        let letters = match self.generator {
            Generator::Rasch | Generator::Mirt => "ui",
            Generator::Pfa => "swf",
            Generator::Ktm => "uiswf",
        };
        EncodingConfig::from_letters(letters).expect("static letters").0
    }

    fn model_dim(&self) -> usize {
        match self.generator {
            Generator::Rasch | Generator::Pfa => 0,
            Generator::Mirt | Generator::Ktm => self.dim,
        }
    }
}

/// Generating parameters. Named views are filled for the generators where
/// they have a textbook meaning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub generator: Generator,
    pub link: Link,
    pub encoding: EncodingConfig,
    pub params: FMParams,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub theta: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub difficulty: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub beta: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub gamma: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub delta: Option<Vec<f64>>,
    /// Probability of success used to draw each logged outcome.
    pub probabilities: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub triplets_csv: String,
    pub qmatrix_csv: String,
    pub truth: Truth,
    pub dataset: Dataset,
}

impl SynthOutput {
    pub fn truth_json(&self) -> String {
        serde_json::to_string_pretty(&self.truth).expect("truth serializes")
    }
}

fn random_qmatrix<R: Rng>(rng: &mut R, items: usize, skills: usize) -> QMatrix {
    let sets = (0..items)
        .map(|_| {
            let count = if skills > 1 && rng.random_bool(0.3) { 2 } else { 1 };
            rand::seq::index::sample(rng, skills, count).into_vec()
        })
        .collect();
    QMatrix::from_skill_sets(skills, sets).expect("ids in range")
}

pub fn generate_synthetic(spec: &SynthSpec) -> Result<SynthOutput> {
    spec.validate()?;
    let mut rng = rng_for(spec.seed, Stream::Synth);
    let q = random_qmatrix(&mut rng, spec.items, spec.skills);
    let encoding = spec.encoding();
    let encoder = RowEncoder::new(&encoding, &q, spec.students)?;
    let space = encoder.space().clone();
    let dim = spec.model_dim();
    let n = space.total_width();
    let (n_users, n_items, s) = (spec.students, spec.items, spec.skills);

    let bias = Normal::new(0.0, spec.sigma).expect("valid sigma");
    let unit: Normal<f64> = Normal::new(0.0, 1.0).expect("unit normal");
    let mut params = FMParams::zeros(n, dim);
    let mut truth_views: [Option<Vec<f64>>; 5] = Default::default();
    match spec.generator {
        Generator::Rasch => {
            let theta: Vec<f64> = (0..n_users).map(|_| bias.sample(&mut rng)).collect();
            let difficulty: Vec<f64> = (0..n_items).map(|_| bias.sample(&mut rng)).collect();
            params.w[..n_users].copy_from_slice(&theta);
            for (j, d) in difficulty.iter().enumerate() {
                params.w[n_users + j] = -d;
            }
            truth_views[0] = Some(theta);
            truth_views[1] = Some(difficulty);
        }
        Generator::Pfa => {
            let beta: Vec<f64> = (0..s).map(|_| bias.sample(&mut rng)).collect();
            let gamma: Vec<f64> = (0..s)
                .map(|_| spec.win_scale * unit.sample(&mut rng).abs())
                .collect();
            let delta: Vec<f64> = (0..s)
                .map(|_| spec.fail_scale * unit.sample(&mut rng).abs())
                .collect();
            params.w[..s].copy_from_slice(&beta);
            params.w[s..2 * s].copy_from_slice(&gamma);
            params.w[2 * s..].copy_from_slice(&delta);
            truth_views[2] = Some(beta);
            truth_views[3] = Some(gamma);
            truth_views[4] = Some(delta);
        }
        Generator::Mirt | Generator::Ktm => {
            let emb = Normal::new(0.0, spec.sigma / (dim as f64).powf(0.25)).expect("valid std");
            let one_hot = n_users + n_items + if spec.generator == Generator::Ktm { s } else { 0 };
            for k in 0..n {
                if k < one_hot {
                    params.w[k] = bias.sample(&mut rng);
                    for x in params.embedding_mut(k) {
                        *x = emb.sample(&mut rng);
                    }
                } else {
                    let scale = if k < one_hot + s { spec.win_scale } else { spec.fail_scale };
                    params.w[k] = scale * unit.sample(&mut rng).abs();
                    for x in params.embedding_mut(k) {
                        *x = scale * unit.sample(&mut rng);
                    }
                }
            }
        }
    }

    let mut counters = CounterState::new(spec.students, s);
    let mut triplets = Vec::with_capacity(spec.students * spec.items * spec.attempts);
    let mut probabilities = Vec::with_capacity(triplets.capacity());
    for student in 0..spec.students {
        let mut sequence: Vec<usize> = (0..spec.items)
            .flat_map(|j| std::iter::repeat_n(j, spec.attempts))
            .collect();
        sequence.shuffle(&mut rng);
        for item in sequence {
            let probe = Triplet {
                student,
                item,
                outcome: 0,
            };
            let row = encoder.encode(&probe, &counters, &[])?;
            let p = spec.link.inverse(params.raw_score(&row)?);
            let t = Triplet {
                outcome: u8::from(rng.random::<f64>() < p),
                ..probe
            };
            counters.apply(&t, &q);
            triplets.push(t);
            probabilities.push(p);
        }
    }

    let mut triplets_csv = String::from("user_id,item_id,correct\n");
    for t in &triplets {
        triplets_csv.push_str(&format!("{},{},{}\n", t.student, t.item, t.outcome));
    }
    let qmatrix_csv = q.to_csv();
    let dataset = parse_triplets(&triplets_csv, Some(q), None)?;
    let [theta, difficulty, beta, gamma, delta] = truth_views;
    Ok(SynthOutput {
        triplets_csv,
        qmatrix_csv,
        truth: Truth {
            generator: spec.generator,
            link: spec.link,
            encoding,
            params,
            theta,
            difficulty,
            beta,
            gamma,
            delta,
            probabilities,
        },
        dataset,
    })
}
