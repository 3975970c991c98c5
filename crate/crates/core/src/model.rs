//! Factorization machine scoring with logit and probit links, plus the
//! presets that reduce the machine to IRT, MIRTb, AFM and PFA.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::encoder::{EncodingConfig, ExtraColumn};
use crate::error::{KtmError, Result};
use crate::sparse::{FeatureSpace, SparseRow};

/// Global bias, per-feature biases and an `N × d` embedding matrix stored
/// row-major. `d == 0` means a purely linear model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FMParams {
    pub mu: f64,
    pub w: Vec<f64>,
    dim: usize,
    v: Vec<f64>,
}

impl FMParams {
    pub fn zeros(n_features: usize, dim: usize) -> Self {
        Self {
            mu: 0.0,
            w: vec![0.0; n_features],
            dim,
            v: vec![0.0; n_features * dim],
        }
    }

    pub fn from_parts(mu: f64, w: Vec<f64>, dim: usize, v: Vec<f64>) -> Result<Self> {
        if v.len() != w.len() * dim {
            return Err(KtmError::LengthMismatch {
                expected: w.len() * dim,
                actual: v.len(),
            });
        }
        let params = Self { mu, w, dim, v };
        params.check_finite()?;
        Ok(params)
    }

    pub fn check_finite(&self) -> Result<()> {
        if !self.mu.is_finite() {
            return Err(KtmError::NonFinite {
                index: usize::MAX,
                value: self.mu,
            });
        }
        if let Some((index, &value)) = self.w.iter().enumerate().find(|(_, x)| !x.is_finite()) {
            return Err(KtmError::NonFinite { index, value });
        }
        if let Some((i, &value)) = self.v.iter().enumerate().find(|(_, x)| !x.is_finite()) {
            return Err(KtmError::NonFinite {
                index: i / self.dim.max(1),
                value,
            });
        }
        Ok(())
    }

    pub fn n_features(&self) -> usize {
        self.w.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn embedding(&self, feature: usize) -> &[f64] {
        &self.v[feature * self.dim..(feature + 1) * self.dim]
    }

    pub fn embedding_mut(&mut self, feature: usize) -> &mut [f64] {
        &mut self.v[feature * self.dim..(feature + 1) * self.dim]
    }

    /// Flat row-major view of `V`.
    pub fn embeddings(&self) -> &[f64] {
        &self.v
    }

    pub fn embeddings_mut(&mut self) -> &mut [f64] {
        &mut self.v
    }

    pub fn raw_score(&self, x: &SparseRow) -> Result<f64> {
        x.check_width(self.n_features())?;
        Ok(self.raw_score_unchecked(x))
    }

    /// Score without the width check; callers validate rows up front.
    pub(crate) fn raw_score_unchecked(&self, x: &SparseRow) -> f64 {
        let entries = x.entries();
        let mut score = self.mu;
        for &(k, xk) in entries {
            score += self.w[k] * xk;
        }
        for f in 0..self.dim {
            let mut sum = 0.0;
            let mut sum_sq = 0.0;
            for &(k, xk) in entries {
                let t = xk * self.v[k * self.dim + f];
                sum += t;
                sum_sq += t * t;
            }
            score += 0.5 * (sum * sum - sum_sq);
        }
        score
    }

    pub fn predict_proba(&self, x: &SparseRow, link: Link) -> Result<f64> {
        Ok(link.inverse(self.raw_score(x)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Link {
    Logit,
    Probit,
}

const P_MIN: f64 = f64::MIN_POSITIVE;
const P_MAX: f64 = 1.0 - f64::EPSILON / 2.0;

impl Link {
    /// Maps a raw score to a probability strictly inside (0, 1).
    pub fn inverse(self, z: f64) -> f64 {
        let p = match self {
            Link::Logit => sigmoid(z),
            Link::Probit => normal_cdf(z),
        };
        p.clamp(P_MIN, P_MAX)
    }
}

impl fmt::Display for Link {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Link::Logit => "logit",
            Link::Probit => "probit",
        })
    }
}

impl FromStr for Link {
    type Err = KtmError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "logit" => Ok(Link::Logit),
            "probit" => Ok(Link::Probit),
            _ => Err(KtmError::InvalidTrainConfig(format!("unknown link `{s}`"))),
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Standard normal CDF through `erfc`, accurate in both tails.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DimRule {
    Zero,
    Positive,
    Any,
}

/// A named block selection with its embedding-dimension constraint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Preset {
    name: String,
    blocks: EncodingConfig,
    extra: bool,
    dim: DimRule,
}

impl Preset {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim_rule(&self) -> DimRule {
        self.dim
    }

    pub fn uses_extra(&self) -> bool {
        self.extra
    }

    /// Block flags without any extra columns attached.
    pub fn blocks(&self) -> &EncodingConfig {
        &self.blocks
    }

    pub fn check_dim(&self, d: usize) -> Result<()> {
        let reason = match self.dim {
            DimRule::Zero if d != 0 => "requires d = 0",
            DimRule::Positive if d == 0 => "requires d > 0",
            _ => return Ok(()),
        };
        Err(KtmError::IncompatiblePreset {
            preset: self.name.clone(),
            reason: format!("{reason}, got d = {d}"),
        })
    }

    /// Full encoding config given the extra columns available in the data.
    pub fn encoding(&self, available_extras: &[ExtraColumn]) -> Result<EncodingConfig> {
        let mut cfg = self.blocks.clone();
        if self.extra {
            if available_extras.is_empty() {
                return Err(KtmError::IncompatiblePreset {
                    preset: self.name.clone(),
                    reason: "requires extra columns but the dataset has none".into(),
                });
            }
            cfg.extra_columns = available_extras.to_vec();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Resolves `IRT`, `MIRTb`, `AFM`, `PFA`, `KTM-<letters>` or a bare letter
/// code such as `iswf` (users, items, skills, wins, fails, attempts, extra).
pub fn preset_encoding(name: &str) -> Result<Preset> {
    let lower = name.trim().to_ascii_lowercase();
    let (canonical, letters, dim) = match lower.as_str() {
        "irt" => ("IRT".to_string(), "ui", DimRule::Zero),
        "mirtb" => ("MIRTb".to_string(), "ui", DimRule::Positive),
        "afm" => ("AFM".to_string(), "sa", DimRule::Zero),
        "pfa" => ("PFA".to_string(), "swf", DimRule::Zero),
        other => {
            let letters = other.strip_prefix("ktm-").unwrap_or(other);
            if letters.is_empty() {
                return Err(KtmError::UnknownPreset(name.to_string()));
            }
            (format!("KTM-{letters}"), letters, DimRule::Any)
        }
    };
    let (blocks, extra) =
        EncodingConfig::from_letters(letters).map_err(|_| KtmError::UnknownPreset(name.to_string()))?;
    let check = EncodingConfig {
        extra_columns: if extra {
            vec![ExtraColumn {
                name: "extra".into(),
                cardinality: 1,
            }]
        } else {
            Vec::new()
        },
        ..blocks.clone()
    };
    check
        .validate()
        .map_err(|_| KtmError::UnknownPreset(name.to_string()))?;
    Ok(Preset {
        name: canonical,
        blocks,
        extra,
        dim,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRow {
    pub block: String,
    pub local_id: usize,
    pub bias: f64,
    pub embedding: Vec<f64>,
}

/// One row per feature: its block, id inside the block, bias and embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub dim: usize,
    pub rows: Vec<EmbeddingRow>,
}

pub fn export_embeddings(params: &FMParams, space: &FeatureSpace) -> Result<EmbeddingTable> {
    if params.n_features() != space.total_width() {
        return Err(KtmError::LengthMismatch {
            expected: space.total_width(),
            actual: params.n_features(),
        });
    }
    let mut rows = Vec::with_capacity(params.n_features());
    for block in space.blocks() {
        let offset = space.offset(&block.name)?;
        for local_id in 0..block.width {
            let k = offset + local_id;
            rows.push(EmbeddingRow {
                block: block.name.clone(),
                local_id,
                bias: params.w[k],
                embedding: params.embedding(k).to_vec(),
            });
        }
    }
    Ok(EmbeddingTable {
        dim: params.dim(),
        rows,
    })
}

impl EmbeddingTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("block,local_id,bias");
        for f in 0..self.dim {
            let _ = write!(out, ",v{f}");
        }
        out.push('\n');
        for r in &self.rows {
            let _ = write!(out, "{},{},{}", r.block, r.local_id, r.bias);
            for x in &r.embedding {
                let _ = write!(out, ",{x}");
            }
            out.push('\n');
        }
        out
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().from_reader(text.as_bytes());
        let headers = reader.headers()?.clone();
        if headers.len() < 3
            || &headers[0] != "block"
            || &headers[1] != "local_id"
            || &headers[2] != "bias"
        {
            return Err(KtmError::Parse {
                line: 1,
                msg: "expected header `block,local_id,bias[,v0,...]`".into(),
            });
        }
        let dim = headers.len() - 3;
        let mut rows = Vec::new();
        for (no, rec) in reader.records().enumerate() {
            let rec = rec?;
            let err = |msg: String| KtmError::Parse { line: no + 2, msg };
            let num = |i: usize| -> Result<f64> {
                rec[i]
                    .parse::<f64>()
                    .map_err(|e| err(format!("column {i}: {e}")))
            };
            rows.push(EmbeddingRow {
                block: rec[0].to_string(),
                local_id: rec[1]
                    .parse()
                    .map_err(|e| err(format!("local_id: {e}")))?,
                bias: num(2)?,
                embedding: (0..dim).map(|f| num(3 + f)).collect::<Result<_>>()?,
            });
        }
        Ok(Self { dim, rows })
    }

    /// Rebuilds parameters laid out over `space`; `mu` is not part of the table.
    pub fn to_params(&self, space: &FeatureSpace, mu: f64) -> Result<FMParams> {
        let n = space.total_width();
        let mut params = FMParams::zeros(n, self.dim);
        let mut filled = vec![false; n];
        params.mu = mu;
        for r in &self.rows {
            let k = space.feature_index(&r.block, r.local_id)?;
            params.w[k] = r.bias;
            params.embedding_mut(k).copy_from_slice(&r.embedding);
            filled[k] = true;
        }
        if let Some(missing) = filled.iter().position(|f| !f) {
            return Err(KtmError::IndexOutOfRange {
                index: missing,
                width: n,
            });
        }
        params.check_finite()?;
        Ok(params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_params(rng: &mut ChaCha8Rng, n: usize, d: usize) -> FMParams {
        let mut p = FMParams::zeros(n, d);
        p.mu = rng.random_range(-1.0..1.0);
        p.w.iter_mut().for_each(|x| *x = rng.random_range(-1.0..1.0));
        p.embeddings_mut()
            .iter_mut()
            .for_each(|x| *x = rng.random_range(-1.0..1.0));
        p
    }

    fn random_row(rng: &mut ChaCha8Rng, n: usize, nnz: usize) -> SparseRow {
        let mut idx = rand::seq::index::sample(rng, n, nnz).into_vec();
        idx.sort_unstable();
        SparseRow::new(idx.into_iter().map(|i| (i, rng.random_range(0.1..3.0))).collect()).unwrap()
    }

    fn brute_force(p: &FMParams, x: &SparseRow) -> f64 {
        let dense = x.densify(p.n_features()).unwrap();
        let n = dense.len();
        let mut s = p.mu;
        for k in 0..n {
            s += p.w[k] * dense[k];
        }
        for k in 0..n {
            for l in (k + 1)..n {
                let dot: f64 = p
                    .embedding(k)
                    .iter()
                    .zip(p.embedding(l))
                    .map(|(a, b)| a * b)
                    .sum();
                s += dense[k] * dense[l] * dot;
            }
        }
        s
    }

    #[test]
    fn zero_model_scores_zero() {
        let p = FMParams::zeros(5, 3);
        let x = SparseRow::new(vec![(0, 1.0), (4, 2.0)]).unwrap();
        assert_eq!(p.raw_score(&x).unwrap(), 0.0);
        assert_eq!(p.predict_proba(&x, Link::Logit).unwrap(), 0.5);
        assert_eq!(p.predict_proba(&x, Link::Probit).unwrap(), 0.5);
    }

    #[test]
    fn rasch_form_at_d0() {
        let mut p = FMParams::zeros(5, 0);
        p.mu = 0.3;
        p.w = vec![0.5, -0.2, 1.0, -1.5, 0.7];
        // user 1 (index 1), item 2 (index n + 2 = 4)
        let x = SparseRow::new(vec![(1, 1.0), (4, 1.0)]).unwrap();
        assert_eq!(p.raw_score(&x).unwrap(), 0.3 + -0.2 + 0.7);
    }

    #[test]
    fn raw_score_rejects_out_of_range() {
        let p = FMParams::zeros(3, 1);
        let x = SparseRow::new(vec![(3, 1.0)]).unwrap();
        assert!(p.raw_score(&x).is_err());
    }

    #[test]
    fn fast_identity_n20_d3() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let p = random_params(&mut rng, 20, 3);
            let x = random_row(&mut rng, 20, 6);
            let fast = p.raw_score(&x).unwrap();
            let slow = brute_force(&p, &x);
            assert!((fast - slow).abs() <= 1e-10 * slow.abs().max(1.0), "{fast} vs {slow}");
        }
    }

    #[test]
    fn d0_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = random_params(&mut rng, 10, 0);
        let x = SparseRow::new(vec![(2, 1.0), (7, 2.0)]).unwrap();
        let x2 = SparseRow::new(vec![(2, 2.0), (7, 4.0)]).unwrap();
        let a = p.raw_score(&x).unwrap() - p.mu;
        let b = p.raw_score(&x2).unwrap() - p.mu;
        assert!((2.0 * a - b).abs() < 1e-12);
    }

    #[test]
    fn logit_matches_reference_values() {
        // 1 / (1 + e^{-z}) from a 40-digit evaluation
        let reference = [
            (-10.0, 4.5397868702434395e-5),
            (-1.0, 0.2689414213699951),
            (0.0, 0.5),
            (1.0, 0.7310585786300049),
            (10.0, 0.9999546021312976),
        ];
        for (z, p) in reference {
            let got = Link::Logit.inverse(z);
            assert!(((got - p) / p).abs() < 1e-15, "z={z}: {got} vs {p}");
        }
    }

    #[test]
    fn probit_matches_reference_values() {
        let reference = [
            (-8.0, 6.220960574271784e-16),
            (-1.0, 0.15865525393145705),
            (0.0, 0.5),
            (1.96, 0.9750021048517795),
        ];
        for (z, p) in reference {
            let got = Link::Probit.inverse(z);
            assert!(((got - p) / p).abs() < 1e-13, "z={z}: {got} vs {p}");
        }
    }

    #[test]
    fn probabilities_stay_open_interval() {
        for link in [Link::Logit, Link::Probit] {
            for z in [-1e4, -800.0, 800.0, 1e4] {
                let p = link.inverse(z);
                assert!(p > 0.0 && p < 1.0);
            }
        }
    }

    proptest! {
        #[test]
        fn links_are_monotone(z1 in -5.0f64..5.0, gap in 1e-6f64..3.0) {
            for link in [Link::Logit, Link::Probit] {
                prop_assert!(link.inverse(z1) < link.inverse(z1 + gap));
            }
        }
    }

    #[test]
    fn presets() {
        let pfa = preset_encoding("PFA").unwrap();
        let b = pfa.blocks();
        assert!(b.skills && b.wins && b.fails && !b.users && !b.items && !b.attempts);
        assert_eq!(pfa.dim_rule(), DimRule::Zero);
        assert!(pfa.check_dim(0).is_ok() && pfa.check_dim(2).is_err());

        let irt = preset_encoding("irt").unwrap();
        assert!(irt.blocks().users && irt.blocks().items);
        assert_eq!(irt.blocks().letters(), "ui");
        assert!(irt.check_dim(0).is_ok());

        let mirtb = preset_encoding("MIRTb").unwrap();
        assert!(mirtb.check_dim(10).is_ok() && mirtb.check_dim(0).is_err());

        let afm = preset_encoding("AFM").unwrap();
        assert!(afm.blocks().skills && afm.blocks().attempts);

        let iswfe = preset_encoding("KTM-iswfe").unwrap();
        assert!(iswfe.uses_extra());
        assert!(iswfe.encoding(&[]).is_err());
        assert_eq!(preset_encoding("iswf").unwrap().name(), "KTM-iswf");

        assert!(preset_encoding("bkt").is_err());
        assert!(preset_encoding("swfa").is_err());
    }

    #[test]
    fn embedding_export_shapes() {
        let space =
            FeatureSpace::new([("users", 2), ("items", 3), ("skills", 3), ("wins", 3), ("fails", 3)])
                .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = random_params(&mut rng, 14, 2);
        let table = export_embeddings(&p, &space).unwrap();
        let csv = table.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "block,local_id,bias,v0,v1");
        assert_eq!(lines.len(), 15);
        assert!(lines[1..].iter().all(|l| l.split(',').count() == 5));
        assert!(lines[3].starts_with("items,0,"));

        let lin = FMParams::zeros(14, 0);
        let csv0 = export_embeddings(&lin, &space).unwrap().to_csv();
        assert_eq!(csv0.lines().next().unwrap(), "block,local_id,bias");
        assert!(export_embeddings(&FMParams::zeros(3, 0), &space).is_err());
    }

    #[test]
    fn embedding_round_trip_is_exact() {
        let space = FeatureSpace::new([("users", 4), ("items", 6)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for d in [0, 1, 3] {
            let p = random_params(&mut rng, 10, d);
            let csv = export_embeddings(&p, &space).unwrap().to_csv();
            let back = EmbeddingTable::parse_csv(&csv).unwrap().to_params(&space, p.mu).unwrap();
            assert_eq!(back, p);
        }
    }
}
