//! Cross-validated comparison of presets and embedding dimensions.

use std::fmt::Write as _;

use crate::error::{KtmError, Result};
use crate::eval::folds::{make_folds, Fold, FoldSpec};
use crate::eval::metrics;
use crate::io::Dataset;
use crate::model::{preset_encoding, Link, Preset};
use crate::sparse::DesignMatrix;
use crate::trainers::{fit, predict_all, HyperPriors, TrainConfig};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridCell {
    pub preset: Preset,
    pub dim: usize,
}

impl GridCell {
    pub fn new(preset: &str, dim: usize) -> Result<Self> {
        let preset = preset_encoding(preset)?;
        preset.check_dim(dim)?;
        Ok(Self { preset, dim })
    }

    /// `preset:d`, e.g. `irt:0` or `iswfe:5`.
    pub fn parse(spec: &str) -> Result<Self> {
        let (name, dim) = spec
            .rsplit_once(':')
            .ok_or_else(|| KtmError::UnknownPreset(spec.to_string()))?;
        let dim = dim
            .trim()
            .parse()
            .map_err(|_| KtmError::UnknownPreset(spec.to_string()))?;
        Self::new(name, dim)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PredictionMode {
    /// Test probabilities averaged over post-burn-in sweeps (Gibbs only).
    #[default]
    Averaged,
    /// Probabilities from the final parameter estimate.
    PointEstimate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvConfig {
    pub folds: FoldSpec,
    /// `dim` is overridden per grid cell and `seed` is offset per fold.
    pub train: TrainConfig,
    pub link: Link,
    pub prediction: PredictionMode,
    pub priors: HyperPriors,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            folds: FoldSpec::default(),
            train: TrainConfig::default(),
            link: Link::Logit,
            prediction: PredictionMode::Averaged,
            priors: HyperPriors::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FoldMetrics {
    pub fold: usize,
    pub acc: f64,
    pub auc: Option<f64>,
    pub nll: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CVReport {
    pub preset: String,
    pub dim: usize,
    pub folds: Vec<FoldMetrics>,
    pub mean_acc: f64,
    /// Mean over folds where AUC is defined.
    pub mean_auc: Option<f64>,
    pub mean_nll: f64,
}

impl CVReport {
    fn from_folds(preset: &str, dim: usize, folds: Vec<FoldMetrics>) -> Self {
        let k = folds.len() as f64;
        let aucs: Vec<f64> = folds.iter().filter_map(|f| f.auc).collect();
        if aucs.len() < folds.len() {
            log::warn!(
                "{preset} d={dim}: AUC undefined on {} of {} folds",
                folds.len() - aucs.len(),
                folds.len()
            );
        }
        Self {
            preset: preset.to_string(),
            dim,
            mean_acc: folds.iter().map(|f| f.acc).sum::<f64>() / k,
            mean_auc: (!aucs.is_empty()).then(|| aucs.iter().sum::<f64>() / aucs.len() as f64),
            mean_nll: folds.iter().map(|f| f.nll).sum::<f64>() / k,
            folds,
        }
    }
}

/// Trains on `train` and returns probabilities for `test`.
pub fn train_and_predict(
    train: &DesignMatrix,
    test: &DesignMatrix,
    train_cfg: &TrainConfig,
    cfg: &CvConfig,
) -> Result<Vec<f64>> {
    let out = fit(train, Some(test), train_cfg, cfg.link, &cfg.priors)?;
    Ok(match (cfg.prediction, out.test_predictions) {
        (PredictionMode::Averaged, Some(p)) => p,
        _ => predict_all(&out.params, test, out.link),
    })
}

fn run_fold(data: &DesignMatrix, fold_no: usize, fold: &Fold, dim: usize, cfg: &CvConfig) -> Result<FoldMetrics> {
    let train = data.subset(&fold.train);
    let test = data.subset(&fold.test);
    let train_cfg = TrainConfig {
        dim,
        seed: cfg.train.seed.wrapping_add(fold_no as u64),
        ..cfg.train.clone()
    };
    let preds = train_and_predict(&train, &test, &train_cfg, cfg)?;
    Ok(FoldMetrics {
        fold: fold_no,
        acc: metrics::accuracy(&preds, test.labels())?,
        auc: metrics::auc(&preds, test.labels())?,
        nll: metrics::nll(&preds, test.labels())?,
    })
}

#[cfg(feature = "parallel")]
fn run_folds(data: &DesignMatrix, folds: &[Fold], dim: usize, cfg: &CvConfig) -> Result<Vec<FoldMetrics>> {
    use rayon::prelude::*;
    folds
        .par_iter()
        .enumerate()
        .map(|(i, f)| run_fold(data, i, f, dim, cfg))
        .collect()
}

#[cfg(not(feature = "parallel"))]
fn run_folds(data: &DesignMatrix, folds: &[Fold], dim: usize, cfg: &CvConfig) -> Result<Vec<FoldMetrics>> {
    folds
        .iter()
        .enumerate()
        .map(|(i, f)| run_fold(data, i, f, dim, cfg))
        .collect()
}

/// Encodes once per grid cell, trains and scores every fold, and returns the
/// reports sorted by mean AUC, best first.
pub fn run_cv(dataset: &Dataset, grid: &[GridCell], cfg: &CvConfig) -> Result<Vec<CVReport>> {
    let students = dataset.student_of_row();
    let folds = make_folds(dataset.triplets.len(), &cfg.folds, Some(&students))?;
    let mut reports = Vec::with_capacity(grid.len());
    for cell in grid {
        cell.preset.check_dim(cell.dim)?;
        let encoding = cell.preset.encoding(&dataset.extra_columns)?;
        let data = dataset.encode(&encoding)?;
        log::info!("{} d={}: {} rows, {} features", cell.preset.name(), cell.dim, data.len(), data.width());
        let fold_metrics = run_folds(&data, &folds, cell.dim, cfg)?;
        reports.push(CVReport::from_folds(cell.preset.name(), cell.dim, fold_metrics));
    }
    reports.sort_by(|a, b| {
        let key = |r: &CVReport| r.mean_auc.unwrap_or(f64::NEG_INFINITY);
        key(b).total_cmp(&key(a))
    });
    Ok(reports)
}

fn fmt_auc(auc: Option<f64>) -> String {
    auc.map_or_else(|| "NA".to_string(), |a| a.to_string())
}

/// `preset,d,fold,acc,auc,nll`, one line per fold.
pub fn reports_csv(reports: &[CVReport]) -> String {
    let mut out = String::from("preset,d,fold,acc,auc,nll\n");
    for r in reports {
        for f in &r.folds {
            let _ = writeln!(out, "{},{},{},{},{},{}", r.preset, r.dim, f.fold, f.acc, fmt_auc(f.auc), f.nll);
        }
    }
    out
}

/// `preset,d,acc,auc,nll`, one line per grid cell.
pub fn summary_csv(reports: &[CVReport]) -> String {
    let mut out = String::from("preset,d,acc,auc,nll\n");
    for r in reports {
        let _ = writeln!(out, "{},{},{},{},{}", r.preset, r.dim, r.mean_acc, fmt_auc(r.mean_auc), r.mean_nll);
    }
    out
}

pub fn pretty_table(reports: &[CVReport]) -> String {
    let width = reports.iter().map(|r| r.preset.len()).max().unwrap_or(5).max(5);
    let mut out = format!("{:<width$}  {:>3}  {:>6}  {:>6}  {:>6}\n", "model", "dim", "ACC", "AUC", "NLL");
    for r in reports {
        let auc = r.mean_auc.map_or("    NA".to_string(), |a| format!("{a:.3}"));
        let _ = writeln!(
            out,
            "{:<width$}  {:>3}  {:>6.3}  {:>6}  {:>6.3}",
            r.preset, r.dim, r.mean_acc, auc, r.mean_nll
        );
    }
    out
}
