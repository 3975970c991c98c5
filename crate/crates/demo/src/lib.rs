//! Browser bindings. Every export takes plain strings and numbers and
//! returns a JSON document; failures come back as `{"error": "..."}` so the
//! page never has to catch exceptions.

use serde::Serialize;
use serde_json::json;
use wasm_bindgen::prelude::wasm_bindgen;

use ktm::eval::cv::{run_cv, CvConfig, GridCell};
use ktm::eval::{auc, make_folds, FoldSpec};
use ktm::io::{generate_synthetic, Dataset, Generator, SynthSpec};
use ktm::model::{export_embeddings, preset_encoding, Link};
use ktm::trainers::{fit, predict_all, HyperPriors, TrainConfig};

fn respond<T: Serialize>(result: Result<T, String>) -> String {
    match result {
        Ok(v) => serde_json::to_string(&v).unwrap_or_else(|e| json!({ "error": e.to_string() }).to_string()),
        Err(e) => json!({ "error": e }).to_string(),
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

#[derive(Serialize)]
struct Column {
    block: String,
    local: usize,
}

#[derive(Serialize)]
struct Encoded {
    columns: Vec<Column>,
    rows: Vec<Vec<f64>>,
    labels: Vec<u8>,
    users: Vec<String>,
    items: Vec<String>,
}

fn encode_impl(log_csv: &str, qmatrix_csv: &str, preset: &str) -> Result<Encoded, String> {
    let q = ktm::encoder::QMatrix::parse(qmatrix_csv).map_err(err)?;
    let ds = Dataset::from_csv(log_csv, Some(q), None).map_err(err)?;
    let preset = preset_encoding(preset).map_err(err)?;
    let dm = ds.encode(&preset.encoding(&ds.extra_columns).map_err(err)?).map_err(err)?;
    let space = dm.space();
    let columns = (0..space.total_width())
        .map(|k| {
            let (block, local) = space.locate(k).expect("index within space");
            Column { block: block.to_string(), local }
        })
        .collect();
    let rows = dm.rows().iter().map(|r| r.densify(dm.width()).expect("row fits")).collect();
    let names = |m: &ktm::io::IdMap| (0..m.len()).map(|i| m.raw(i).to_string()).collect();
    Ok(Encoded {
        columns,
        rows,
        labels: dm.labels().to_vec(),
        users: names(&ds.vocab.users),
        items: names(&ds.vocab.items),
    })
}

/// Encodes a `user_id,item_id,correct` log under a preset (`iswf`, `PFA`, ...)
/// and returns the dense design matrix with its column labels.
#[wasm_bindgen]
pub fn encode_log(log_csv: &str, qmatrix_csv: &str, preset: &str) -> String {
    respond(encode_impl(log_csv, qmatrix_csv, preset))
}

#[derive(Serialize)]
struct Point {
    block: String,
    local: usize,
    bias: f64,
    v: Vec<f64>,
}

#[derive(Serialize)]
struct Trained {
    train_nll: Vec<f64>,
    test_auc: Option<f64>,
    oracle_auc: Option<f64>,
    points: Vec<Point>,
}

fn synthetic(generator: &str, students: usize, items: usize, skills: usize, seed: u64) -> Result<ktm::io::SynthOutput, String> {
    let spec = SynthSpec {
        generator: generator.parse::<Generator>().map_err(err)?,
        students,
        items,
        skills,
        dim: 2,
        seed,
        ..Default::default()
    };
    generate_synthetic(&spec).map_err(err)
}

#[allow(clippy::too_many_arguments)]
fn train_impl(
    generator: &str,
    students: usize,
    items: usize,
    skills: usize,
    preset: &str,
    d: usize,
    link: &str,
    epochs: usize,
    seed: u64,
) -> Result<Trained, String> {
    let synth = synthetic(generator, students, items, skills, seed)?;
    let link: Link = link.parse().map_err(err)?;
    let preset = preset_encoding(preset).map_err(err)?;
    preset.check_dim(d).map_err(err)?;
    let dm = synth.dataset.encode(&preset.encoding(&[]).map_err(err)?).map_err(err)?;
    let folds = make_folds(dm.len(), &FoldSpec { seed, ..Default::default() }, None).map_err(err)?;
    let (train, test) = (dm.subset(&folds[0].train), dm.subset(&folds[0].test));
    let cfg = TrainConfig { dim: d, epochs, seed, ..Default::default() };
    let out = fit(&train, Some(&test), &cfg, link, &HyperPriors::default()).map_err(err)?;
    let preds = out.test_predictions.clone().unwrap_or_else(|| predict_all(&out.params, &test, link));
    let truth: Vec<f64> = folds[0].test.iter().map(|&i| synth.truth.probabilities[i]).collect();
    let table = export_embeddings(&out.params, dm.space()).map_err(err)?;
    Ok(Trained {
        train_nll: out.log.iter().map(|r| r.train_nll).collect(),
        test_auc: auc(&preds, test.labels()).map_err(err)?,
        oracle_auc: auc(&truth, test.labels()).map_err(err)?,
        points: table
            .rows
            .into_iter()
            .map(|r| Point { block: r.block, local: r.local_id, bias: r.bias, v: r.embedding })
            .collect(),
    })
}

/// Generates a synthetic log, trains one preset on 80% of it and returns the
/// training curve, held-out AUC next to the generator's own AUC, and every
/// feature's bias and embedding.
#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn train_synthetic(
    generator: &str,
    students: usize,
    items: usize,
    skills: usize,
    preset: &str,
    d: usize,
    link: &str,
    epochs: usize,
    seed: u64,
) -> String {
    respond(train_impl(generator, students, items, skills, preset, d, link, epochs, seed))
}

fn compare_impl(generator: &str, students: usize, items: usize, skills: usize, grid: &str, epochs: usize, seed: u64) -> Result<serde_json::Value, String> {
    let synth = synthetic(generator, students, items, skills, seed)?;
    let cells = grid
        .split(',')
        .filter(|c| !c.trim().is_empty())
        .map(|c| GridCell::parse(c.trim()))
        .collect::<Result<Vec<_>, _>>()
        .map_err(err)?;
    let cfg = CvConfig {
        train: TrainConfig { epochs, seed, ..Default::default() },
        folds: FoldSpec { seed, ..Default::default() },
        ..Default::default()
    };
    let reports = run_cv(&synth.dataset, &cells, &cfg).map_err(err)?;
    Ok(json!(reports
        .iter()
        .map(|r| json!({ "preset": r.preset, "d": r.dim, "acc": r.mean_acc, "auc": r.mean_auc, "nll": r.mean_nll }))
        .collect::<Vec<_>>()))
}

/// Five-fold cross-validation of a preset grid such as `irt:0,pfa:0,iswf:2`
/// on a synthetic log, best mean AUC first.
#[wasm_bindgen]
pub fn compare_presets(generator: &str, students: usize, items: usize, skills: usize, grid: &str, epochs: usize, seed: u64) -> String {
    respond(compare_impl(generator, students, items, skills, grid, epochs, seed))
}
