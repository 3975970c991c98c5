use std::path::Path;
use std::process::{Command, Output};

use ktm::sparse::DesignMatrix;
use tempfile::TempDir;

fn ktm(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ktm"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = ktm(dir, args);
    assert!(
        out.status.success(),
        "ktm {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn with<'a>(cmd: &[&'a str], data: &[&'a str], rest: &[&'a str]) -> Vec<&'a str> {
    [cmd, data, rest].concat()
}

fn read(dir: &Path, rel: &str) -> String {
    std::fs::read_to_string(dir.join(rel)).unwrap()
}

/// Synthetic log with a q-matrix, written to `s/`.
fn synth(dir: &Path) {
    ok(
        dir,
        &["synth", "--generator", "ktm", "--students", "40", "--items", "12", "--skills", "3", "--d", "2", "--attempts", "2", "--seed", "9", "--out", "s"],
    );
}

#[test]
fn cv_smoke_writes_one_summary_row() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    synth(dir);
    ok(
        dir,
        &["cv", "--data", "s/triplets.csv", "--qmatrix", "s/qmatrix.csv", "--preset", "iswf", "--d", "0", "--folds", "5", "--seed", "42", "--epochs", "20", "--out", "cv"],
    );
    let summary = read(dir, "cv/summary.csv");
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(lines[0], "preset,d,acc,auc,nll");
    assert_eq!(lines.len(), 2);
    assert!(lines[1].starts_with("KTM-iswf,0,"));
    assert_eq!(read(dir, "cv/report.csv").lines().count(), 6);
    assert!(dir.join("cv/manifest.json").exists());
}

#[test]
fn encode_pfa_reproduces_worked_example_columns() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    // items are 0-based q-matrix rows here
    std::fs::write(
        dir.join("log.csv"),
        "user_id,item_id,correct\n2,1,1\n2,1,0\n2,1,1\n2,2,0\n2,2,1\n1,1,1\n1,0,0\n",
    )
    .unwrap();
    std::fs::write(dir.join("q.csv"), "0,0,0\n1,1,0\n0,1,1\n").unwrap();
    ok(dir, &["encode", "--data", "log.csv", "--qmatrix", "q.csv", "--preset", "pfa", "--out", "enc"]);
    let dm = DesignMatrix::read_text(read(dir, "enc/design.txt").as_bytes()).unwrap();
    #[rustfmt::skip]
    let expected: [[f64; 9]; 7] = [
        [1., 1., 0., 0., 0., 0., 0., 0., 0.],
        [1., 1., 0., 1., 1., 0., 0., 0., 0.],
        [1., 1., 0., 1., 1., 0., 1., 1., 0.],
        [0., 1., 1., 0., 2., 0., 0., 1., 0.],
        [0., 1., 1., 0., 2., 0., 0., 2., 1.],
        [1., 1., 0., 0., 0., 0., 0., 0., 0.],
        [0., 0., 0., 0., 0., 0., 0., 0., 0.],
    ];
    assert_eq!(dm.width(), 9);
    for (row, want) in dm.rows().iter().zip(expected) {
        assert_eq!(row.densify(9).unwrap(), want);
    }
    assert_eq!(dm.labels(), [1, 0, 1, 0, 1, 1, 0]);
}

#[test]
fn probit_train_then_predict_gives_probabilities() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    synth(dir);
    ok(
        dir,
        &["train", "--data", "s/triplets.csv", "--qmatrix", "s/qmatrix.csv", "--preset", "iswf", "--d", "2", "--link", "probit", "--iters", "500", "--out", "m"],
    );
    ok(dir, &["predict", "--model", "m/model.json", "--data", "s/triplets.csv", "--qmatrix", "s/qmatrix.csv", "--out", "p"]);
    let preds = read(dir, "p/predictions.csv");
    let mut lines = preds.lines();
    assert_eq!(lines.next(), Some("row,proba"));
    let n_rows = read(dir, "s/triplets.csv").lines().count() - 1;
    let mut count = 0;
    for (i, line) in lines.enumerate() {
        let (row, p) = line.split_once(',').unwrap();
        assert_eq!(row.parse::<usize>().unwrap(), i);
        let p: f64 = p.parse().unwrap();
        assert!(p > 0.0 && p < 1.0, "row {i}: {p}");
        count += 1;
    }
    assert_eq!(count, n_rows);
    assert_eq!(read(dir, "m/train_log.csv").lines().count(), 501);
}

#[test]
fn identical_runs_give_identical_outputs() {
    let run = || {
        let tmp = TempDir::new().unwrap();
        let dir = tmp.path();
        synth(dir);
        let data = ["--data", "s/triplets.csv", "--qmatrix", "s/qmatrix.csv"];
        ok(dir, &with(&["cv"], &data, &["--grid", "irt:0,pfa:0,iswf:2", "--epochs", "15", "--out", "cv"]));
        ok(dir, &with(&["cv"], &data, &["--grid", "iswf:2", "--link", "probit", "--epochs", "30", "--split", "student", "--out", "cvp"]));
        ok(dir, &with(&["train"], &data, &["--preset", "iswf", "--d", "2", "--epochs", "15", "--out", "m"]));
        ok(dir, &with(&["evaluate", "--model", "m/model.json"], &data, &["--out", "e"]));
        ok(dir, &["export-embeddings", "--model", "m/model.json", "--out", "x"]);
        ok(dir, &with(&["encode"], &data, &["--preset", "iswf", "--out", "enc"]));
        let files = [
            "s/triplets.csv", "s/qmatrix.csv", "s/truth.json", "cv/report.csv", "cv/summary.csv", "cvp/report.csv",
            "m/model.json", "m/vocab.json", "m/train_log.csv", "e/predictions.csv", "e/metrics.csv",
            "x/embeddings.csv", "enc/design.txt",
        ];
        files.map(|f| read(dir, f))
    };
    assert_eq!(run(), run());
}

#[test]
fn flags_override_config_file() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    synth(dir);
    std::fs::write(dir.join("run.toml"), "grid = [\"irt:0\", \"pfa:0\"]\nepochs = 10\nfolds = 3\n").unwrap();
    let data = ["--data", "s/triplets.csv", "--qmatrix", "s/qmatrix.csv"];
    ok(dir, &[&["cv", "--config", "run.toml", "--out", "a"][..], &data].concat());
    let summary = read(dir, "a/summary.csv");
    assert_eq!(summary.lines().count(), 3);
    assert_eq!(read(dir, "a/report.csv").lines().count(), 1 + 2 * 3);
    ok(dir, &[&["cv", "--config", "run.toml", "--folds", "2", "--grid", "afm:0", "--out", "b"][..], &data].concat());
    let report = read(dir, "b/report.csv");
    assert_eq!(report.lines().count(), 3);
    assert!(report.lines().skip(1).all(|l| l.starts_with("AFM,0,")));
    std::fs::write(dir.join("bad.toml"), "epochz = 3\n").unwrap();
    assert!(!ktm(dir, &[&["cv", "--config", "bad.toml", "--out", "c"][..], &data].concat()).status.success());
}

#[test]
fn failures_exit_nonzero_with_a_diagnostic() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    synth(dir);
    let data = ["--data", "s/triplets.csv", "--qmatrix", "s/qmatrix.csv"];

    let unknown_flag = ktm(dir, &["cv", "--bogus"]);
    assert!(!unknown_flag.status.success());

    let bad_preset = ktm(dir, &[&["train", "--preset", "irt", "--d", "3", "--out", "m"][..], &data].concat());
    assert!(!bad_preset.status.success());
    assert!(String::from_utf8_lossy(&bad_preset.stderr).contains("IRT"));

    ok(dir, &[&["train", "--preset", "irt", "--epochs", "5", "--out", "m"][..], &data].concat());
    std::fs::write(dir.join("new.csv"), "user_id,item_id,correct\nstranger,0,1\n").unwrap();
    let unknown_user = ktm(dir, &["predict", "--model", "m/model.json", "--data", "new.csv", "--qmatrix", "s/qmatrix.csv", "--out", "p"]);
    assert!(!unknown_user.status.success());
    assert!(String::from_utf8_lossy(&unknown_user.stderr).contains("stranger"));

    let tampered = read(dir, "m/model.json").replacen("\"vocab_digest\":\"", "\"vocab_digest\":\"0", 1);
    std::fs::write(dir.join("m/model.json"), tampered).unwrap();
    let corrupt = ktm(dir, &[&["predict", "--model", "m/model.json", "--out", "p"][..], &data].concat());
    assert!(!corrupt.status.success());
    assert!(String::from_utf8_lossy(&corrupt.stderr).contains("corrupt"));
}
