mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use ktm::eval::cv::{pretty_table, reports_csv, run_cv, summary_csv, CvConfig, GridCell, PredictionMode};
use ktm::eval::{accuracy, auc, nll, FoldSpec, SplitMode};
use ktm::io::{generate_synthetic, load_model, save_model, Dataset, Generator, ModelFile, RunManifest, Schema, SynthSpec, Vocab};
use ktm::model::{export_embeddings, preset_encoding, Link};
use ktm::trainers::{fit, log_to_csv, predict_all, BatchMode, HyperPriors, TrainConfig};

use config::{pick, FileConfig};

#[derive(Parser)]
#[command(name = "ktm", version, about = "Knowledge tracing machines: encode logs, train, predict and cross-validate")]
struct Cli {
    /// TOML file with default settings; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Encode a log into the sparse design-matrix text format.
    Encode {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        preset: Option<String>,
        /// Frozen vocabulary (from `train`); unknown ids become errors.
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a model on a whole log.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write `row,proba` predictions for a log.
    Predict {
        #[command(flatten)]
        scoring: ScoringArgs,
    },
    /// Predict and score against the log's outcomes.
    Evaluate {
        #[command(flatten)]
        scoring: ScoringArgs,
    },
    /// K-fold cross-validation over a grid of presets and dimensions.
    Cv {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        train: TrainArgs,
        /// Grid cells such as `irt:0,pfa:0,iswf:5`; defaults to the single
        /// cell given by --preset and --d.
        #[arg(long, value_delimiter = ',')]
        grid: Vec<String>,
        #[arg(long)]
        folds: Option<usize>,
        #[arg(long, value_enum)]
        split: Option<SplitArg>,
        /// Score with the final parameters instead of averaged MCMC draws.
        #[arg(long)]
        point_estimate: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Dump per-feature biases and embeddings as CSV.
    ExportEmbeddings {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic log with known parameters.
    Synth {
        #[arg(long, default_value = "rasch")]
        generator: String,
        #[arg(long, default_value_t = 100)]
        students: usize,
        #[arg(long, default_value_t = 20)]
        items: usize,
        #[arg(long, default_value_t = 5)]
        skills: usize,
        #[arg(long, default_value_t = 0)]
        d: usize,
        #[arg(long, default_value_t = 1)]
        attempts: usize,
        #[arg(long)]
        link: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    qmatrix: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "triplets")]
    schema: SchemaArg,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    d: Option<usize>,
    /// `logit` trains by MAP SGD, `probit` by Gibbs sampling.
    #[arg(long)]
    link: Option<String>,
    /// Epochs (SGD) or sampling iterations (Gibbs).
    #[arg(long, alias = "iters")]
    epochs: Option<usize>,
    #[arg(long, alias = "lr")]
    learning_rate: Option<f64>,
    #[arg(long)]
    l2: Option<f64>,
    #[arg(long)]
    init_std: Option<f64>,
    #[arg(long)]
    burn_in: Option<usize>,
    /// One gradient step per epoch on the whole training set.
    #[arg(long)]
    full_batch: bool,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ScoringArgs {
    #[arg(long)]
    model: PathBuf,
    /// Defaults to `vocab.json` next to the model.
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemaArg {
    Triplets,
    Assistments,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Row,
    Student,
}

impl From<SchemaArg> for Schema {
    fn from(s: SchemaArg) -> Self {
        match s {
            SchemaArg::Triplets => Schema::Triplets,
            SchemaArg::Assistments => Schema::Assistments,
        }
    }
}

fn parse_split(s: &str) -> anyhow::Result<SplitMode> {
    match s {
        "row" | "by_row" => Ok(SplitMode::ByRow),
        "student" | "by_student" => Ok(SplitMode::ByStudent),
        _ => bail!("unknown split `{s}`, expected row or student"),
    }
}

/// Settings after merging flags, config file and defaults; recorded in the
/// manifest.
#[derive(Serialize)]
struct TrainSettings {
    preset: String,
    link: Link,
    train: TrainConfig,
}

impl TrainSettings {
    fn resolve(args: &TrainArgs, file: &FileConfig) -> anyhow::Result<Self> {
        let defaults = TrainConfig::default();
        let link_name = pick(args.link.clone(), file.link.clone(), "logit".to_string());
        let full = args.full_batch || file.full_batch.unwrap_or(false);
        let train = TrainConfig {
            dim: pick(args.d, file.d, 0),
            epochs: pick(args.epochs, file.epochs, defaults.epochs),
            learning_rate: pick(args.learning_rate, file.learning_rate, defaults.learning_rate),
            l2: pick(args.l2, file.l2, defaults.l2),
            seed: pick(args.seed, file.seed, defaults.seed),
            init_std: pick(args.init_std, file.init_std, defaults.init_std),
            batch: if full { BatchMode::Full } else { BatchMode::Stochastic },
            burn_in: args.burn_in.or(file.burn_in),
        };
        train.validate()?;
        Ok(Self {
            preset: pick(args.preset.clone(), file.preset.clone(), "iswf".to_string()),
            link: link_name.parse()?,
            train,
        })
    }
}

struct Run {
    out: PathBuf,
    manifest: RunManifest,
}

impl Run {
    fn start(command: &str, out: &Path, seed: u64, settings: &impl Serialize) -> anyhow::Result<Self> {
        std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        Ok(Self {
            out: out.to_path_buf(),
            manifest: RunManifest::start(command, seed, serde_json::to_value(settings)?),
        })
    }

    fn input(&mut self, path: &Path) -> anyhow::Result<()> {
        self.manifest.add_input(path)?;
        Ok(())
    }

    fn data_inputs(&mut self, data: &DataArgs) -> anyhow::Result<()> {
        self.input(&data.data)?;
        if let Some(q) = &data.qmatrix {
            self.input(q)?;
        }
        Ok(())
    }

    fn write(&mut self, name: &str, contents: &str) -> anyhow::Result<()> {
        let path = self.out.join(name);
        std::fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        self.manifest.add_output(&path);
        Ok(())
    }

    fn finish(mut self) -> anyhow::Result<()> {
        self.manifest.finish();
        self.manifest.write(self.out.join("manifest.json"))?;
        Ok(())
    }
}

fn load_data(data: &DataArgs, vocab: Option<&Vocab>) -> anyhow::Result<Dataset> {
    Dataset::load(&data.data, data.qmatrix.as_deref(), data.schema.into(), vocab)
        .with_context(|| format!("loading {}", data.data.display()))
}

fn encode(data: DataArgs, preset: Option<String>, vocab_path: Option<PathBuf>, out: PathBuf, file: &FileConfig) -> anyhow::Result<()> {
    let preset_name = pick(preset, file.preset.clone(), "iswf".to_string());
    let vocab = vocab_path.as_deref().map(Vocab::load).transpose()?;
    let mut run = Run::start("encode", &out, 0, &serde_json::json!({ "preset": preset_name }))?;
    run.data_inputs(&data)?;
    if let Some(p) = &vocab_path {
        run.input(p)?;
    }
    let ds = load_data(&data, vocab.as_ref())?;
    let preset = preset_encoding(&preset_name)?;
    let dm = ds.encode(&preset.encoding(&ds.extra_columns)?)?;
    log::info!("encoded {} rows into {} features", dm.len(), dm.width());
    run.write("design.txt", &dm.to_text())?;
    run.write("vocab.json", &ds.vocab.to_json())?;
    run.finish()
}

fn train(data: DataArgs, args: TrainArgs, out: PathBuf, file: &FileConfig) -> anyhow::Result<()> {
    let settings = TrainSettings::resolve(&args, file)?;
    let mut run = Run::start("train", &out, settings.train.seed, &settings)?;
    run.data_inputs(&data)?;
    let ds = load_data(&data, None)?;
    let preset = preset_encoding(&settings.preset)?;
    preset.check_dim(settings.train.dim)?;
    let encoding = preset.encoding(&ds.extra_columns)?;
    let dm = ds.encode(&encoding)?;
    log::info!("training {} d={} on {} rows, {} features", preset.name(), settings.train.dim, dm.len(), dm.width());
    let fitted = fit(&dm, None, &settings.train, settings.link, &HyperPriors::default())?;
    let model = ModelFile::new(preset.name(), settings.link, encoding, dm.space().clone(), fitted.params, &ds.vocab)?;
    save_model(&model, out.join("model.json"))?;
    run.manifest.add_output(out.join("model.json"));
    run.write("vocab.json", &ds.vocab.to_json())?;
    run.write("train_log.csv", &log_to_csv(&fitted.log))?;
    run.finish()
}

/// Loads model, vocabulary and log, and returns the predictions plus labels.
fn score(run: &mut Run, args: &ScoringArgs) -> anyhow::Result<(Vec<f64>, Vec<u8>)> {
    let vocab_path = args
        .vocab
        .clone()
        .unwrap_or_else(|| args.model.with_file_name("vocab.json"));
    run.input(&args.model)?;
    run.input(&vocab_path)?;
    run.data_inputs(&args.data)?;
    let vocab = Vocab::load(&vocab_path)?;
    let model = load_model(&args.model, Some(&vocab))?;
    let ds = load_data(&args.data, Some(&vocab))?;
    let dm = ds.encode(&model.encoding)?;
    if dm.space() != &model.space {
        bail!("the log encodes to a different feature layout than the model was trained on");
    }
    Ok((predict_all(&model.params, &dm, model.link), dm.labels().to_vec()))
}

fn predictions_csv(preds: &[f64]) -> String {
    let mut out = String::from("row,proba\n");
    for (i, p) in preds.iter().enumerate() {
        out.push_str(&format!("{i},{p}\n"));
    }
    out
}

fn predict(args: ScoringArgs) -> anyhow::Result<()> {
    let mut run = Run::start("predict", &args.out, 0, &serde_json::json!({}))?;
    let (preds, _) = score(&mut run, &args)?;
    run.write("predictions.csv", &predictions_csv(&preds))?;
    run.finish()
}

fn evaluate(args: ScoringArgs) -> anyhow::Result<()> {
    let mut run = Run::start("evaluate", &args.out, 0, &serde_json::json!({}))?;
    let (preds, labels) = score(&mut run, &args)?;
    let (acc, auc, nll) = (accuracy(&preds, &labels)?, auc(&preds, &labels)?, nll(&preds, &labels)?);
    let auc_text = auc.map_or_else(|| "NA".to_string(), |a| a.to_string());
    println!("acc {acc:.4}  auc {}  nll {nll:.4}", auc.map_or_else(|| "NA".to_string(), |a| format!("{a:.4}")));
    run.write("predictions.csv", &predictions_csv(&preds))?;
    run.write("metrics.csv", &format!("acc,auc,nll\n{acc},{auc_text},{nll}\n"))?;
    run.finish()
}

#[derive(Serialize)]
struct CvSettings {
    #[serde(flatten)]
    train: TrainSettings,
    grid: Vec<String>,
    folds: FoldSpec,
    point_estimate: bool,
}

#[allow(clippy::too_many_arguments)]
fn cv(
    data: DataArgs,
    args: TrainArgs,
    grid: Vec<String>,
    folds: Option<usize>,
    split: Option<SplitArg>,
    point_estimate: bool,
    out: PathBuf,
    file: &FileConfig,
) -> anyhow::Result<()> {
    let train = TrainSettings::resolve(&args, file)?;
    let grid = if !grid.is_empty() {
        grid
    } else if let Some(g) = &file.grid {
        g.clone()
    } else {
        vec![format!("{}:{}", train.preset, train.train.dim)]
    };
    let cells = grid.iter().map(|c| GridCell::parse(c)).collect::<Result<Vec<_>, _>>()?;
    let mode = match split {
        Some(SplitArg::Row) => SplitMode::ByRow,
        Some(SplitArg::Student) => SplitMode::ByStudent,
        None => file.split.as_deref().map(parse_split).transpose()?.unwrap_or(SplitMode::ByRow),
    };
    let settings = CvSettings {
        folds: FoldSpec {
            k: pick(folds, file.folds, FoldSpec::default().k),
            seed: train.train.seed,
            mode,
        },
        point_estimate: point_estimate || file.point_estimate.unwrap_or(false),
        grid,
        train,
    };
    let mut run = Run::start("cv", &out, settings.train.train.seed, &settings)?;
    run.data_inputs(&data)?;
    let ds = load_data(&data, None)?;
    let cfg = CvConfig {
        folds: settings.folds,
        train: settings.train.train.clone(),
        link: settings.train.link,
        prediction: if settings.point_estimate {
            PredictionMode::PointEstimate
        } else {
            PredictionMode::Averaged
        },
        priors: HyperPriors::default(),
    };
    let reports = run_cv(&ds, &cells, &cfg)?;
    print!("{}", pretty_table(&reports));
    run.write("report.csv", &reports_csv(&reports))?;
    run.write("summary.csv", &summary_csv(&reports))?;
    run.finish()
}

fn export(model_path: PathBuf, out: PathBuf) -> anyhow::Result<()> {
    let mut run = Run::start("export-embeddings", &out, 0, &serde_json::json!({}))?;
    run.input(&model_path)?;
    let model = load_model(&model_path, None)?;
    let table = export_embeddings(&model.params, &model.space)?;
    run.write("embeddings.csv", &table.to_csv())?;
    run.finish()
}

#[allow(clippy::too_many_arguments)]
fn synth(
    generator: String,
    students: usize,
    items: usize,
    skills: usize,
    dim: usize,
    attempts: usize,
    link: Option<String>,
    seed: Option<u64>,
    sigma: Option<f64>,
    out: PathBuf,
    file: &FileConfig,
) -> anyhow::Result<()> {
    let defaults = SynthSpec::default();
    let spec = SynthSpec {
        generator: generator.parse::<Generator>()?,
        students,
        items,
        skills,
        dim,
        attempts,
        link: pick(link, file.link.clone(), "logit".to_string()).parse()?,
        seed: pick(seed, file.seed, defaults.seed),
        sigma: sigma.unwrap_or(defaults.sigma),
        ..defaults
    };
    let mut run = Run::start("synth", &out, spec.seed, &spec)?;
    let generated = generate_synthetic(&spec)?;
    run.write("triplets.csv", &generated.triplets_csv)?;
    run.write("qmatrix.csv", &generated.qmatrix_csv)?;
    run.write("truth.json", &generated.truth_json())?;
    run.finish()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let file = FileConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Encode { data, preset, vocab, out } => encode(data, preset, vocab, out, &file),
        Command::Train { data, train: args, out } => train(data, args, out, &file),
        Command::Predict { scoring } => predict(scoring),
        Command::Evaluate { scoring } => evaluate(scoring),
        Command::Cv {
            data,
            train,
            grid,
            folds,
            split,
            point_estimate,
            out,
        } => cv(data, train, grid, folds, split, point_estimate, out, &file),
        Command::ExportEmbeddings { model, out } => export(model, out),
        Command::Synth {
            generator,
            students,
            items,
            skills,
            d,
            attempts,
            link,
            seed,
            sigma,
            out,
        } => synth(generator, students, items, skills, d, attempts, link, seed, sigma, out, &file),
    }
}
