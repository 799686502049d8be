//! `coltype` command-line front end.
//!
//! Exit codes: 0 success, 2 usage or input parse error, 3 a column without
//! base logits, 4 internal failure.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use coltype_core::evaluation::{
    run_experiment, synthesize, train_val_split, ExperimentConfig, ExperimentSpec, SynthOptions,
};
use coltype_core::gnn::{load_model, predict_batch, save_model, GnnConfig, GnnFamily, GnnModel};
use coltype_core::graph::{batch_graphs, read_tables, write_tables, LabelVocab, Table};
use coltype_core::predictor::{
    collect_logits, load_logits, BaselineConfig, LinearBaseline, LogitsMap,
};
use coltype_core::training::{
    base_logits, fit, grid_search, join_graphs, write_grid_csv, write_history_csv, GridSpec,
    StackingMode, TrainConfig, GRID_HEADS, GRID_STEPS,
};
use coltype_core::Error as CoreError;

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_JOIN: i32 = 3;
pub const EXIT_INTERNAL: i32 = 4;

#[derive(Parser, Debug)]
#[command(
    name = "coltype",
    version,
    about = "Semantic column typing with a GNN stacked on a column predictor"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train one model and write it with its history and manifest.
    Train(TrainArgs),
    /// Train one model per grid cell and keep the best on validation.
    Grid(GridArgs),
    /// Label every column of a dataset.
    Predict(PredictArgs),
    /// Cross-validated comparison of the base predictor and stacked models.
    Evaluate(EvaluateArgs),
    /// Write the synthetic planted-dependency dataset.
    Synth(SynthArgs),
    /// Repeat the command recorded in a manifest.
    Rerun(RerunArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FamilyArg {
    Gcn,
    Ggnn,
    Gat,
}

impl From<FamilyArg> for GnnFamily {
    fn from(f: FamilyArg) -> Self {
        match f {
            FamilyArg::Gcn => GnnFamily::Gcn,
            FamilyArg::Ggnn => GnnFamily::Ggnn,
            FamilyArg::Gat => GnnFamily::Gat,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum StackingArg {
    InSample,
    OutOfFold,
}

#[derive(Args, Debug, Clone)]
pub struct OptimArgs {
    /// Training epochs [default: 100 gcn, 200 ggnn, 100 gat]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Tables per mini-batch
    #[arg(long, default_value_t = coltype_core::training::DEFAULT_BATCH_SIZE)]
    pub batch_size: usize,
    #[arg(long, default_value_t = coltype_core::training::DEFAULT_LEARNING_RATE)]
    pub lr: f64,
    #[arg(long, default_value_t = coltype_core::training::DEFAULT_WEIGHT_DECAY)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl OptimArgs {
    fn train_config(&self, family: GnnFamily) -> TrainConfig {
        let preset = TrainConfig::preset(family);
        TrainConfig {
            learning_rate: self.lr,
            weight_decay: self.weight_decay,
            epochs: self.epochs.unwrap_or(preset.epochs),
            batch_size: self.batch_size,
            seed: self.seed,
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct BaseArgs {
    /// Per-column logits (JSON Lines); when absent a built-in baseline is
    /// fitted on the training tables and embedded in the model
    #[arg(long)]
    pub logits: Option<PathBuf>,
    /// Width of the baseline's hashed feature vector
    #[arg(long, default_value_t = coltype_core::predictor::DEFAULT_WIDTH)]
    pub feature_width: usize,
    #[arg(long, default_value_t = 30)]
    pub base_epochs: usize,
    /// Provenance of the training logits fed to the meta-learner
    #[arg(long, value_enum, default_value_t = StackingArg::InSample)]
    pub stacking: StackingArg,
    #[arg(long, default_value_t = 5)]
    pub stacking_folds: usize,
}

impl BaseArgs {
    fn baseline_config(&self, seed: u64) -> BaselineConfig {
        BaselineConfig {
            width: self.feature_width,
            epochs: self.base_epochs,
            seed,
            ..BaselineConfig::default()
        }
    }

    fn stacking_mode(&self) -> StackingMode {
        match self.stacking {
            StackingArg::InSample => StackingMode::InSample,
            StackingArg::OutOfFold => StackingMode::OutOfFold {
                folds: self.stacking_folds,
            },
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct TrainArgs {
    /// Labeled tables (JSON Lines)
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = FamilyArg::Gat)]
    pub family: FamilyArg,
    /// Message-passing steps [default: 2 gcn, 3 ggnn, 2 gat]
    #[arg(long)]
    pub steps: Option<usize>,
    /// Attention heads (gat only)
    #[arg(long)]
    pub heads: Option<usize>,
    /// Width of interior steps [default: number of classes]
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    #[command(flatten)]
    pub optim: OptimArgs,
    #[command(flatten)]
    pub base: BaseArgs,
    #[arg(long)]
    pub out_model: PathBuf,
    /// History CSV [default: <out-model>.history.csv]
    #[arg(long)]
    pub history: Option<PathBuf>,
}

impl TrainArgs {
    fn gnn_config(&self, k: usize) -> GnnConfig {
        let family = GnnFamily::from(self.family);
        let preset = GnnConfig::preset(family, k);
        GnnConfig {
            steps: self.steps.unwrap_or(preset.steps),
            heads: if family == GnnFamily::Gat {
                self.heads.unwrap_or(preset.heads)
            } else {
                1
            },
            hidden_dim: self.hidden_dim.unwrap_or(preset.hidden_dim),
            ..preset
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct GridArgs {
    #[command(flatten)]
    pub train: TrainArgs,
    #[arg(long, value_delimiter = ',', default_values_t = GRID_HEADS)]
    pub grid_heads: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = GRID_STEPS)]
    pub grid_steps: Vec<usize>,
    /// Per-cell scores [default: <out-model>.grid.csv]
    #[arg(long)]
    pub grid_csv: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Tables to label (labels optional)
    #[arg(long)]
    pub data: PathBuf,
    /// Per-column logits; required unless the model embeds a baseline
    #[arg(long)]
    pub logits: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    /// Comma-separated `family[:steps[:heads]]` entries
    #[arg(long, value_delimiter = ',', default_values_t = ["gat".to_string(), "gcn".to_string(), "ggnn".to_string()])]
    pub configs: Vec<String>,
    /// Override every configuration's epoch count
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long, default_value_t = coltype_core::training::DEFAULT_BATCH_SIZE)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = coltype_core::predictor::DEFAULT_WIDTH)]
    pub feature_width: usize,
    #[arg(long, default_value_t = 30)]
    pub base_epochs: usize,
    #[arg(long, value_enum, default_value_t = StackingArg::InSample)]
    pub stacking: StackingArg,
    #[arg(long, default_value_t = 5)]
    pub stacking_folds: usize,
    /// Full report (JSON)
    #[arg(long)]
    pub report: PathBuf,
    /// Summary CSV [default: <report>.csv]
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct SynthArgs {
    #[arg(long)]
    pub tables: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Rare ambiguous pair and several frequent filler classes
    #[arg(long)]
    pub imbalanced: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct RerunArgs {
    #[arg(long)]
    pub manifest: PathBuf,
}

/// Record written beside every primary output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format_version: u32,
    pub command: String,
    pub argv: Vec<String>,
    pub seed: u64,
    pub config: serde_json::Value,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub created_unix_secs: u64,
}

pub fn manifest_path(output: &Path) -> PathBuf {
    sibling(output, "manifest.json")
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}

struct Run<'a> {
    argv: &'a [String],
    command: &'static str,
    seed: u64,
    config: serde_json::Value,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
}

impl<'a> Run<'a> {
    fn new(argv: &'a [String], command: &'static str, seed: u64) -> Self {
        Self {
            argv,
            command,
            seed,
            config: serde_json::Value::Null,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    fn input(&mut self, name: &str, path: &Path) {
        self.inputs.insert(name.into(), path.display().to_string());
    }

    fn output(&mut self, name: &str, path: &Path) {
        self.outputs.insert(name.into(), path.display().to_string());
    }

    fn finish(self, primary: &Path) -> Result<()> {
        let created = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let m = RunManifest {
            format_version: coltype_core::gnn::FORMAT_VERSION,
            command: self.command.into(),
            argv: self.argv.to_vec(),
            seed: self.seed,
            config: self.config,
            inputs: self.inputs,
            outputs: self.outputs,
            created_unix_secs: created,
        };
        let path = manifest_path(primary);
        let mut w = create(&path)?;
        serde_json::to_writer_pretty(&mut w, &m)?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).with_context(|| format!("opening {}", path.display()))?,
    ))
}

fn load_tables(path: &Path) -> Result<Vec<Table>> {
    read_tables(open(path)?).with_context(|| format!("reading {}", path.display()))
}

fn require_labels(tables: &[Table], path: &Path) -> Result<()> {
    if tables.is_empty() {
        bail!(CoreError::InvalidInput(format!(
            "{} holds no tables",
            path.display()
        )));
    }
    if let Some(t) = tables.iter().find(|t| !t.is_fully_labeled()) {
        bail!(CoreError::InvalidInput(format!(
            "table {:?} has unlabeled columns",
            t.table_id
        )));
    }
    Ok(())
}

/// Maps an error chain to the documented exit code.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<CoreError>() {
            return match e {
                CoreError::MissingLogits { .. } => EXIT_JOIN,
                CoreError::Training(_) => EXIT_INTERNAL,
                _ => EXIT_USAGE,
            };
        }
        if cause.is::<std::io::Error>() || cause.is::<serde_json::Error>() {
            return EXIT_USAGE;
        }
    }
    EXIT_INTERNAL
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code.
pub fn run_from<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<String>,
{
    let argv: Vec<String> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command, &argv) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}

fn dispatch(command: Command, argv: &[String]) -> Result<()> {
    match command {
        Command::Train(a) => cmd_train(&a, argv),
        Command::Grid(a) => cmd_grid(&a, argv),
        Command::Predict(a) => cmd_predict(&a, argv),
        Command::Evaluate(a) => cmd_evaluate(&a, argv),
        Command::Synth(a) => cmd_synth(&a, argv),
        Command::Rerun(a) => cmd_rerun(&a),
    }
}

struct Prepared {
    tables: Vec<Table>,
    vocab: LabelVocab,
    train: Vec<Table>,
    val: Vec<Table>,
    logits: LogitsMap,
    base: Option<LinearBaseline>,
}

fn prepare(a: &TrainArgs, run: &mut Run) -> Result<Prepared> {
    run.input("data", &a.data);
    let tables = load_tables(&a.data)?;
    require_labels(&tables, &a.data)?;
    let vocab = LabelVocab::from_tables(&tables);
    let ids: Vec<String> = tables.iter().map(|t| t.table_id.clone()).collect();
    let (train_ids, _) = train_val_split(&ids, a.optim.seed)?;
    let in_train: std::collections::BTreeSet<&String> = train_ids.iter().collect();
    let (train, val): (Vec<Table>, Vec<Table>) = tables
        .iter()
        .cloned()
        .partition(|t| in_train.contains(&t.table_id));
    let (logits, base) = match &a.base.logits {
        Some(path) => {
            run.input("logits", path);
            let map = load_logits(open(path)?, &vocab)
                .with_context(|| format!("reading {}", path.display()))?;
            (map, None)
        }
        None => {
            let cfg = a.base.baseline_config(a.optim.seed);
            let (model, map) = base_logits(&train, &val, &vocab, &cfg, a.base.stacking_mode())?;
            (map, Some(model))
        }
    };
    log::info!(
        "{} training tables, {} validation tables, {} classes",
        train.len(),
        val.len(),
        vocab.len()
    );
    Ok(Prepared {
        tables,
        vocab,
        train,
        val,
        logits,
        base,
    })
}

fn write_model(path: &Path, model: &GnnModel) -> Result<()> {
    let mut w = create(path)?;
    save_model(&mut w, model)?;
    w.flush()?;
    Ok(())
}

fn train_config_json(gnn: &GnnConfig, train: &TrainConfig, base: &BaseArgs) -> serde_json::Value {
    serde_json::json!({
        "gnn": gnn,
        "train": train,
        "baseline": if base.logits.is_some() { serde_json::Value::Null } else {
            serde_json::to_value(base.baseline_config(train.seed)).unwrap_or_default()
        },
        "stacking": base.stacking_mode(),
    })
}

fn cmd_train(a: &TrainArgs, argv: &[String]) -> Result<()> {
    let mut run = Run::new(argv, "train", a.optim.seed);
    let p = prepare(a, &mut run)?;
    let gnn = a.gnn_config(p.vocab.len());
    let train = a.optim.train_config(gnn.family);
    let outcome = fit(&p.train, &p.val, &p.logits, &p.vocab, &gnn, &train)?;
    let model = GnnModel {
        config: outcome.config.clone(),
        vocab: p.vocab.clone(),
        params: outcome.params,
        base: p.base,
    };
    write_model(&a.out_model, &model)?;
    let history = a
        .history
        .clone()
        .unwrap_or_else(|| sibling(&a.out_model, "history.csv"));
    let mut w = create(&history)?;
    write_history_csv(&mut w, &outcome.history)?;
    w.flush()?;
    run.output("model", &a.out_model);
    run.output("history", &history);
    run.config = train_config_json(&outcome.config, &train, &a.base);
    run.finish(&a.out_model)?;
    println!(
        "trained {} (S={}, K={}) on {} tables: best epoch {} with validation macro F1 {:.4}",
        outcome.config.family,
        outcome.config.steps,
        outcome.config.heads,
        p.tables.len(),
        outcome.best_epoch,
        outcome.best_val_macro_f1
    );
    Ok(())
}

fn cmd_grid(a: &GridArgs, argv: &[String]) -> Result<()> {
    let t = &a.train;
    let mut run = Run::new(argv, "grid", t.optim.seed);
    let p = prepare(t, &mut run)?;
    let gnn = t.gnn_config(p.vocab.len());
    let train = t.optim.train_config(gnn.family);
    let grid = GridSpec {
        heads: a.grid_heads.clone(),
        steps: a.grid_steps.clone(),
    };
    let train_graphs = join_graphs(&p.train, &p.logits, &p.vocab)?;
    let val_graphs = join_graphs(&p.val, &p.logits, &p.vocab)?;
    let outcome = grid_search(&train_graphs, &val_graphs, &gnn, &grid, &train)?;
    let best = outcome.best;
    let model = GnnModel {
        config: best.config.clone(),
        vocab: p.vocab.clone(),
        params: best.params,
        base: p.base,
    };
    write_model(&t.out_model, &model)?;
    let grid_csv = a
        .grid_csv
        .clone()
        .unwrap_or_else(|| sibling(&t.out_model, "grid.csv"));
    let mut w = create(&grid_csv)?;
    write_grid_csv(&mut w, &outcome.cells)?;
    w.flush()?;
    let history = t
        .history
        .clone()
        .unwrap_or_else(|| sibling(&t.out_model, "history.csv"));
    let mut w = create(&history)?;
    write_history_csv(&mut w, &best.history)?;
    w.flush()?;
    run.output("model", &t.out_model);
    run.output("grid", &grid_csv);
    run.output("history", &history);
    let mut cfg = train_config_json(&best.config, &train, &t.base);
    cfg["grid"] = serde_json::to_value(&grid)?;
    run.config = cfg;
    run.finish(&t.out_model)?;
    println!(
        "{} grid cells; best S={}, K={} with validation macro F1 {:.4}",
        outcome.cells.len(),
        best.config.steps,
        best.config.heads,
        best.best_val_macro_f1
    );
    Ok(())
}

fn cmd_predict(a: &PredictArgs, argv: &[String]) -> Result<()> {
    let mut run = Run::new(argv, "predict", 0);
    run.input("model", &a.model);
    run.input("data", &a.data);
    let model =
        load_model(open(&a.model)?).with_context(|| format!("reading {}", a.model.display()))?;
    run.seed = model.config.seed;
    // labels are optional at inference and may lie outside the vocabulary
    let tables: Vec<Table> = load_tables(&a.data)?
        .into_iter()
        .map(|mut t| {
            t.columns.iter_mut().for_each(|c| c.label = None);
            t
        })
        .collect();
    if tables.is_empty() {
        bail!(CoreError::InvalidInput(format!(
            "{} holds no tables",
            a.data.display()
        )));
    }
    let logits = match (&a.logits, &model.base) {
        (Some(path), _) => {
            run.input("logits", path);
            load_logits(open(path)?, &model.vocab)
                .with_context(|| format!("reading {}", path.display()))?
        }
        (None, Some(base)) => collect_logits(base, &tables)?,
        (None, None) => {
            return Err(anyhow!(CoreError::MissingLogits {
                table_id: tables[0].table_id.clone(),
                column_index: 0
            }))
            .context("the model has no embedded baseline; pass --logits");
        }
    };
    let graphs = join_graphs(&tables, &logits, &model.vocab)?;
    let batch = batch_graphs(&graphs)?;
    let preds = predict_batch(&batch, &model.params, &model.config, &model.vocab)?;
    let mut w = create(&a.out)?;
    for p in &preds {
        serde_json::to_writer(&mut w, p)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    run.output("predictions", &a.out);
    run.config = serde_json::to_value(&model.config)?;
    run.finish(&a.out)?;
    println!("labeled {} columns in {} tables", preds.len(), tables.len());
    Ok(())
}

/// Parses `family[:steps[:heads]]`.
pub fn parse_config(spec: &str, k: usize) -> Result<GnnConfig> {
    let mut parts = spec.split(':');
    let family: GnnFamily = parts
        .next()
        .unwrap_or_default()
        .parse()
        .map_err(|e: CoreError| anyhow!(e))?;
    let mut cfg = GnnConfig::preset(family, k);
    let mut num = |what: &str| -> Result<Option<usize>> {
        parts
            .next()
            .map(|s| {
                s.parse::<usize>().map_err(|_| {
                    anyhow!(CoreError::InvalidInput(format!("bad {what} in {spec:?}")))
                })
            })
            .transpose()
    };
    if let Some(s) = num("steps")? {
        cfg.steps = s;
    }
    if let Some(h) = num("heads")? {
        cfg.heads = h;
    }
    if parts.next().is_some() {
        bail!(CoreError::InvalidInput(format!(
            "too many fields in {spec:?}"
        )));
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_evaluate(a: &EvaluateArgs, argv: &[String]) -> Result<()> {
    let mut run = Run::new(argv, "evaluate", a.seed);
    run.input("data", &a.data);
    let tables = load_tables(&a.data)?;
    require_labels(&tables, &a.data)?;
    let vocab = LabelVocab::from_tables(&tables);
    let configs = a
        .configs
        .iter()
        .map(|s| {
            let gnn = parse_config(s, vocab.len())?;
            let preset = TrainConfig::preset(gnn.family);
            let train = TrainConfig {
                epochs: a.epochs.unwrap_or(preset.epochs),
                batch_size: a.batch_size,
                ..preset
            };
            Ok(ExperimentConfig {
                name: s.clone(),
                gnn,
                train,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let base = BaseArgs {
        logits: None,
        feature_width: a.feature_width,
        base_epochs: a.base_epochs,
        stacking: a.stacking,
        stacking_folds: a.stacking_folds,
    };
    let spec = ExperimentSpec {
        folds: a.folds,
        seed: a.seed,
        base: base.baseline_config(a.seed),
        stacking: base.stacking_mode(),
        configs,
    };
    let report = run_experiment(&tables, &vocab, &spec)?;
    let mut w = create(&a.report)?;
    serde_json::to_writer_pretty(&mut w, &report)?;
    writeln!(w)?;
    w.flush()?;
    let csv = a
        .csv
        .clone()
        .unwrap_or_else(|| a.report.with_extension("csv"));
    let mut w = create(&csv)?;
    report.write_csv(&mut w)?;
    w.flush()?;
    run.output("report", &a.report);
    run.output("csv", &csv);
    run.config = serde_json::to_value(&spec)?;
    run.finish(&a.report)?;
    println!("{:<12} {:>18} {:>18}", "config", "macro F1", "weighted F1");
    for r in &report.rows {
        println!(
            "{:<12} {:>10.4} ± {:.4} {:>10.4} ± {:.4}",
            r.config, r.macro_f1.mean, r.macro_f1.std, r.weighted_f1.mean, r.weighted_f1.std
        );
    }
    Ok(())
}

fn cmd_synth(a: &SynthArgs, argv: &[String]) -> Result<()> {
    let mut run = Run::new(argv, "synth", a.seed);
    let opts = if a.imbalanced {
        SynthOptions::imbalanced(a.tables, a.seed)
    } else {
        SynthOptions::balanced(a.tables, a.seed)
    };
    let (tables, _) = synthesize(&opts)?;
    let mut w = create(&a.out)?;
    write_tables(&mut w, &tables)?;
    w.flush()?;
    run.output("data", &a.out);
    run.config = serde_json::to_value(&opts)?;
    run.finish(&a.out)?;
    println!("wrote {} tables to {}", tables.len(), a.out.display());
    Ok(())
}

fn cmd_rerun(a: &RerunArgs) -> Result<()> {
    let m: RunManifest = serde_json::from_reader(open(&a.manifest)?)
        .with_context(|| format!("reading {}", a.manifest.display()))?;
    if m.argv.get(1).map(String::as_str) == Some("rerun") {
        bail!(CoreError::InvalidInput("manifest records a rerun".into()));
    }
    let cli = Cli::try_parse_from(&m.argv)
        .map_err(|e| anyhow!(CoreError::InvalidInput(e.to_string())))?;
    dispatch(cli.command, &m.argv)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_strings() {
        let c = parse_config("gat", 5).unwrap();
        assert_eq!(
            (c.steps, c.heads),
            (2, coltype_core::gnn::DEFAULT_GAT_HEADS)
        );
        let c = parse_config("gat:3:2", 5).unwrap();
        assert_eq!((c.steps, c.heads), (3, 2));
        assert_eq!(parse_config("ggnn", 5).unwrap().steps, 3);
        assert!(parse_config("gat:x", 5).is_err());
        assert!(parse_config("mlp", 5).is_err());
        assert!(parse_config("gcn:1:1:1", 5).is_err());
    }

    #[test]
    fn exit_codes_follow_error_kind() {
        let join = anyhow!(CoreError::MissingLogits {
            table_id: "t".into(),
            column_index: 0
        })
        .context("x");
        assert_eq!(exit_code(&join), EXIT_JOIN);
        let parse = anyhow!(CoreError::Format {
            line: 3,
            message: "bad".into()
        });
        assert_eq!(exit_code(&parse), EXIT_USAGE);
        assert_eq!(
            exit_code(&anyhow!(CoreError::Training("leak".into()))),
            EXIT_INTERNAL
        );
        assert_eq!(exit_code(&anyhow!("other")), EXIT_INTERNAL);
    }

    #[test]
    fn sibling_paths() {
        assert_eq!(
            sibling(Path::new("out/model.json"), "history.csv"),
            PathBuf::from("out/model.history.csv")
        );
        assert_eq!(
            manifest_path(Path::new("p.jsonl")),
            PathBuf::from("p.manifest.json")
        );
    }

    #[test]
    fn protocol_defaults_on_the_command_line() {
        let cli =
            Cli::try_parse_from(["coltype", "train", "--data", "d", "--out-model", "m"]).unwrap();
        let Command::Train(a) = cli.command else {
            panic!()
        };
        let gnn = a.gnn_config(4);
        let train = a.optim.train_config(gnn.family);
        assert_eq!((gnn.family, gnn.steps), (GnnFamily::Gat, 2));
        assert_eq!(
            (train.epochs, train.learning_rate, train.weight_decay),
            (100, 1e-3, 5e-4)
        );
        let cli = Cli::try_parse_from([
            "coltype",
            "train",
            "--data",
            "d",
            "--out-model",
            "m",
            "--family",
            "ggnn",
        ])
        .unwrap();
        let Command::Train(a) = cli.command else {
            panic!()
        };
        assert_eq!(a.gnn_config(4).steps, 3);
        assert_eq!(a.optim.train_config(GnnFamily::Ggnn).epochs, 200);
        let cli =
            Cli::try_parse_from(["coltype", "grid", "--data", "d", "--out-model", "m"]).unwrap();
        let Command::Grid(g) = cli.command else {
            panic!()
        };
        assert_eq!(g.grid_heads, vec![1, 2, 4, 8, 12]);
        assert_eq!(g.grid_steps, vec![1, 2, 3, 4]);
    }
}
