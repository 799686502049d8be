//! Metrics, cross-validation, analysis breakdowns and the synthetic
//! planted-dependency dataset.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gnn::{model_forward, GnnConfig};
use crate::graph::{batch_graphs, Column, LabelVocab, Table};
use crate::numerics::argmax;
use crate::predictor::{BaselineConfig, ColumnPredictor};
use crate::rng::substream;
use crate::training::{base_logits, fit, join_graphs, StackingMode, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
    pub predicted: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FScores {
    pub weighted_f1: f64,
    pub macro_f1: f64,
    /// One entry per vocabulary class.
    pub per_class: Vec<ClassScore>,
}

impl FScores {
    /// Classes that appear among the golds or the predictions.
    pub fn in_universe(&self, class: usize) -> bool {
        let c = &self.per_class[class];
        c.support > 0 || c.predicted > 0
    }

    /// Unweighted mean F1 over `classes` that are in the universe.
    pub fn macro_over(&self, classes: &[usize]) -> Option<f64> {
        let present: Vec<f64> = classes
            .iter()
            .filter(|&&c| self.in_universe(c))
            .map(|&c| self.per_class[c].f1)
            .collect();
        (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64)
    }
}

/// Per-class F1 = 2PR/(P+R) (0 when P+R = 0). Macro averages over classes
/// present in the golds or the predictions; weighted averages by gold
/// support. Empty input scores 0.
pub fn f_scores(predictions: &[usize], golds: &[usize], num_classes: usize) -> Result<FScores> {
    if predictions.len() != golds.len() {
        return Err(Error::invalid(format!(
            "{} predictions for {} golds",
            predictions.len(),
            golds.len()
        )));
    }
    let mut tp = vec![0usize; num_classes];
    let mut support = vec![0usize; num_classes];
    let mut predicted = vec![0usize; num_classes];
    for (&p, &g) in predictions.iter().zip(golds) {
        if p >= num_classes || g >= num_classes {
            return Err(Error::invalid(format!(
                "class index out of range for k = {num_classes}"
            )));
        }
        support[g] += 1;
        predicted[p] += 1;
        if p == g {
            tp[g] += 1;
        }
    }
    let per_class: Vec<ClassScore> = (0..num_classes)
        .map(|c| {
            let precision = if predicted[c] > 0 {
                tp[c] as f64 / predicted[c] as f64
            } else {
                0.0
            };
            let recall = if support[c] > 0 {
                tp[c] as f64 / support[c] as f64
            } else {
                0.0
            };
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            ClassScore {
                precision,
                recall,
                f1,
                support: support[c],
                predicted: predicted[c],
            }
        })
        .collect();
    let universe: Vec<&ClassScore> = per_class
        .iter()
        .filter(|c| c.support > 0 || c.predicted > 0)
        .collect();
    let macro_f1 = if universe.is_empty() {
        0.0
    } else {
        universe.iter().map(|c| c.f1).sum::<f64>() / universe.len() as f64
    };
    let weighted_f1 = if golds.is_empty() {
        0.0
    } else {
        per_class
            .iter()
            .map(|c| c.f1 * c.support as f64)
            .sum::<f64>()
            / golds.len() as f64
    };
    Ok(FScores {
        weighted_f1,
        macro_f1,
        per_class,
    })
}

/// Splits `items` into `parts` contiguous runs whose sizes differ by at most
/// one, larger runs first.
pub fn partition<T: Clone>(items: &[T], parts: usize) -> Vec<Vec<T>> {
    let (base, extra) = (items.len() / parts, items.len() % parts);
    let mut out = Vec::with_capacity(parts);
    let mut start = 0;
    for i in 0..parts {
        let len = base + usize::from(i < extra);
        out.push(items[start..start + len].to_vec());
        start += len;
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

/// Shuffles table ids with the `split` sub-stream and cuts `k` test folds.
/// The remaining tables keep their shuffled order; the first
/// `max(1, ⌊0.8·n⌋)` train and the rest validate.
pub fn kfold_split(table_ids: &[String], k: usize, seed: u64) -> Result<Vec<Fold>> {
    if k == 0 || table_ids.len() < k {
        return Err(Error::invalid(format!(
            "cannot cut {k} folds from {} tables",
            table_ids.len()
        )));
    }
    let unique: BTreeSet<&String> = table_ids.iter().collect();
    if unique.len() != table_ids.len() {
        return Err(Error::invalid("table ids must be unique"));
    }
    let mut order = table_ids.to_vec();
    order.shuffle(&mut substream(seed, "split"));
    let parts = partition(&order, k);
    Ok((0..k)
        .map(|i| {
            let rest: Vec<String> = parts
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .flat_map(|(_, p)| p.clone())
                .collect();
            let n_train = ((rest.len() as f64 * 0.8).floor() as usize)
                .max(1)
                .min(rest.len());
            Fold {
                train: rest[..n_train].to_vec(),
                val: rest[n_train..].to_vec(),
                test: parts[i].clone(),
            }
        })
        .collect())
}

/// Shuffled 80/20 split of table ids under the same floor rule as
/// [`kfold_split`]. Returns `(train, val)`.
pub fn train_val_split(table_ids: &[String], seed: u64) -> Result<(Vec<String>, Vec<String>)> {
    if table_ids.is_empty() {
        return Err(Error::invalid("no tables to split"));
    }
    let mut order = table_ids.to_vec();
    order.shuffle(&mut substream(seed, "split"));
    let n_train = ((order.len() as f64 * 0.8).floor() as usize).max(1);
    let val = order.split_off(n_train);
    Ok((order, val))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FrequencyBin {
    High,
    Medium,
    Low,
}

impl FrequencyBin {
    pub const ALL: [FrequencyBin; 3] =
        [FrequencyBin::High, FrequencyBin::Medium, FrequencyBin::Low];
}

/// Gold column count per class.
pub fn class_counts(tables: &[Table], vocab: &LabelVocab) -> Result<Vec<usize>> {
    let mut counts = vec![0; vocab.len()];
    for t in tables {
        for c in &t.columns {
            if let Some(l) = &c.label {
                counts[vocab.index_of(l)?] += 1;
            }
        }
    }
    Ok(counts)
}

/// Sorts classes by descending count (ties by index) and cuts three
/// contiguous groups of equal class count, remainders to earlier bins.
pub fn frequency_bins(counts: &[usize]) -> Vec<FrequencyBin> {
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    let mut bins = vec![FrequencyBin::Low; counts.len()];
    for (bin, group) in FrequencyBin::ALL.iter().zip(partition(&order, 3)) {
        for c in group {
            bins[c] = *bin;
        }
    }
    bins
}

/// One scored test column.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnOutcome {
    pub table_id: String,
    pub column_index: usize,
    pub table_columns: usize,
    pub predicted: usize,
    pub gold: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupScore {
    pub columns: usize,
    pub macro_f1: f64,
    pub weighted_f1: f64,
}

/// Scores columns separately for each observed table width.
pub fn breakdown_by_column_count(
    outcomes: &[ColumnOutcome],
    num_classes: usize,
) -> Result<BTreeMap<usize, GroupScore>> {
    let mut groups: BTreeMap<usize, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
    for o in outcomes {
        let g = groups.entry(o.table_columns).or_default();
        g.0.push(o.predicted);
        g.1.push(o.gold);
    }
    groups
        .into_iter()
        .map(|(n, (p, g))| {
            let s = f_scores(&p, &g, num_classes)?;
            Ok((
                n,
                GroupScore {
                    columns: g.len(),
                    macro_f1: s.macro_f1,
                    weighted_f1: s.weighted_f1,
                },
            ))
        })
        .collect()
}

/// Macro F1 restricted to each frequency bin.
pub fn bin_scores(scores: &FScores, bins: &[FrequencyBin]) -> BTreeMap<FrequencyBin, Option<f64>> {
    FrequencyBin::ALL
        .iter()
        .map(|&b| {
            let members: Vec<usize> = (0..bins.len()).filter(|&c| bins[c] == b).collect();
            (b, scores.macro_over(&members))
        })
        .collect()
}

/// Class pair whose values share one pool and are told apart only by the
/// partner column in the same table.
pub const AMBIGUOUS_PAIR: [&str; 2] = ["capital", "city"];

const PLACES: &[&str] = &[
    "Paris",
    "Ottawa",
    "London",
    "Berlin",
    "Madrid",
    "Rome",
    "Vienna",
    "Prague",
    "Warsaw",
    "Lisbon",
    "Dublin",
    "Oslo",
    "Helsinki",
    "Athens",
    "Cairo",
    "Nairobi",
    "Lima",
    "Quito",
    "Bogota",
    "Santiago",
    "Toronto",
    "Lyon",
    "Manchester",
    "Hamburg",
    "Seville",
    "Milan",
    "Salzburg",
    "Brno",
    "Krakow",
    "Porto",
    "Cork",
    "Bergen",
    "Tampere",
    "Patras",
    "Alexandria",
    "Mombasa",
    "Cusco",
    "Guayaquil",
    "Medellin",
    "Valparaiso",
];

const COUNTRIES: &[&str] = &[
    "France",
    "Canada",
    "United Kingdom",
    "Germany",
    "Spain",
    "Italy",
    "Austria",
    "Czechia",
    "Poland",
    "Portugal",
    "Ireland",
    "Norway",
    "Finland",
    "Greece",
    "Egypt",
    "Kenya",
    "Peru",
    "Ecuador",
    "Colombia",
    "Chile",
    "Japan",
    "Brazil",
    "Mexico",
    "India",
    "Australia",
];

const NAMES: &[&str] = &[
    "ana", "li", "omar", "sofia", "ivan", "mei", "raj", "lena", "tom", "zoe",
];
const DOMAINS: &[&str] = &["example.org", "mail.net", "corp.io", "uni.edu"];

const FILLERS: [&str; 4] = ["year", "email", "date", "price"];

fn filler_value(kind: &str, rng: &mut impl Rng) -> String {
    match kind {
        "year" => rng.gen_range(1900..2025).to_string(),
        "email" => format!(
            "{}{}@{}",
            NAMES.choose(rng).unwrap(),
            rng.gen_range(1..99),
            DOMAINS.choose(rng).unwrap()
        ),
        "date" => format!(
            "{}-{:02}-{:02}",
            rng.gen_range(1950..2025),
            rng.gen_range(1..13),
            rng.gen_range(1..29)
        ),
        _ => format!("${}.{:02}", rng.gen_range(1..500), rng.gen_range(0..100)),
    }
}

/// Shape of a generated planted-dependency dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthOptions {
    pub num_tables: usize,
    pub seed: u64,
    /// Number of distinct filler classes (1..=4).
    pub filler_classes: usize,
    /// Inclusive range of filler columns per table.
    pub fillers_per_table: (usize, usize),
    /// Probability that a table carries a partner/ambiguous pair.
    pub pair_rate: f64,
    /// Inclusive range of cells per column.
    pub cells: (usize, usize),
}

impl SynthOptions {
    /// Every table holds one pair; one filler class.
    pub fn balanced(num_tables: usize, seed: u64) -> Self {
        Self {
            num_tables,
            seed,
            filler_classes: 1,
            fillers_per_table: (0, 2),
            pair_rate: 1.0,
            cells: (8, 15),
        }
    }

    /// Frequent filler classes, rare ambiguous pair.
    pub fn imbalanced(num_tables: usize, seed: u64) -> Self {
        Self {
            num_tables,
            seed,
            filler_classes: 4,
            fillers_per_table: (2, 4),
            pair_rate: 0.5,
            cells: (8, 15),
        }
    }
}

/// Generates tables where a `capital` or `city` column draws from one shared
/// place pool; `capital` sits beside a `country` column and `city` beside a
/// `population` column. Filler columns use distinctive pools. Column order is
/// shuffled per table.
pub fn synthesize(opts: &SynthOptions) -> Result<(Vec<Table>, LabelVocab)> {
    if opts.num_tables < 20 {
        return Err(Error::invalid(
            "the synthetic dataset needs at least 20 tables",
        ));
    }
    let fillers_ok = (1..=FILLERS.len()).contains(&opts.filler_classes)
        && opts.fillers_per_table.0 <= opts.fillers_per_table.1;
    if !fillers_ok
        || opts.cells.0 == 0
        || opts.cells.0 > opts.cells.1
        || !(0.0..=1.0).contains(&opts.pair_rate)
    {
        return Err(Error::invalid(format!(
            "invalid synthesis options: {opts:?}"
        )));
    }
    let fillers = &FILLERS[..opts.filler_classes];
    let mut names: Vec<String> = ["capital", "city", "country", "population"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    names.extend(fillers.iter().map(|s| s.to_string()));
    names.sort();
    let vocab = LabelVocab::new(names)?;

    let mut rng = substream(opts.seed, "synth");
    let mut tables = Vec::with_capacity(opts.num_tables);
    for i in 0..opts.num_tables {
        let mut cols: Vec<Column> = Vec::new();
        let column = |label: &str,
                      rng: &mut rand_chacha::ChaCha8Rng,
                      draw: &dyn Fn(&mut rand_chacha::ChaCha8Rng) -> String| {
            let n = rng.gen_range(opts.cells.0..=opts.cells.1);
            Column {
                values: (0..n).map(|_| draw(rng)).collect(),
                label: Some(label.to_string()),
            }
        };
        let with_pair = rng.gen_bool(opts.pair_rate);
        let capital_side = i % 2 == 0;
        let partner_only = !with_pair && rng.gen_bool(0.5);
        if with_pair || partner_only {
            if capital_side {
                cols.push(column("country", &mut rng, &|r| {
                    COUNTRIES.choose(r).unwrap().to_string()
                }));
            } else {
                cols.push(column("population", &mut rng, &|r| {
                    r.gen_range(10_000..10_000_000u64).to_string()
                }));
            }
        }
        if with_pair {
            let label = if capital_side {
                AMBIGUOUS_PAIR[0]
            } else {
                AMBIGUOUS_PAIR[1]
            };
            cols.push(column(label, &mut rng, &|r| {
                PLACES.choose(r).unwrap().to_string()
            }));
        }
        let lo = opts.fillers_per_table.0.max(usize::from(cols.is_empty()));
        let n_fill = rng.gen_range(lo..=opts.fillers_per_table.1.max(lo));
        for _ in 0..n_fill {
            let kind = *fillers.choose(&mut rng).unwrap();
            cols.push(column(kind, &mut rng, &|r| filler_value(kind, r)));
        }
        cols.shuffle(&mut rng);
        tables.push(Table {
            table_id: format!("synth-{i:04}"),
            columns: cols,
        });
    }
    Ok((tables, vocab))
}

/// The balanced planted-dependency dataset.
pub fn synthesize_dependency_dataset(
    num_tables: usize,
    seed: u64,
) -> Result<(Vec<Table>, LabelVocab)> {
    synthesize(&SynthOptions::balanced(num_tables, seed))
}

/// A named stacked configuration evaluated by [`run_experiment`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub gnn: GnnConfig,
    pub train: TrainConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub folds: usize,
    pub seed: u64,
    pub base: BaselineConfig,
    pub stacking: StackingMode,
    pub configs: Vec<ExperimentConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldScore {
    pub fold: usize,
    pub weighted_f1: f64,
    pub macro_f1: f64,
    pub per_class_f1: Vec<Option<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Population standard deviation over folds.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self {
                mean: 0.0,
                std: 0.0,
            };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self {
            mean,
            std: var.sqrt(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: String,
    pub folds: Vec<FoldScore>,
    pub weighted_f1: MeanStd,
    pub macro_f1: MeanStd,
    /// Mean over the folds where the class is scored.
    pub per_class_f1: BTreeMap<String, f64>,
    /// Pooled over all test folds.
    pub bins: BTreeMap<FrequencyBin, Option<f64>>,
    pub by_column_count: BTreeMap<usize, GroupScore>,
}

impl EvalReport {
    fn assemble(
        config: &str,
        folds: Vec<FoldScore>,
        pooled: &[ColumnOutcome],
        vocab: &LabelVocab,
        bins: &[FrequencyBin],
    ) -> Result<Self> {
        let k = vocab.len();
        let weighted: Vec<f64> = folds.iter().map(|f| f.weighted_f1).collect();
        let macros: Vec<f64> = folds.iter().map(|f| f.macro_f1).collect();
        let per_class_f1 = (0..k)
            .filter_map(|c| {
                let v: Vec<f64> = folds.iter().filter_map(|f| f.per_class_f1[c]).collect();
                (!v.is_empty()).then(|| (vocab.name(c).to_string(), MeanStd::of(&v).mean))
            })
            .collect();
        let preds: Vec<usize> = pooled.iter().map(|o| o.predicted).collect();
        let golds: Vec<usize> = pooled.iter().map(|o| o.gold).collect();
        let all = f_scores(&preds, &golds, k)?;
        Ok(Self {
            config: config.to_string(),
            weighted_f1: MeanStd::of(&weighted),
            macro_f1: MeanStd::of(&macros),
            folds,
            per_class_f1,
            bins: bin_scores(&all, bins),
            by_column_count: breakdown_by_column_count(pooled, k)?,
        })
    }

    /// Mean fold macro F1 over the given class names.
    pub fn macro_over(&self, classes: &[&str]) -> Option<f64> {
        let v: Vec<f64> = classes
            .iter()
            .filter_map(|c| self.per_class_f1.get(*c).copied())
            .collect();
        (v.len() == classes.len()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub folds: usize,
    pub seed: u64,
    pub vocab: LabelVocab,
    /// The base predictor alone, then one row per stacked configuration.
    pub rows: Vec<EvalReport>,
}

impl ExperimentReport {
    pub fn row(&self, config: &str) -> Option<&EvalReport> {
        self.rows.iter().find(|r| r.config == config)
    }

    pub fn write_csv<W: Write>(&self, mut writer: W) -> Result<()> {
        writeln!(writer, "config,fold,weighted_f1,macro_f1")?;
        for r in &self.rows {
            for f in &r.folds {
                writeln!(
                    writer,
                    "{},{},{},{}",
                    r.config, f.fold, f.weighted_f1, f.macro_f1
                )?;
            }
            writeln!(
                writer,
                "{},mean,{},{}",
                r.config, r.weighted_f1.mean, r.macro_f1.mean
            )?;
            writeln!(
                writer,
                "{},std,{},{}",
                r.config, r.weighted_f1.std, r.macro_f1.std
            )?;
        }
        Ok(())
    }
}

pub const BASE_ROW: &str = "base";

fn score_fold(fold: usize, outcomes: &[ColumnOutcome], k: usize) -> Result<FoldScore> {
    let preds: Vec<usize> = outcomes.iter().map(|o| o.predicted).collect();
    let golds: Vec<usize> = outcomes.iter().map(|o| o.gold).collect();
    let s = f_scores(&preds, &golds, k)?;
    Ok(FoldScore {
        fold,
        weighted_f1: s.weighted_f1,
        macro_f1: s.macro_f1,
        per_class_f1: (0..k)
            .map(|c| s.in_universe(c).then_some(s.per_class[c].f1))
            .collect(),
    })
}

/// Cross-validated comparison of the base predictor against each stacked
/// configuration. Per fold: fit the base predictor on the training tables,
/// score all tables, train every configuration, and evaluate on the test
/// tables.
pub fn run_experiment(
    tables: &[Table],
    vocab: &LabelVocab,
    spec: &ExperimentSpec,
) -> Result<ExperimentReport> {
    if let Some(t) = tables.iter().find(|t| !t.is_fully_labeled()) {
        return Err(Error::invalid(format!(
            "table {} has unlabeled columns",
            t.table_id
        )));
    }
    let ids: Vec<String> = tables.iter().map(|t| t.table_id.clone()).collect();
    let folds = kfold_split(&ids, spec.folds, spec.seed)?;
    let by_id: BTreeMap<&str, &Table> = tables.iter().map(|t| (t.table_id.as_str(), t)).collect();
    let pick =
        |ids: &[String]| -> Vec<Table> { ids.iter().map(|i| by_id[i.as_str()].clone()).collect() };
    let bins = frequency_bins(&class_counts(tables, vocab)?);
    let k = vocab.len();

    let n_rows = spec.configs.len() + 1;
    let mut fold_scores: Vec<Vec<FoldScore>> = vec![Vec::new(); n_rows];
    let mut pooled: Vec<Vec<ColumnOutcome>> = vec![Vec::new(); n_rows];

    for (fi, fold) in folds.iter().enumerate() {
        let seen: BTreeSet<&String> = fold.train.iter().chain(&fold.val).collect();
        if fold.test.iter().any(|t| seen.contains(t)) {
            return Err(Error::Training(format!(
                "fold {fi}: test tables leak into training"
            )));
        }
        let (train, val, test) = (pick(&fold.train), pick(&fold.val), pick(&fold.test));
        let base_cfg = BaselineConfig {
            seed: spec.seed,
            ..spec.base.clone()
        };
        let others: Vec<Table> = val.iter().chain(&test).cloned().collect();
        let (base, logits) = base_logits(&train, &others, vocab, &base_cfg, spec.stacking)?;

        let mut base_out = Vec::new();
        for t in &test {
            for (ci, col) in t.columns.iter().enumerate() {
                base_out.push(ColumnOutcome {
                    table_id: t.table_id.clone(),
                    column_index: ci,
                    table_columns: t.num_columns(),
                    predicted: argmax(&base.column_logits(t, ci)?),
                    gold: vocab.index_of(col.label.as_deref().expect("labeled"))?,
                });
            }
        }
        fold_scores[0].push(score_fold(fi, &base_out, k)?);
        pooled[0].extend(base_out);

        let test_graphs = join_graphs(&test, &logits, vocab)?;
        let test_batch = batch_graphs(&test_graphs)?;
        let test_gold = test_batch.require_gold()?;
        for (ri, cfg) in spec.configs.iter().enumerate() {
            let train_cfg = TrainConfig {
                seed: spec.seed,
                ..cfg.train.clone()
            };
            let outcome = fit(&train, &val, &logits, vocab, &cfg.gnn, &train_cfg)?;
            let out = model_forward(&test_batch, &outcome.params, &outcome.config)?;
            let outcomes: Vec<ColumnOutcome> = (0..out.rows())
                .map(|u| {
                    let (m, col) = test_batch.locate(u);
                    let member = &test_batch.members()[m];
                    ColumnOutcome {
                        table_id: member.table_id.clone(),
                        column_index: col,
                        table_columns: member.num_nodes,
                        predicted: argmax(out.row(u)),
                        gold: test_gold[u],
                    }
                })
                .collect();
            let score = score_fold(fi, &outcomes, k)?;
            log::info!(
                "fold {fi} {}: macro {:.4} weighted {:.4} (best epoch {})",
                cfg.name,
                score.macro_f1,
                score.weighted_f1,
                outcome.best_epoch
            );
            fold_scores[ri + 1].push(score);
            pooled[ri + 1].extend(outcomes);
        }
    }

    let names: Vec<&str> = std::iter::once(BASE_ROW)
        .chain(spec.configs.iter().map(|c| c.name.as_str()))
        .collect();
    let rows = names
        .iter()
        .zip(fold_scores)
        .zip(&pooled)
        .map(|((name, fs), p)| EvalReport::assemble(name, fs, p, vocab, &bins))
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentReport {
        folds: spec.folds,
        seed: spec.seed,
        vocab: vocab.clone(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop_assert, prop_assert_eq, prop_assume, proptest};

    /// Confusion-matrix oracle written independently of `f_scores`.
    #[allow(clippy::needless_range_loop)]
    fn oracle(p: &[usize], g: &[usize], k: usize) -> (f64, f64) {
        let mut m = vec![vec![0usize; k]; k];
        for (&a, &b) in p.iter().zip(g) {
            m[b][a] += 1;
        }
        let mut f1s = Vec::new();
        let mut weighted = 0.0;
        for c in 0..k {
            let tp = m[c][c] as f64;
            let row: usize = m[c].iter().sum();
            let col: usize = (0..k).map(|r| m[r][c]).sum();
            if row == 0 && col == 0 {
                continue;
            }
            let prec = if col == 0 { 0.0 } else { tp / col as f64 };
            let rec = if row == 0 { 0.0 } else { tp / row as f64 };
            let f = if prec + rec == 0.0 {
                0.0
            } else {
                2.0 * prec * rec / (prec + rec)
            };
            f1s.push(f);
            weighted += f * row as f64;
        }
        (
            weighted / g.len() as f64,
            f1s.iter().sum::<f64>() / f1s.len() as f64,
        )
    }

    #[test]
    fn f_score_examples() {
        let s = f_scores(&[0, 0, 1, 1], &[0, 0, 1, 1], 2).unwrap();
        assert_eq!((s.weighted_f1, s.macro_f1), (1.0, 1.0));
        let s = f_scores(&[0, 1, 1, 1], &[0, 0, 1, 1], 2).unwrap();
        assert!((s.per_class[0].f1 - 2.0 / 3.0).abs() < 1e-15);
        assert!((s.per_class[1].f1 - 0.8).abs() < 1e-15);
        assert!((s.macro_f1 - 0.733_333_333_333_333_3).abs() < 1e-12);
        assert!((s.weighted_f1 - 0.733_333_333_333_333_3).abs() < 1e-12);
        let s = f_scores(&[0, 0, 0, 0], &[0, 0, 1, 1], 2).unwrap();
        assert!((s.macro_f1 - 1.0 / 3.0).abs() < 1e-15);
        assert!(f_scores(&[0], &[0, 1], 2).is_err());
        let s = f_scores(&[0, 0], &[0, 0], 5).unwrap();
        assert_eq!(s.macro_f1, 1.0);
    }

    #[test]
    fn f_scores_match_confusion_oracle() {
        let mut rng = substream(7, "metrics");
        for _ in 0..1000 {
            let k = rng.gen_range(1..=6);
            let n = rng.gen_range(1..=40);
            let g: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
            let p: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
            let s = f_scores(&p, &g, k).unwrap();
            assert_eq!((s.weighted_f1, s.macro_f1), oracle(&p, &g, k));
        }
    }

    #[test]
    fn kfold_examples() {
        let ids: Vec<String> = (0..10).map(|i| format!("t{i}")).collect();
        let folds = kfold_split(&ids, 5, 3).unwrap();
        let mut all: Vec<String> = folds.iter().flat_map(|f| f.test.clone()).collect();
        assert!(folds.iter().all(|f| f.test.len() == 2));
        all.sort();
        let mut want = ids.clone();
        want.sort();
        assert_eq!(all, want);
        for f in &folds {
            assert_eq!((f.train.len(), f.val.len()), (6, 2));
            let s: BTreeSet<&String> = f.train.iter().chain(&f.val).chain(&f.test).collect();
            assert_eq!(s.len(), 10);
        }
        assert_eq!(folds, kfold_split(&ids, 5, 3).unwrap());
        assert_ne!(folds, kfold_split(&ids, 5, 4).unwrap());
        assert!(kfold_split(&ids[..3], 5, 0).is_err());
        let dup = vec!["a".to_string(), "a".to_string()];
        assert!(kfold_split(&dup, 2, 0).is_err());

        let (train, val) = train_val_split(&ids[..8], 1).unwrap();
        assert_eq!((train.len(), val.len()), (6, 2));
        let (train, val) = train_val_split(&ids[..1], 1).unwrap();
        assert_eq!((train.len(), val.len()), (1, 0));
    }

    proptest! {
        #[test]
        fn kfold_partitions(n in 2usize..60, k in 2usize..8, seed in any::<u64>()) {
            prop_assume!(n >= k);
            let ids: Vec<String> = (0..n).map(|i| format!("t{i}")).collect();
            let folds = kfold_split(&ids, k, seed).unwrap();
            let sizes: Vec<usize> = folds.iter().map(|f| f.test.len()).collect();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            let all: BTreeSet<&String> = folds.iter().flat_map(|f| &f.test).collect();
            prop_assert_eq!(all.len(), n);
        }

        #[test]
        fn bins_are_balanced(counts in proptest::collection::vec(0usize..50, 1..40)) {
            let bins = frequency_bins(&counts);
            let sizes: Vec<usize> = FrequencyBin::ALL.iter().map(|b| bins.iter().filter(|x| *x == b).count()).collect();
            prop_assert_eq!(sizes.iter().sum::<usize>(), counts.len());
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            prop_assert!(sizes.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn bin_examples() {
        use FrequencyBin::*;
        assert_eq!(
            frequency_bins(&[10, 8, 6, 4, 2, 1]),
            vec![High, High, Medium, Medium, Low, Low]
        );
        let sizes = |bins: &[FrequencyBin]| {
            FrequencyBin::ALL.map(|b| bins.iter().filter(|x| **x == b).count())
        };
        assert_eq!(sizes(&frequency_bins(&vec![3; 275])), [92, 92, 91]);
        assert_eq!(frequency_bins(&[1, 5, 1]), vec![Medium, High, Low]);
    }

    fn outcome(t: &str, width: usize, p: usize, g: usize) -> ColumnOutcome {
        ColumnOutcome {
            table_id: t.into(),
            column_index: 0,
            table_columns: width,
            predicted: p,
            gold: g,
        }
    }

    #[test]
    fn breakdown_groups_by_width() {
        let only_two = vec![
            outcome("a", 2, 0, 0),
            outcome("a", 2, 1, 0),
            outcome("b", 2, 1, 1),
            outcome("b", 2, 1, 1),
        ];
        let b = breakdown_by_column_count(&only_two, 2).unwrap();
        let global = f_scores(&[0, 1, 1, 1], &[0, 0, 1, 1], 2).unwrap();
        assert_eq!(b.len(), 1);
        assert_eq!(
            (b[&2].macro_f1, b[&2].weighted_f1),
            (global.macro_f1, global.weighted_f1)
        );

        let fixture = vec![
            outcome("a", 2, 0, 0),
            outcome("a", 2, 1, 1),
            outcome("b", 3, 2, 2),
            outcome("b", 3, 3, 2),
            outcome("b", 3, 3, 3),
            outcome("c", 2, 0, 1),
            outcome("c", 2, 1, 1),
            outcome("d", 3, 2, 3),
        ];
        let b = breakdown_by_column_count(&fixture, 4).unwrap();
        let two = f_scores(&[0, 1, 0, 1], &[0, 1, 1, 1], 4).unwrap();
        let three = f_scores(&[2, 3, 3, 2], &[2, 2, 3, 3], 4).unwrap();
        assert_eq!(b[&2].macro_f1, two.macro_f1);
        assert_eq!(b[&3].weighted_f1, three.weighted_f1);
        let mut perturbed = fixture.clone();
        perturbed[2].predicted = 3;
        assert_eq!(breakdown_by_column_count(&perturbed, 4).unwrap()[&2], b[&2]);
    }

    #[test]
    fn mean_std_is_population() {
        let m = MeanStd::of(&[1.0, 3.0]);
        assert_eq!((m.mean, m.std), (2.0, 1.0));
    }

    #[test]
    fn synthetic_dataset_properties() {
        let (tables, vocab) = synthesize_dependency_dataset(40, 5).unwrap();
        assert_eq!(tables.len(), 40);
        assert_eq!(
            (tables.clone(), vocab.clone()),
            synthesize_dependency_dataset(40, 5).unwrap()
        );
        assert!(synthesize_dependency_dataset(19, 5).is_err());
        for t in &tables {
            let labels: Vec<&str> = t
                .columns
                .iter()
                .map(|c| c.label.as_deref().unwrap())
                .collect();
            let amb: Vec<&Column> = t
                .columns
                .iter()
                .filter(|c| AMBIGUOUS_PAIR.contains(&c.label.as_deref().unwrap()))
                .collect();
            assert_eq!(amb.len(), 1);
            for v in &amb[0].values {
                assert!(PLACES.contains(&v.as_str()));
            }
            // the partner column determines the ambiguous class
            assert_eq!(labels.contains(&"capital"), labels.contains(&"country"));
            assert_eq!(labels.contains(&"city"), labels.contains(&"population"));
        }
        let (imb, v2) = synthesize(&SynthOptions::imbalanced(60, 1)).unwrap();
        let counts = class_counts(&imb, &v2).unwrap();
        let cap = counts[v2.index_of("capital").unwrap()];
        let year = counts[v2.index_of("year").unwrap()];
        assert!(cap > 0 && year > cap);
    }
}
