//! Loss, the epoch loop and grid search for the stacked meta-learner.

use std::io::Write;
use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::f_scores;
use crate::gnn::{
    forward_on_tape, init_params, model_forward, GnnConfig, GnnFamily, GnnParams, ParamVars,
};
use crate::graph::{batch_graphs, build_graph, ColumnGraph, GraphBatch, LabelVocab, Table};
use crate::numerics::{adam_step, argmax, log_sum_exp, AdamState, Tape, Tensor};
use crate::predictor::{
    baseline_fit_tables, collect_logits, BaselineConfig, LinearBaseline, LogitsMap,
};
use crate::rng::substream;

pub const DEFAULT_LEARNING_RATE: f64 = 1e-3;
pub const DEFAULT_WEIGHT_DECAY: f64 = 5e-4;
pub const DEFAULT_BATCH_SIZE: usize = 8;
pub const GRID_HEADS: [usize; 5] = [1, 2, 4, 8, 12];
pub const GRID_STEPS: [usize; 4] = [1, 2, 3, 4];

/// Epoch count of the published protocol for each family.
pub fn default_epochs(family: GnnFamily) -> usize {
    match family {
        GnnFamily::Gcn => 100,
        GnnFamily::Ggnn => 200,
        GnnFamily::Gat => 100,
    }
}

/// Where the training-split logits come from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum StackingMode {
    /// The base predictor scores the same tables it was fitted on.
    #[default]
    InSample,
    /// Training logits come from base predictors fitted on the other
    /// `folds − 1` parts of the training tables.
    OutOfFold { folds: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    /// Tables per mini-batch.
    pub batch_size: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn preset(family: GnnFamily) -> Self {
        Self {
            learning_rate: DEFAULT_LEARNING_RATE,
            weight_decay: DEFAULT_WEIGHT_DECAY,
            epochs: default_epochs(family),
            batch_size: DEFAULT_BATCH_SIZE,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let rates_ok = self.learning_rate.is_finite()
            && self.learning_rate >= 0.0
            && self.weight_decay.is_finite()
            && self.weight_decay >= 0.0;
        if !rates_ok || self.batch_size == 0 {
            return Err(Error::invalid(format!(
                "invalid training configuration: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Candidate head counts and step counts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub heads: Vec<usize>,
    pub steps: Vec<usize>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            heads: GRID_HEADS.to_vec(),
            steps: GRID_STEPS.to_vec(),
        }
    }
}

impl GridSpec {
    /// `(steps, heads)` cells in evaluation order. Only attention models vary
    /// the head count.
    pub fn cells(&self, family: GnnFamily) -> Result<Vec<(usize, usize)>> {
        if self.steps.is_empty() || (family == GnnFamily::Gat && self.heads.is_empty()) {
            return Err(Error::invalid("grid must contain at least one cell"));
        }
        let mut steps = self.steps.clone();
        steps.sort_unstable();
        steps.dedup();
        let mut heads = if family == GnnFamily::Gat {
            self.heads.clone()
        } else {
            vec![1]
        };
        heads.sort_unstable();
        heads.dedup();
        if steps.contains(&0) || heads.contains(&0) {
            return Err(Error::invalid("grid values must be positive"));
        }
        Ok(steps
            .iter()
            .flat_map(|&s| heads.iter().map(move |&h| (s, h)))
            .collect())
    }
}

/// Σ_u −log softmax(h_u)[gold_u], via log-sum-exp.
pub fn nll_loss(final_states: &Tensor, gold: &[usize]) -> Result<f64> {
    let (n, k) = final_states.dims2();
    if gold.len() != n {
        return Err(Error::invalid(format!(
            "{} gold labels for {n} nodes",
            gold.len()
        )));
    }
    let mut total = 0.0;
    for (u, &g) in gold.iter().enumerate() {
        if g >= k {
            return Err(Error::invalid(format!(
                "gold class {g} out of range for k = {k}"
            )));
        }
        let row = final_states.row(u);
        total += (log_sum_exp(row) - row[g]).max(0.0);
    }
    Ok(total)
}

/// Builds one graph per table from the base logits.
pub fn join_graphs(
    tables: &[Table],
    logits: &LogitsMap,
    vocab: &LabelVocab,
) -> Result<Vec<ColumnGraph>> {
    tables
        .iter()
        .map(|t| build_graph(t, &logits.for_table(t)?, vocab))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-column loss over the training set after the epoch's updates.
    pub train_loss: f64,
    pub val_macro_f1: f64,
}

pub fn write_history_csv<W: Write>(mut writer: W, history: &[EpochRecord]) -> Result<()> {
    writeln!(writer, "epoch,train_loss,val_macro_f1")?;
    for r in history {
        writeln!(writer, "{},{},{}", r.epoch, r.train_loss, r.val_macro_f1)?;
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct FitOutcome {
    pub config: GnnConfig,
    pub params: GnnParams,
    /// Epoch 0 describes the initial parameters.
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_macro_f1: f64,
}

struct Split {
    batch: GraphBatch,
    gold: Vec<usize>,
}

impl Split {
    fn new(graphs: &[ColumnGraph]) -> Result<Option<Self>> {
        if graphs.is_empty() {
            return Ok(None);
        }
        let batch = batch_graphs(graphs)?;
        let gold = batch.require_gold()?;
        Ok(Some(Self { batch, gold }))
    }

    fn score(&self, params: &GnnParams, config: &GnnConfig) -> Result<(f64, f64)> {
        let logits = model_forward(&self.batch, params, config)?;
        let loss = nll_loss(&logits, &self.gold)? / self.gold.len() as f64;
        let preds: Vec<usize> = (0..logits.rows()).map(|u| argmax(logits.row(u))).collect();
        Ok((
            loss,
            f_scores(&preds, &self.gold, config.num_classes)?.macro_f1,
        ))
    }
}

/// Mini-batch Adam over whole tables. Parameters start from `init` draws of
/// `train.seed`; the returned parameters are those of the epoch with the best
/// validation macro F1 (earliest on ties). With no validation graphs the
/// training macro F1 is used instead.
pub fn fit_graphs(
    train_graphs: &[ColumnGraph],
    val_graphs: &[ColumnGraph],
    gnn: &GnnConfig,
    train: &TrainConfig,
) -> Result<FitOutcome> {
    train.validate()?;
    if train_graphs.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    let config = GnnConfig {
        seed: train.seed,
        ..gnn.clone()
    };
    config.validate()?;
    if let Some(g) = train_graphs
        .iter()
        .chain(val_graphs)
        .find(|g| g.num_classes() != config.num_classes)
    {
        return Err(Error::invalid(format!(
            "graph {} has {} classes, model expects {}",
            g.table_id,
            g.num_classes(),
            config.num_classes
        )));
    }
    let full_train = Split::new(train_graphs)?.expect("nonempty");
    let val = Split::new(val_graphs)?;

    let mut params = init_params(&config, train.seed)?;
    let mut adam = AdamState::new(&params.to_vec());
    let mut rng = substream(train.seed, "shuffle");
    let mut order: Vec<usize> = (0..train_graphs.len()).collect();

    let evaluate = |params: &GnnParams| -> Result<(f64, f64)> {
        let (loss, train_f1) = full_train.score(params, &config)?;
        let sel = match &val {
            Some(v) => v.score(params, &config)?.1,
            None => train_f1,
        };
        Ok((loss, sel))
    };

    let (loss0, f10) = evaluate(&params)?;
    let mut history = vec![EpochRecord {
        epoch: 0,
        train_loss: loss0,
        val_macro_f1: f10,
    }];
    let mut best = (0, f10, params.clone());

    for epoch in 1..=train.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(train.batch_size) {
            let batch = batch_graphs(chunk.iter().map(|&i| &train_graphs[i]))?;
            let gold = Arc::new(batch.require_gold()?);
            let mut tape = Tape::new();
            let vars = ParamVars::register(&mut tape, &params);
            let out = forward_on_tape(&mut tape, &batch, &vars, &config)?;
            let loss = tape.nll_sum(out.logits, gold)?;
            let grads = tape.backward(loss)?;
            let g: Vec<Tensor> = vars.in_order().into_iter().map(|v| grads.wrt(v)).collect();
            let mut values = params.to_vec();
            adam_step(
                &mut values,
                &g,
                &mut adam,
                train.learning_rate,
                train.weight_decay,
            )?;
            if values
                .iter()
                .any(|t| t.data().iter().any(|x| !x.is_finite()))
            {
                return Err(Error::Training(format!(
                    "parameters diverged in epoch {epoch}"
                )));
            }
            params.set_all(values)?;
        }
        let (loss, f1) = evaluate(&params)?;
        history.push(EpochRecord {
            epoch,
            train_loss: loss,
            val_macro_f1: f1,
        });
        if f1 > best.1 {
            best = (epoch, f1, params.clone());
        }
    }
    let (best_epoch, best_val_macro_f1, params) = best;
    Ok(FitOutcome {
        config,
        params,
        history,
        best_epoch,
        best_val_macro_f1,
    })
}

/// Joins tables with their base logits and runs [`fit_graphs`].
pub fn fit(
    train_tables: &[Table],
    val_tables: &[Table],
    logits: &LogitsMap,
    vocab: &LabelVocab,
    gnn: &GnnConfig,
    train: &TrainConfig,
) -> Result<FitOutcome> {
    let tr = join_graphs(train_tables, logits, vocab)?;
    let va = join_graphs(val_tables, logits, vocab)?;
    fit_graphs(&tr, &va, gnn, train)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub steps: usize,
    pub heads: usize,
    pub val_macro_f1: f64,
}

pub fn write_grid_csv<W: Write>(mut writer: W, cells: &[GridCell]) -> Result<()> {
    writeln!(writer, "steps,heads,val_macro_f1")?;
    for c in cells {
        writeln!(writer, "{},{},{}", c.steps, c.heads, c.val_macro_f1)?;
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct GridOutcome {
    pub best: FitOutcome,
    pub cells: Vec<GridCell>,
}

/// Trains one model per grid cell and keeps the best validation macro F1.
/// Cells are visited by ascending steps then heads, and only a strictly
/// better score replaces the incumbent, so ties favor fewer steps, then
/// fewer heads.
pub fn grid_search(
    train_graphs: &[ColumnGraph],
    val_graphs: &[ColumnGraph],
    base: &GnnConfig,
    grid: &GridSpec,
    train: &TrainConfig,
) -> Result<GridOutcome> {
    let mut cells = Vec::new();
    let mut best: Option<FitOutcome> = None;
    for (steps, heads) in grid.cells(base.family)? {
        let cfg = GnnConfig {
            steps,
            heads,
            ..base.clone()
        };
        let outcome = fit_graphs(train_graphs, val_graphs, &cfg, train)?;
        log::debug!(
            "grid cell S={steps} K={heads}: {:.4}",
            outcome.best_val_macro_f1
        );
        cells.push(GridCell {
            steps,
            heads,
            val_macro_f1: outcome.best_val_macro_f1,
        });
        if best
            .as_ref()
            .is_none_or(|b| outcome.best_val_macro_f1 > b.best_val_macro_f1)
        {
            best = Some(outcome);
        }
    }
    Ok(GridOutcome {
        best: best.expect("grid has at least one cell"),
        cells,
    })
}

/// Fits the base predictor on `train_tables` and scores every table.
/// `others` are always scored by the full baseline; training tables are
/// scored according to `mode`.
pub fn base_logits(
    train_tables: &[Table],
    others: &[Table],
    vocab: &LabelVocab,
    base: &BaselineConfig,
    mode: StackingMode,
) -> Result<(LinearBaseline, LogitsMap)> {
    let model = baseline_fit_tables(train_tables, vocab, base)?;
    let mut logits = collect_logits(&model, others)?;
    match mode {
        StackingMode::InSample => logits.merge(collect_logits(&model, train_tables)?)?,
        StackingMode::OutOfFold { folds } => {
            if folds < 2 || folds > train_tables.len() {
                return Err(Error::invalid(format!(
                    "out-of-fold stacking needs 2..={} folds, got {folds}",
                    train_tables.len()
                )));
            }
            let mut idx: Vec<usize> = (0..train_tables.len()).collect();
            idx.shuffle(&mut substream(base.seed, "stacking"));
            for part in crate::evaluation::partition(&idx, folds) {
                let held: Vec<Table> = part.iter().map(|&i| train_tables[i].clone()).collect();
                let rest: Vec<Table> = idx
                    .iter()
                    .filter(|i| !part.contains(i))
                    .map(|&i| train_tables[i].clone())
                    .collect();
                let sub = baseline_fit_tables(&rest, vocab, base)?;
                logits.merge(collect_logits(&sub, &held)?)?;
            }
        }
    }
    Ok((model, logits))
}
