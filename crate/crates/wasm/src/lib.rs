//! Browser demo: train a stacked model on synthetic tables, then inspect
//! per-column predictions and attention weights.
//!
//! [`Demo`] holds the logic and is usable natively; [`DemoSession`] is the
//! thin JavaScript binding that exchanges JSON strings.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use coltype_core::evaluation::{
    f_scores, kfold_split, synthesize_dependency_dataset, AMBIGUOUS_PAIR,
};
use coltype_core::gnn::{attention_maps, model_forward, GnnConfig, GnnFamily, GnnParams};
use coltype_core::graph::{
    batch_graphs, build_graph, Column, ColumnGraph, GraphBatch, LabelVocab, Table,
};
use coltype_core::numerics::{argmax, softmax};
use coltype_core::predictor::{BaselineConfig, ColumnPredictor, LinearBaseline, LogitsMap};
use coltype_core::training::{
    base_logits, fit, join_graphs, EpochRecord, StackingMode, TrainConfig,
};
use coltype_core::{Error, Result};

const PREVIEW_CELLS: usize = 6;

#[derive(Clone, Debug, Serialize)]
pub struct TrainSummary {
    pub family: String,
    pub steps: usize,
    pub heads: usize,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub base_macro_f1: f64,
    pub stacked_macro_f1: f64,
    pub base_pair_f1: f64,
    pub stacked_pair_f1: f64,
    pub classes: Vec<String>,
    pub base_class_f1: Vec<f64>,
    pub stacked_class_f1: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ColumnView {
    pub preview: Vec<String>,
    pub gold: Option<String>,
    pub base_label: String,
    pub base_probabilities: Vec<f64>,
    pub stacked_label: Option<String>,
    pub stacked_probabilities: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Serialize)]
pub struct TableView {
    pub table_id: String,
    pub classes: Vec<String>,
    pub columns: Vec<ColumnView>,
    /// `attention[step][head][u][v]`, present for attention models.
    pub attention: Option<Vec<Vec<Vec<Vec<f64>>>>>,
}

struct Trained {
    config: GnnConfig,
    params: GnnParams,
}

/// One synthetic dataset split into train, validation and test tables with
/// a fitted baseline.
pub struct Demo {
    vocab: LabelVocab,
    train: Vec<Table>,
    val: Vec<Table>,
    test: Vec<Table>,
    base: LinearBaseline,
    logits: LogitsMap,
    model: Option<Trained>,
}

impl Demo {
    pub fn new(num_tables: usize, seed: u64) -> Result<Self> {
        let (tables, vocab) = synthesize_dependency_dataset(num_tables, seed)?;
        let ids: Vec<String> = tables.iter().map(|t| t.table_id.clone()).collect();
        let fold = kfold_split(&ids, 5, seed)?.swap_remove(0);
        let pick = |ids: &[String]| -> Vec<Table> {
            ids.iter()
                .map(|id| {
                    tables
                        .iter()
                        .find(|t| &t.table_id == id)
                        .expect("split id")
                        .clone()
                })
                .collect()
        };
        let (train, val, test) = (pick(&fold.train), pick(&fold.val), pick(&fold.test));
        let others: Vec<Table> = val.iter().chain(&test).cloned().collect();
        let base_cfg = BaselineConfig {
            seed,
            ..BaselineConfig::default()
        };
        let (base, logits) =
            base_logits(&train, &others, &vocab, &base_cfg, StackingMode::InSample)?;
        Ok(Self {
            vocab,
            train,
            val,
            test,
            base,
            logits,
            model: None,
        })
    }

    pub fn classes(&self) -> &[String] {
        self.vocab.names()
    }

    pub fn test_tables(&self) -> usize {
        self.test.len()
    }

    pub fn train(
        &mut self,
        family: &str,
        steps: usize,
        heads: usize,
        epochs: usize,
        seed: u64,
    ) -> Result<TrainSummary> {
        let family: GnnFamily = family.parse()?;
        let k = self.vocab.len();
        let gnn = GnnConfig {
            steps,
            heads: if family == GnnFamily::Gat { heads } else { 1 },
            ..GnnConfig::preset(family, k)
        };
        let train = TrainConfig {
            epochs,
            seed,
            ..TrainConfig::preset(family)
        };
        let outcome = fit(
            &self.train,
            &self.val,
            &self.logits,
            &self.vocab,
            &gnn,
            &train,
        )?;

        let graphs = join_graphs(&self.test, &self.logits, &self.vocab)?;
        let batch = batch_graphs(&graphs)?;
        let gold = batch.require_gold()?;
        let out = model_forward(&batch, &outcome.params, &outcome.config)?;
        let stacked: Vec<usize> = (0..out.rows()).map(|u| argmax(out.row(u))).collect();
        let base: Vec<usize> = (0..batch.num_nodes())
            .map(|u| argmax(batch.init().row(u)))
            .collect();
        let bs = f_scores(&base, &gold, k)?;
        let ss = f_scores(&stacked, &gold, k)?;
        let pair: Vec<usize> = AMBIGUOUS_PAIR
            .iter()
            .map(|c| self.vocab.index_of(c))
            .collect::<Result<_>>()?;
        let summary = TrainSummary {
            family: family.to_string(),
            steps: outcome.config.steps,
            heads: outcome.config.heads,
            history: outcome.history.clone(),
            best_epoch: outcome.best_epoch,
            base_macro_f1: bs.macro_f1,
            stacked_macro_f1: ss.macro_f1,
            base_pair_f1: bs.macro_over(&pair).unwrap_or(0.0),
            stacked_pair_f1: ss.macro_over(&pair).unwrap_or(0.0),
            classes: self.vocab.names().to_vec(),
            base_class_f1: bs.per_class.iter().map(|c| c.f1).collect(),
            stacked_class_f1: ss.per_class.iter().map(|c| c.f1).collect(),
        };
        self.model = Some(Trained {
            config: outcome.config,
            params: outcome.params,
        });
        Ok(summary)
    }

    /// Predictions for the `index`-th test table.
    pub fn test_table(&self, index: usize) -> Result<TableView> {
        let table = self.test.get(index).ok_or_else(|| {
            Error::InvalidInput(format!("test table {index} of {}", self.test.len()))
        })?;
        self.view(table)
    }

    /// Predictions for a table typed in by the user, one value list per
    /// column.
    pub fn custom_table(&self, columns: Vec<Vec<String>>) -> Result<TableView> {
        if columns.is_empty() {
            return Err(Error::InvalidInput("enter at least one column".into()));
        }
        let table = Table {
            table_id: "custom".into(),
            columns: columns
                .into_iter()
                .map(|values| Column {
                    values,
                    label: None,
                })
                .collect(),
        };
        self.view(&table)
    }

    fn view(&self, table: &Table) -> Result<TableView> {
        let logits: Vec<Vec<f64>> = (0..table.num_columns())
            .map(|c| self.base.column_logits(table, c))
            .collect::<Result<_>>()?;
        let unlabeled = Table {
            table_id: table.table_id.clone(),
            columns: table
                .columns
                .iter()
                .map(|c| Column {
                    values: c.values.clone(),
                    label: None,
                })
                .collect(),
        };
        let graph: ColumnGraph = build_graph(&unlabeled, &logits, &self.vocab)?;
        let batch = GraphBatch::single(&graph);
        let (stacked, attention) = match &self.model {
            Some(m) => {
                let out = model_forward(&batch, &m.params, &m.config)?;
                let attention = if m.config.family == GnnFamily::Gat {
                    let n = batch.num_nodes();
                    let maps = attention_maps(&batch, &m.params, &m.config)?;
                    Some(
                        maps.into_iter()
                            .map(|step| {
                                step.into_iter()
                                    .map(|head| {
                                        head.into_iter()
                                            .map(|row| {
                                                let mut dense = vec![0.0; n];
                                                for (v, w) in row {
                                                    dense[v] = w;
                                                }
                                                dense
                                            })
                                            .collect()
                                    })
                                    .collect()
                            })
                            .collect(),
                    )
                } else {
                    None
                };
                (Some(out), attention)
            }
            None => (None, None),
        };
        let name = |i: usize| self.vocab.name(i).to_string();
        let columns = table
            .columns
            .iter()
            .enumerate()
            .map(|(u, col)| {
                Ok(ColumnView {
                    preview: col.values.iter().take(PREVIEW_CELLS).cloned().collect(),
                    gold: col.label.clone(),
                    base_label: name(argmax(&logits[u])),
                    base_probabilities: softmax(&logits[u])?,
                    stacked_label: stacked.as_ref().map(|o| name(argmax(o.row(u)))),
                    stacked_probabilities: stacked
                        .as_ref()
                        .map(|o| softmax(o.row(u)))
                        .transpose()?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TableView {
            table_id: table.table_id.clone(),
            classes: self.vocab.names().to_vec(),
            columns,
            attention,
        })
    }
}

fn js_err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

/// JavaScript handle around [`Demo`].
#[wasm_bindgen]
pub struct DemoSession {
    inner: Demo,
}

#[wasm_bindgen]
impl DemoSession {
    #[wasm_bindgen(constructor)]
    pub fn new(num_tables: usize, seed: u32) -> Result<DemoSession, JsError> {
        Ok(Self {
            inner: Demo::new(num_tables, u64::from(seed)).map_err(js_err)?,
        })
    }

    #[wasm_bindgen(js_name = testTables)]
    pub fn test_tables(&self) -> usize {
        self.inner.test_tables()
    }

    /// Trains and returns a JSON [`TrainSummary`].
    pub fn train(
        &mut self,
        family: &str,
        steps: usize,
        heads: usize,
        epochs: usize,
        seed: u32,
    ) -> Result<String, JsError> {
        let s = self
            .inner
            .train(family, steps, heads, epochs, u64::from(seed))
            .map_err(js_err)?;
        serde_json::to_string(&s).map_err(js_err)
    }

    /// JSON [`TableView`] of a held-out table.
    #[wasm_bindgen(js_name = testTable)]
    pub fn test_table(&self, index: usize) -> Result<String, JsError> {
        serde_json::to_string(&self.inner.test_table(index).map_err(js_err)?).map_err(js_err)
    }

    /// JSON [`TableView`] of a user table given as a JSON array of string
    /// arrays, one per column.
    #[wasm_bindgen(js_name = customTable)]
    pub fn custom_table(&self, columns_json: &str) -> Result<String, JsError> {
        let columns: Vec<Vec<String>> = serde_json::from_str(columns_json).map_err(js_err)?;
        serde_json::to_string(&self.inner.custom_table(columns).map_err(js_err)?).map_err(js_err)
    }
}
