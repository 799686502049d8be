//! Single-column predictors that supply the initial node logits.
//!
//! Two sources implement [`ColumnPredictor`]: a hashed character n-gram
//! logistic regression trained here, and [`LogitsMap`], which replays logits
//! produced elsewhere (one JSON record per column).
//!
//! Feature layout for width `m`: slots `0..m-8` hold L2-normalized counts of
//! character 1/2/3-grams, bucketed by 64-bit FNV-1a of the n-gram's UTF-8
//! bytes modulo `m-8`. The cells are joined with U+001F before n-gram
//! extraction. Slot `m-8` is `ln(1 + mean cell length in chars)`, slot `m-7`
//! the fraction of cells that parse as numbers; the remaining six trailing
//! slots are reserved and zero.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{LabelVocab, Table};
use crate::numerics::{adam_step, AdamState, Tape, Tensor};
use crate::rng::{fnv1a64, substream};

pub const DEFAULT_WIDTH: usize = 1024;
pub const RESERVED_SLOTS: usize = 8;
pub const MIN_WIDTH: usize = 16;
pub const CELL_SEPARATOR: char = '\u{1f}';

/// Fixed-width column embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct ColumnFeatures(Vec<f64>);

impl ColumnFeatures {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn width(&self) -> usize {
        self.0.len()
    }

    /// The hashed n-gram block (everything before the reserved slots).
    pub fn ngram_block(&self) -> &[f64] {
        &self.0[..self.0.len() - RESERVED_SLOTS]
    }
}

fn is_numeric(cell: &str) -> bool {
    let t = cell.trim();
    !t.is_empty() && t.replace(',', "").parse::<f64>().is_ok()
}

pub fn featurize<S: AsRef<str>>(values: &[S], width: usize) -> Result<ColumnFeatures> {
    if width < MIN_WIDTH {
        return Err(Error::invalid(format!(
            "feature width {width} below minimum {MIN_WIDTH}"
        )));
    }
    let mut f = vec![0.0; width];
    if values.is_empty() {
        return Ok(ColumnFeatures(f));
    }
    let buckets = (width - RESERVED_SLOTS) as u64;
    let mut joined = String::new();
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            joined.push(CELL_SEPARATOR);
        }
        joined.push_str(v.as_ref());
    }
    let chars: Vec<char> = joined.chars().collect();
    let mut gram = String::new();
    for n in 1..=3 {
        for window in chars.windows(n) {
            gram.clear();
            gram.extend(window);
            f[(fnv1a64(gram.as_bytes()) % buckets) as usize] += 1.0;
        }
    }
    let norm = f.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in &mut f[..buckets as usize] {
            *x /= norm;
        }
    }
    let count = values.len() as f64;
    let mean_len = values
        .iter()
        .map(|v| v.as_ref().chars().count())
        .sum::<usize>() as f64
        / count;
    let numeric = values.iter().filter(|v| is_numeric(v.as_ref())).count() as f64 / count;
    let tail = width - RESERVED_SLOTS;
    f[tail] = mean_len.ln_1p();
    f[tail + 1] = numeric;
    Ok(ColumnFeatures(f))
}

/// Anything that can score a table column against the `k` classes.
pub trait ColumnPredictor {
    fn num_classes(&self) -> usize;

    /// Raw pre-softmax scores for column `column` of `table`.
    fn column_logits(&self, table: &Table, column: usize) -> Result<Vec<f64>>;
}

/// Runs `predictor` over every column of `tables`.
pub fn collect_logits(predictor: &dyn ColumnPredictor, tables: &[Table]) -> Result<LogitsMap> {
    let mut map = LogitsMap::new(predictor.num_classes());
    for t in tables {
        for c in 0..t.num_columns() {
            map.insert(&t.table_id, c, predictor.column_logits(t, c)?)?;
        }
    }
    Ok(map)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub width: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            width: DEFAULT_WIDTH,
            epochs: 30,
            learning_rate: 1e-2,
            weight_decay: 1e-3,
            batch_size: 32,
            seed: 0,
        }
    }
}

/// Multinomial logistic regression over [`featurize`] output:
/// `logits = features · W + b` with `W` of shape `m × k`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearBaseline {
    pub weights: Tensor,
    pub bias: Tensor,
}

impl LinearBaseline {
    pub fn width(&self) -> usize {
        self.weights.rows()
    }

    pub fn logits_from_features(&self, features: &ColumnFeatures) -> Vec<f64> {
        let (m, k) = self.weights.dims2();
        debug_assert_eq!(features.width(), m);
        let w = self.weights.data();
        let mut out = self.bias.data().to_vec();
        for (i, &x) in features.as_slice().iter().enumerate() {
            if x != 0.0 {
                for (o, wv) in out.iter_mut().zip(&w[i * k..(i + 1) * k]) {
                    *o += x * wv;
                }
            }
        }
        out
    }

    pub fn predict_logits<S: AsRef<str>>(&self, values: &[S]) -> Result<Vec<f64>> {
        Ok(self.logits_from_features(&featurize(values, self.width())?))
    }
}

impl ColumnPredictor for LinearBaseline {
    fn num_classes(&self) -> usize {
        self.bias.numel()
    }

    fn column_logits(&self, table: &Table, column: usize) -> Result<Vec<f64>> {
        self.predict_logits(&table.columns[column].values)
    }
}

/// Fits the baseline on `(features, class)` pairs with Adam on the summed NLL.
/// Weights and bias start at zero.
pub fn baseline_fit(
    examples: &[(ColumnFeatures, usize)],
    vocab: &LabelVocab,
    config: &BaselineConfig,
) -> Result<LinearBaseline> {
    let k = vocab.len();
    let m = config.width;
    if config.batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    let mut counts = vec![0usize; k];
    for (f, c) in examples {
        if f.width() != m {
            return Err(Error::invalid(format!(
                "feature width {} != configured {m}",
                f.width()
            )));
        }
        *counts
            .get_mut(*c)
            .ok_or_else(|| Error::invalid(format!("class {c} out of range")))? += 1;
    }
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(Error::Training(format!(
            "class {:?} has no training examples",
            vocab.name(c)
        )));
    }

    let mut params = vec![Tensor::zeros(&[m, k]), Tensor::zeros(&[k])];
    let mut adam = AdamState::new(&params);
    let mut rng = substream(config.seed, "baseline");
    let mut order: Vec<usize> = (0..examples.len()).collect();
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let mut tape = Tape::new();
            let rows: Vec<f64> = chunk
                .iter()
                .flat_map(|&i| examples[i].0.as_slice().to_vec())
                .collect();
            let x = tape.leaf(Tensor::matrix(chunk.len(), m, rows)?);
            let w = tape.leaf(params[0].clone());
            let b = tape.leaf(params[1].clone());
            let xw = tape.matmul(x, w)?;
            let logits = tape.add_row(xw, b)?;
            let targets = Arc::new(chunk.iter().map(|&i| examples[i].1).collect());
            let loss = tape.nll_sum(logits, targets)?;
            let grads = tape.backward(loss)?;
            let g = vec![grads.wrt(w), grads.wrt(b)];
            adam_step(
                &mut params,
                &g,
                &mut adam,
                config.learning_rate,
                config.weight_decay,
            )?;
        }
    }
    let bias = params.pop().unwrap();
    let weights = params.pop().unwrap();
    Ok(LinearBaseline { weights, bias })
}

/// Featurizes every labeled column of `tables` and fits the baseline.
pub fn baseline_fit_tables(
    tables: &[Table],
    vocab: &LabelVocab,
    config: &BaselineConfig,
) -> Result<LinearBaseline> {
    let mut examples = Vec::new();
    for t in tables {
        for c in &t.columns {
            if let Some(label) = &c.label {
                examples.push((featurize(&c.values, config.width)?, vocab.index_of(label)?));
            }
        }
    }
    baseline_fit(&examples, vocab, config)
}

/// One line of a logits file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogitsRecord {
    pub table_id: String,
    pub column_index: usize,
    pub logits: Vec<f64>,
}

/// Logits keyed by `(table_id, column_index)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LogitsMap {
    k: usize,
    map: BTreeMap<(String, usize), Vec<f64>>,
}

impl LogitsMap {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            map: BTreeMap::new(),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn insert(&mut self, table_id: &str, column_index: usize, logits: Vec<f64>) -> Result<()> {
        if logits.len() != self.k {
            return Err(Error::invalid(format!(
                "{} logits for ({table_id:?}, {column_index}), expected {}",
                logits.len(),
                self.k
            )));
        }
        if logits.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite logits for ({table_id:?}, {column_index})"
            )));
        }
        if self
            .map
            .insert((table_id.to_string(), column_index), logits)
            .is_some()
        {
            return Err(Error::invalid(format!(
                "duplicate logits for ({table_id:?}, {column_index})"
            )));
        }
        Ok(())
    }

    pub fn get(&self, table_id: &str, column_index: usize) -> Option<&[f64]> {
        self.map
            .get(&(table_id.to_string(), column_index))
            .map(Vec::as_slice)
    }

    /// Per-column logits of `table`, or a join error naming the first gap.
    pub fn for_table(&self, table: &Table) -> Result<Vec<Vec<f64>>> {
        (0..table.num_columns())
            .map(|c| {
                self.get(&table.table_id, c)
                    .map(<[f64]>::to_vec)
                    .ok_or_else(|| Error::MissingLogits {
                        table_id: table.table_id.clone(),
                        column_index: c,
                    })
            })
            .collect()
    }

    /// Adds every entry of `other`, rejecting duplicates.
    pub fn merge(&mut self, other: LogitsMap) -> Result<()> {
        for ((t, c), l) in other.map {
            self.insert(&t, c, l)?;
        }
        Ok(())
    }

    pub fn records(&self) -> impl Iterator<Item = LogitsRecord> + '_ {
        self.map.iter().map(|((t, c), l)| LogitsRecord {
            table_id: t.clone(),
            column_index: *c,
            logits: l.clone(),
        })
    }
}

impl ColumnPredictor for LogitsMap {
    fn num_classes(&self) -> usize {
        self.k
    }

    fn column_logits(&self, table: &Table, column: usize) -> Result<Vec<f64>> {
        self.get(&table.table_id, column)
            .map(<[f64]>::to_vec)
            .ok_or_else(|| Error::MissingLogits {
                table_id: table.table_id.clone(),
                column_index: column,
            })
    }
}

pub fn save_logits<W: Write>(mut writer: W, logits: &LogitsMap) -> Result<()> {
    for r in logits.records() {
        serde_json::to_writer(&mut writer, &r)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// Parses a logits file, checking every vector against the vocabulary size.
pub fn load_logits<R: BufRead>(reader: R, vocab: &LabelVocab) -> Result<LogitsMap> {
    let k = vocab.len();
    let mut map = LogitsMap::new(k);
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = i + 1;
        let text = line.trim().trim_start_matches('\u{feff}');
        if text.is_empty() {
            continue;
        }
        let fail = |message: String| Error::Format {
            line: line_no,
            message,
        };
        let r: LogitsRecord = serde_json::from_str(text).map_err(|e| fail(e.to_string()))?;
        if r.logits.len() != k {
            return Err(fail(format!("{} logits, expected k = {k}", r.logits.len())));
        }
        if map.get(&r.table_id, r.column_index).is_some() {
            return Err(fail(format!(
                "duplicate entry for ({:?}, {})",
                r.table_id, r.column_index
            )));
        }
        map.insert(&r.table_id, r.column_index, r.logits)
            .map_err(|e| fail(e.to_string()))?;
    }
    Ok(map)
}
