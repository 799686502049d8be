//! Message-passing models over column graphs.
//!
//! A model applies one update rule (GCN, GGNN or GAT) for `S` steps. Hidden
//! steps use the configured activation; the last step is linear and yields
//! `k` class logits per node.

mod io;
pub mod layers;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use io::{load_model, save_model, GnnModel, FORMAT_VERSION};
pub use layers::Activation;

use crate::error::{Error, Result};
use crate::graph::{ColumnGraph, GraphBatch, LabelVocab};
use crate::numerics::{argmax, Tape, Tensor, Var};
use crate::rng::substream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GnnFamily {
    Gcn,
    Ggnn,
    Gat,
}

impl GnnFamily {
    pub const ALL: [GnnFamily; 3] = [GnnFamily::Gcn, GnnFamily::Ggnn, GnnFamily::Gat];

    /// Step count of the published per-family default model.
    pub fn default_steps(self) -> usize {
        match self {
            GnnFamily::Gcn => 2,
            GnnFamily::Ggnn => 3,
            GnnFamily::Gat => 2,
        }
    }

    /// Head count used when none is given. The published grid reports only
    /// the candidates, so this is our choice.
    pub fn default_heads(self) -> usize {
        match self {
            GnnFamily::Gat => DEFAULT_GAT_HEADS,
            _ => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            GnnFamily::Gcn => "gcn",
            GnnFamily::Ggnn => "ggnn",
            GnnFamily::Gat => "gat",
        }
    }
}

pub const DEFAULT_GAT_HEADS: usize = 12;

impl fmt::Display for GnnFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GnnFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gcn" => Ok(GnnFamily::Gcn),
            "ggnn" => Ok(GnnFamily::Ggnn),
            "gat" => Ok(GnnFamily::Gat),
            other => Err(Error::invalid(format!("unknown model family {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GnnConfig {
    pub family: GnnFamily,
    pub steps: usize,
    pub heads: usize,
    pub hidden_dim: usize,
    pub num_classes: usize,
    pub activation: Activation,
    pub seed: u64,
}

impl GnnConfig {
    /// Family defaults for `k` classes: hidden width `k`, ReLU between steps.
    pub fn preset(family: GnnFamily, num_classes: usize) -> Self {
        Self {
            family,
            steps: family.default_steps(),
            heads: family.default_heads(),
            hidden_dim: num_classes,
            num_classes,
            activation: Activation::Relu,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.heads == 0 || self.hidden_dim == 0 || self.num_classes == 0 {
            return Err(Error::invalid(format!(
                "steps, heads, hidden_dim and classes must be positive: {self:?}"
            )));
        }
        if self.family == GnnFamily::Ggnn && self.hidden_dim != self.num_classes {
            return Err(Error::invalid(
                "the gated family keeps hidden_dim equal to the class count",
            ));
        }
        Ok(())
    }

    /// Width of the states entering step `s`.
    pub fn input_dim(&self, s: usize) -> usize {
        match (s, self.family) {
            (0, _) | (_, GnnFamily::Ggnn) => self.num_classes,
            (_, GnnFamily::Gat) => self.heads * self.hidden_dim,
            (_, GnnFamily::Gcn) => self.hidden_dim,
        }
    }

    /// Width produced by step `s` (per head for attention).
    pub fn output_dim(&self, s: usize) -> usize {
        if s + 1 == self.steps || self.family == GnnFamily::Ggnn {
            self.num_classes
        } else {
            self.hidden_dim
        }
    }

    /// Every parameter name with its shape, in a fixed order.
    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let mut specs = Vec::new();
        for s in 0..self.steps {
            let (din, dout) = (self.input_dim(s), self.output_dim(s));
            match self.family {
                GnnFamily::Gcn => {
                    specs.push(ParamSpec::weight(format!("step{s}.weight"), dout, din))
                }
                GnnFamily::Gat => {
                    for h in 0..self.heads {
                        specs.push(ParamSpec::weight(
                            format!("step{s}.head{h}.weight"),
                            dout,
                            din,
                        ));
                        specs.push(ParamSpec {
                            name: format!("step{s}.head{h}.attention"),
                            shape: vec![2, dout],
                            kind: ParamKind::Attention,
                        });
                    }
                }
                GnnFamily::Ggnn => {
                    let k = self.num_classes;
                    specs.push(ParamSpec::weight(format!("step{s}.weight"), k, k));
                    for gate in ["z", "r", "h"] {
                        specs.push(ParamSpec::weight(format!("step{s}.w_{gate}"), k, k));
                        specs.push(ParamSpec::weight(format!("step{s}.u_{gate}"), k, k));
                        specs.push(ParamSpec {
                            name: format!("step{s}.b_{gate}"),
                            shape: vec![k],
                            kind: ParamKind::Bias,
                        });
                    }
                }
            }
        }
        specs
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Attention,
    Bias,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: ParamKind,
}

impl ParamSpec {
    fn weight(name: String, rows: usize, cols: usize) -> Self {
        Self {
            name,
            shape: vec![rows, cols],
            kind: ParamKind::Weight,
        }
    }

    /// Glorot bound `√(6 / (fan_in + fan_out))`; zero for biases.
    pub fn glorot_bound(&self) -> f64 {
        let (fan_in, fan_out) = match self.kind {
            ParamKind::Weight => (self.shape[1], self.shape[0]),
            ParamKind::Attention => (self.shape.iter().product(), 1),
            ParamKind::Bias => return 0.0,
        };
        (6.0 / (fan_in + fan_out) as f64).sqrt()
    }
}

/// Named parameter tensors of a model.
#[derive(Clone, Debug, PartialEq)]
pub struct GnnParams {
    tensors: BTreeMap<String, Tensor>,
}

impl GnnParams {
    /// Checks that `tensors` holds exactly the parameters `config` needs.
    pub fn from_map(config: &GnnConfig, tensors: BTreeMap<String, Tensor>) -> Result<Self> {
        config.validate()?;
        let specs = config.param_specs();
        if specs.len() != tensors.len() {
            return Err(Error::invalid(format!(
                "expected {} parameter tensors, got {}",
                specs.len(),
                tensors.len()
            )));
        }
        for spec in &specs {
            let t = tensors
                .get(&spec.name)
                .ok_or_else(|| Error::invalid(format!("missing parameter {}", spec.name)))?;
            if t.shape() != spec.shape.as_slice() {
                return Err(Error::invalid(format!(
                    "parameter {} has shape {:?}, expected {:?}",
                    spec.name,
                    t.shape(),
                    spec.shape
                )));
            }
        }
        Ok(Self { tensors })
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Tensors in name order, the layout used by the optimizer.
    pub fn to_vec(&self) -> Vec<Tensor> {
        self.tensors.values().cloned().collect()
    }

    /// Replaces all tensors, in name order.
    pub fn set_all(&mut self, values: Vec<Tensor>) -> Result<()> {
        if values.len() != self.tensors.len() {
            return Err(Error::invalid("parameter count changed"));
        }
        for (slot, v) in self.tensors.values_mut().zip(values) {
            if slot.shape() != v.shape() {
                return Err(Error::invalid("parameter shape changed"));
            }
            *slot = v;
        }
        Ok(())
    }

    pub fn insert(&mut self, name: &str, value: Tensor) -> Result<()> {
        match self.tensors.get_mut(name) {
            Some(slot) if slot.shape() == value.shape() => {
                *slot = value;
                Ok(())
            }
            Some(_) => Err(Error::invalid(format!("shape mismatch replacing {name}"))),
            None => Err(Error::invalid(format!("no parameter named {name}"))),
        }
    }
}

/// Glorot-uniform weights and attention vectors, zero biases, drawn from the
/// `init` sub-stream of `seed`.
pub fn init_params(config: &GnnConfig, seed: u64) -> Result<GnnParams> {
    config.validate()?;
    let mut rng = substream(seed, "init");
    let mut tensors = BTreeMap::new();
    for spec in config.param_specs() {
        let n: usize = spec.shape.iter().product();
        let bound = spec.glorot_bound();
        let data = if bound == 0.0 {
            vec![0.0; n]
        } else {
            (0..n).map(|_| rng.gen_range(-bound..=bound)).collect()
        };
        tensors.insert(spec.name.clone(), Tensor::new(spec.shape.clone(), data)?);
    }
    GnnParams::from_map(config, tensors)
}

/// Parameters registered as tape leaves.
pub struct ParamVars {
    vars: BTreeMap<String, Var>,
}

impl ParamVars {
    pub fn register(tape: &mut Tape, params: &GnnParams) -> Self {
        let vars = params
            .iter()
            .map(|(k, t)| (k.clone(), tape.leaf(t.clone())))
            .collect();
        Self { vars }
    }

    fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::invalid(format!("missing parameter {name}")))
    }

    /// Handles in name order, aligned with [`GnnParams::to_vec`].
    pub fn in_order(&self) -> Vec<Var> {
        self.vars.values().copied().collect()
    }
}

/// Final logits plus, for attention models, `attention[step][head]`.
pub struct Forward {
    pub logits: Var,
    pub attention: Vec<Vec<Var>>,
}

pub fn forward_on_tape(
    tape: &mut Tape,
    batch: &GraphBatch,
    vars: &ParamVars,
    config: &GnnConfig,
) -> Result<Forward> {
    config.validate()?;
    if batch.num_classes() != config.num_classes {
        return Err(Error::invalid(format!(
            "batch carries {} classes, model expects {}",
            batch.num_classes(),
            config.num_classes
        )));
    }
    let mut h = tape.leaf(batch.init().clone());
    let mut attention = Vec::new();
    for s in 0..config.steps {
        let is_final = s + 1 == config.steps;
        let act = if is_final {
            Activation::Identity
        } else {
            config.activation
        };
        h = match config.family {
            GnnFamily::Gcn => {
                layers::gcn(tape, h, batch, vars.get(&format!("step{s}.weight"))?, act)?
            }
            GnnFamily::Ggnn => {
                let p = |n: &str| vars.get(&format!("step{s}.{n}"));
                let gru = layers::GruVars {
                    w_z: p("w_z")?,
                    u_z: p("u_z")?,
                    b_z: p("b_z")?,
                    w_r: p("w_r")?,
                    u_r: p("u_r")?,
                    b_r: p("b_r")?,
                    w_h: p("w_h")?,
                    u_h: p("u_h")?,
                    b_h: p("b_h")?,
                };
                layers::ggnn(tape, h, batch, p("weight")?, &gru)?
            }
            GnnFamily::Gat => {
                let heads = (0..config.heads)
                    .map(|k| {
                        Ok((
                            vars.get(&format!("step{s}.head{k}.weight"))?,
                            vars.get(&format!("step{s}.head{k}.attention"))?,
                        ))
                    })
                    .collect::<Result<Vec<_>>>()?;
                let (out, attn) = layers::gat(tape, h, batch, &heads, act, is_final)?;
                attention.push(attn);
                out
            }
        };
    }
    Ok(Forward {
        logits: h,
        attention,
    })
}

/// Final-step logits, one row per node of the batch.
pub fn model_forward(batch: &GraphBatch, params: &GnnParams, config: &GnnConfig) -> Result<Tensor> {
    let mut tape = Tape::new();
    let vars = ParamVars::register(&mut tape, params);
    let out = forward_on_tape(&mut tape, batch, &vars, config)?;
    Ok(tape.value(out.logits).clone())
}

/// `(source node, weight)` lists per receiving node, indexed
/// `[step][head][u]`.
pub type AttentionMaps = Vec<Vec<Vec<Vec<(usize, f64)>>>>;

/// Attention weights of every step and head.
pub fn attention_maps(
    batch: &GraphBatch,
    params: &GnnParams,
    config: &GnnConfig,
) -> Result<AttentionMaps> {
    let mut tape = Tape::new();
    let vars = ParamVars::register(&mut tape, params);
    let out = forward_on_tape(&mut tape, batch, &vars, config)?;
    let edges = batch.edges_with_self();
    Ok(out
        .attention
        .iter()
        .map(|heads| {
            heads
                .iter()
                .map(|&a| {
                    let w = tape.value(a).data();
                    (0..batch.num_nodes())
                        .map(|u| edges.segment(u).map(|e| (edges.src(e), w[e])).collect())
                        .collect()
                })
                .collect()
        })
        .collect())
}

/// One layer of the symmetric-normalized convolution on plain tensors.
pub fn gcn_layer(
    states: &Tensor,
    batch: &GraphBatch,
    w: &Tensor,
    act: Activation,
) -> Result<Tensor> {
    let mut tape = Tape::new();
    let h = tape.leaf(states.clone());
    let w = tape.leaf(w.clone());
    let out = layers::gcn(&mut tape, h, batch, w, act)?;
    Ok(tape.value(out).clone())
}

/// Gate weights of one gated step.
#[derive(Clone, Debug)]
pub struct GruParams {
    pub w_z: Tensor,
    pub u_z: Tensor,
    pub b_z: Tensor,
    pub w_r: Tensor,
    pub u_r: Tensor,
    pub b_r: Tensor,
    pub w_h: Tensor,
    pub u_h: Tensor,
    pub b_h: Tensor,
}

impl GruParams {
    pub fn zeros(dim: usize) -> Self {
        let m = Tensor::zeros(&[dim, dim]);
        let b = Tensor::zeros(&[dim]);
        Self {
            w_z: m.clone(),
            u_z: m.clone(),
            b_z: b.clone(),
            w_r: m.clone(),
            u_r: m.clone(),
            b_r: b.clone(),
            w_h: m.clone(),
            u_h: m,
            b_h: b,
        }
    }
}

pub fn ggnn_layer(
    states: &Tensor,
    batch: &GraphBatch,
    w: &Tensor,
    gru: &GruParams,
) -> Result<Tensor> {
    let mut tape = Tape::new();
    let h = tape.leaf(states.clone());
    let w = tape.leaf(w.clone());
    let mut leaf = |t: &Tensor| tape.leaf(t.clone());
    let vars = layers::GruVars {
        w_z: leaf(&gru.w_z),
        u_z: leaf(&gru.u_z),
        b_z: leaf(&gru.b_z),
        w_r: leaf(&gru.w_r),
        u_r: leaf(&gru.u_r),
        b_r: leaf(&gru.b_r),
        w_h: leaf(&gru.w_h),
        u_h: leaf(&gru.u_h),
        b_h: leaf(&gru.b_h),
    };
    let out = layers::ggnn(&mut tape, h, batch, w, &vars)?;
    Ok(tape.value(out).clone())
}

/// Attention weights of node `u` over N(u) ∪ {u} for one head, as
/// `(source node, weight)` pairs with the self entry first.
pub fn gat_attention(
    states: &Tensor,
    batch: &GraphBatch,
    u: usize,
    w: &Tensor,
    a: &Tensor,
) -> Result<Vec<(usize, f64)>> {
    if u >= batch.num_nodes() {
        return Err(Error::invalid(format!("node {u} out of range")));
    }
    let mut tape = Tape::new();
    let h = tape.leaf(states.clone());
    let (w, a) = (tape.leaf(w.clone()), tape.leaf(a.clone()));
    let head = layers::gat_head(&mut tape, h, batch, w, a)?;
    let edges = batch.edges_with_self();
    let alpha = tape.value(head.attention).data();
    Ok(edges.segment(u).map(|e| (edges.src(e), alpha[e])).collect())
}

/// One attention step on plain tensors; `heads` pairs each head's weight
/// matrix with its `2 × d` attention vector.
pub fn gat_layer(
    states: &Tensor,
    batch: &GraphBatch,
    heads: &[(Tensor, Tensor)],
    act: Activation,
    is_final: bool,
) -> Result<Tensor> {
    let mut tape = Tape::new();
    let h = tape.leaf(states.clone());
    let vars: Vec<(Var, Var)> = heads
        .iter()
        .map(|(w, a)| (tape.leaf(w.clone()), tape.leaf(a.clone())))
        .collect();
    let (out, _) = layers::gat(&mut tape, h, batch, &vars, act, is_final)?;
    Ok(tape.value(out).clone())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnPrediction {
    pub table_id: String,
    pub column_index: usize,
    pub label_index: usize,
    pub label: String,
    pub probabilities: Vec<f64>,
}

/// Per-column softmax over the final logits and its argmax label.
pub fn predict(
    graph: &ColumnGraph,
    params: &GnnParams,
    config: &GnnConfig,
    vocab: &LabelVocab,
) -> Result<Vec<ColumnPrediction>> {
    predict_batch(&GraphBatch::single(graph), params, config, vocab)
}

pub fn predict_batch(
    batch: &GraphBatch,
    params: &GnnParams,
    config: &GnnConfig,
    vocab: &LabelVocab,
) -> Result<Vec<ColumnPrediction>> {
    if vocab.len() != config.num_classes {
        return Err(Error::invalid(
            "vocabulary size differs from the model's class count",
        ));
    }
    let logits = model_forward(batch, params, config)?;
    let probs = logits.softmax_rows();
    Ok((0..batch.num_nodes())
        .map(|u| {
            let (m, col) = batch.locate(u);
            let label_index = argmax(logits.row(u));
            ColumnPrediction {
                table_id: batch.members()[m].table_id.clone(),
                column_index: col,
                label_index,
                label: vocab.name(label_index).to_string(),
                probabilities: probs.row(u).to_vec(),
            }
        })
        .collect())
}
