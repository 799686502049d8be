//! The three message-passing update rules, recorded on a tape.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::GraphBatch;
use crate::numerics::{Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Relu => tape.relu(x),
            Activation::Identity => x,
        }
    }
}

/// Symmetric normalization `1/√(d(u)·d(v))` with `d = |N| + 1`, one entry per
/// edge of the self-inclusive edge index.
pub fn gcn_coefficients(batch: &GraphBatch) -> Vec<f64> {
    let edges = batch.edges_with_self();
    let degree = |u: usize| (batch.neighbors(u).len() + 1) as f64;
    (0..edges.num_edges())
        .map(|e| 1.0 / (degree(edges.dst(e)) * degree(edges.src(e))).sqrt())
        .collect()
}

/// h'_u = σ( Σ_{v ∈ N(u) ∪ {u}} W h_v / √(d(u)·d(v)) )
pub fn gcn(tape: &mut Tape, h: Var, batch: &GraphBatch, w: Var, act: Activation) -> Result<Var> {
    let z = tape.matmul_nt(h, w)?;
    let agg = tape.aggregate(
        z,
        batch.edges_with_self(),
        Arc::new(gcn_coefficients(batch)),
    )?;
    Ok(act.apply(tape, agg))
}

/// Tape handles of one step's gated recurrent unit.
#[derive(Clone, Copy, Debug)]
pub struct GruVars {
    pub w_z: Var,
    pub u_z: Var,
    pub b_z: Var,
    pub w_r: Var,
    pub u_r: Var,
    pub b_r: Var,
    pub w_h: Var,
    pub u_h: Var,
    pub b_h: Var,
}

/// m_u = Σ_{v ∈ N(u)} W h_v, then
/// z = σ(W_z m + U_z h + b_z), r = σ(W_r m + U_r h + b_r),
/// ĥ = tanh(W_h m + U_h (r ⊙ h) + b_h), h' = (1 − z) ⊙ h + z ⊙ ĥ.
pub fn ggnn(tape: &mut Tape, h: Var, batch: &GraphBatch, w: Var, gru: &GruVars) -> Result<Var> {
    let n = batch.num_nodes();
    let zw = tape.matmul_nt(h, w)?;
    let ones = Arc::new(vec![1.0; batch.edges_without_self().num_edges()]);
    let m = tape.aggregate(zw, batch.edges_without_self(), ones)?;
    if tape.value(m).dims2() != tape.value(h).dims2() {
        return Err(Error::invalid(format!(
            "gated update needs square message weights; states are {n} x {}",
            tape.value(h).cols()
        )));
    }

    let gate = |tape: &mut Tape, wm: Var, uh: Var, hv: Var, b: Var| -> Result<Var> {
        let a = tape.matmul_nt(m, wm)?;
        let c = tape.matmul_nt(hv, uh)?;
        let s = tape.add(a, c)?;
        tape.add_row(s, b)
    };

    let z_pre = gate(tape, gru.w_z, gru.u_z, h, gru.b_z)?;
    let z = tape.sigmoid(z_pre);
    let r_pre = gate(tape, gru.w_r, gru.u_r, h, gru.b_r)?;
    let r = tape.sigmoid(r_pre);
    let rh = tape.mul(r, h)?;
    let cand_pre = gate(tape, gru.w_h, gru.u_h, rh, gru.b_h)?;
    let cand = tape.tanh(cand_pre);
    let delta = tape.sub(cand, h)?;
    let step = tape.mul(z, delta)?;
    tape.add(h, step)
}

/// Output of one attention head: the aggregated states and the per-edge
/// attention weights over the self-inclusive edge index.
pub struct HeadOutput {
    pub states: Var,
    pub attention: Var,
}

/// α_{u,v} = softmax_{v ∈ N(u) ∪ {u}} ReLU(aᵀ [W h_u ⊕ W h_v]) and
/// out_u = Σ_v α_{u,v} W h_v. `a` is stored as a `2 × d` matrix whose first
/// row scores the receiving node and second row the sending node.
pub fn gat_head(tape: &mut Tape, h: Var, batch: &GraphBatch, w: Var, a: Var) -> Result<HeadOutput> {
    let z = tape.matmul_nt(h, w)?;
    let d = tape.value(z).cols();
    if tape.value(a).dims2() != (2, d) {
        return Err(Error::invalid(format!(
            "attention vector must hold 2 x {d} entries, got {:?}",
            tape.value(a).shape()
        )));
    }
    let edges = batch.edges_with_self();
    let pair = tape.matmul_nt(z, a)?;
    let raw = tape.edge_score(pair, edges.clone())?;
    let scores = tape.relu(raw);
    let attention = tape.segment_softmax(scores, edges.clone())?;
    let states = tape.weighted_aggregate(attention, z, edges)?;
    Ok(HeadOutput { states, attention })
}

/// Multi-head attention step. Hidden steps concatenate σ(head) outputs;
/// the final step averages the heads.
pub fn gat(
    tape: &mut Tape,
    h: Var,
    batch: &GraphBatch,
    heads: &[(Var, Var)],
    act: Activation,
    is_final: bool,
) -> Result<(Var, Vec<Var>)> {
    if heads.is_empty() {
        return Err(Error::invalid("attention layer needs at least one head"));
    }
    let mut outs = Vec::with_capacity(heads.len());
    let mut attn = Vec::with_capacity(heads.len());
    for &(w, a) in heads {
        let head = gat_head(tape, h, batch, w, a)?;
        attn.push(head.attention);
        outs.push(head.states);
    }
    if outs
        .iter()
        .any(|&o| tape.value(o).shape() != tape.value(outs[0]).shape())
    {
        return Err(Error::invalid("attention heads disagree in output width"));
    }
    let out = if is_final {
        let mut sum = outs[0];
        for &o in &outs[1..] {
            sum = tape.add(sum, o)?;
        }
        let mean = tape.scale(sum, 1.0 / heads.len() as f64);
        act.apply(tape, mean)
    } else {
        let activated: Vec<Var> = outs.into_iter().map(|o| act.apply(tape, o)).collect();
        tape.concat_cols(&activated)?
    };
    Ok((out, attn))
}
