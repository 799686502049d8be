//! Dynamic reverse-mode tape.
//!
//! Every forward operation appends a node holding its value and the indices
//! of its inputs. `backward` walks the nodes in exact reverse order, seeding
//! the loss adjoint with 1. A fresh tape is built for every forward pass.

use std::sync::Arc;

use super::tensor::{mm, mm_nt, mm_tn, relu, sigmoid, softmax_slice, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Directed edge pattern grouped by destination node (CSR layout).
///
/// Edge `e` carries a message from `src[e]` into `dst[e]`; the edges of
/// destination `u` occupy `offsets[u]..offsets[u + 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeIndex {
    num_nodes: usize,
    offsets: Vec<usize>,
    src: Vec<usize>,
    dst: Vec<usize>,
}

impl EdgeIndex {
    /// Builds incoming edges for each node from its neighbor list, optionally
    /// prefixed by a self edge.
    pub fn from_neighbors(neighbors: &[Vec<usize>], include_self: bool) -> Self {
        let num_nodes = neighbors.len();
        let mut offsets = Vec::with_capacity(num_nodes + 1);
        let mut src = Vec::new();
        let mut dst = Vec::new();
        offsets.push(0);
        for (u, list) in neighbors.iter().enumerate() {
            if include_self {
                src.push(u);
                dst.push(u);
            }
            for &v in list {
                src.push(v);
                dst.push(u);
            }
            offsets.push(src.len());
        }
        Self {
            num_nodes,
            offsets,
            src,
            dst,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.src.len()
    }

    pub fn segment(&self, u: usize) -> std::ops::Range<usize> {
        self.offsets[u]..self.offsets[u + 1]
    }

    pub fn src(&self, e: usize) -> usize {
        self.src[e]
    }

    pub fn dst(&self, e: usize) -> usize {
        self.dst[e]
    }
}

/// Sums terms in ascending value order so the result does not depend on the
/// order in which edges were enumerated.
fn canonical_sum(terms: &mut [f64]) -> f64 {
    terms.sort_by(f64::total_cmp);
    terms.iter().sum()
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// a · bᵀ
    MatMulNt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// matrix + row vector broadcast over rows
    AddRow(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    ConcatCols(Vec<Var>),
    /// out[dst] = Σ coeff[e] · in[src] with constant coefficients
    Aggregate {
        input: Var,
        edges: Arc<EdgeIndex>,
        coeffs: Arc<Vec<f64>>,
    },
    /// out[e] = pair[dst, 0] + pair[src, 1]
    EdgeScore {
        pair: Var,
        edges: Arc<EdgeIndex>,
    },
    SegmentSoftmax {
        input: Var,
        edges: Arc<EdgeIndex>,
    },
    /// out[dst] = Σ weight[e] · in[src]
    WeightedAggregate {
        weights: Var,
        input: Var,
        edges: Arc<EdgeIndex>,
    },
    /// Σ_u −log softmax(logits[u])[target[u]]
    NllSum {
        logits: Var,
        targets: Arc<Vec<usize>>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        self.value(v).dims2()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    /// `a · bᵀ`, the row-state form of applying a weight matrix `b` (out × in)
    /// to every row of `a`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, n) = self.dims(a);
        let (p, n2) = self.dims(b);
        if n != n2 {
            return Err(Error::invalid(format!(
                "linear map expects input width {n2}, got {n}"
            )));
        }
        let data = mm_nt(self.value(a).data(), self.value(b).data(), m, n, p);
        Ok(self.push(Tensor::from_parts(vec![m, p], data), Op::MatMulNt(a, b)))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::invalid(format!(
                "{what}: shapes {:?} and {:?} differ",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        let data = x
            .data()
            .iter()
            .zip(y.data())
            .map(|(&p, &q)| f(p, q))
            .collect();
        let shape = x.shape().to_vec();
        self.push(Tensor::from_parts(shape, data), op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        Ok(self.zip_with(a, b, Op::Add(a, b), |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        Ok(self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        Ok(self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y))
    }

    pub fn add_row(&mut self, m: Var, row: Var) -> Result<Var> {
        let (r, c) = self.dims(m);
        if self.value(row).numel() != c {
            return Err(Error::invalid(format!(
                "bias of length {} cannot broadcast over width {c}",
                self.value(row).numel()
            )));
        }
        let bias = self.value(row).data();
        let mut data = self.value(m).data().to_vec();
        for i in 0..r {
            for (x, b) in data[i * c..(i + 1) * c].iter_mut().zip(bias) {
                *x += b;
            }
        }
        Ok(self.push(Tensor::from_parts(vec![r, c], data), Op::AddRow(m, row)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).map(|x| x * s);
        self.push(value, Op::Scale(a, s))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(relu);
        self.push(value, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        self.push(value, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        self.push(value, Op::Tanh(a))
    }

    /// Horizontal concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("concat of nothing"))?;
        let rows = self.dims(*first).0;
        if parts.iter().any(|&p| self.dims(p).0 != rows) {
            return Err(Error::invalid("concat: row counts differ"));
        }
        let total: usize = parts.iter().map(|&p| self.dims(p).1).sum();
        let mut data = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        Ok(self.push(
            Tensor::from_parts(vec![rows, total], data),
            Op::ConcatCols(parts.to_vec()),
        ))
    }

    fn check_edges(&self, input_rows: usize, edges: &EdgeIndex) -> Result<()> {
        if input_rows != edges.num_nodes() {
            return Err(Error::invalid(format!(
                "edge index covers {} nodes but input has {input_rows} rows",
                edges.num_nodes()
            )));
        }
        Ok(())
    }

    /// Constant-coefficient neighborhood sum.
    pub fn aggregate(
        &mut self,
        input: Var,
        edges: Arc<EdgeIndex>,
        coeffs: Arc<Vec<f64>>,
    ) -> Result<Var> {
        let (n, c) = self.dims(input);
        self.check_edges(n, &edges)?;
        if coeffs.len() != edges.num_edges() {
            return Err(Error::invalid("one coefficient per edge required"));
        }
        let x = self.value(input);
        let mut out = vec![0.0; n * c];
        let mut terms = Vec::new();
        for u in 0..n {
            for j in 0..c {
                terms.clear();
                terms.extend(edges.segment(u).map(|e| coeffs[e] * x.get(edges.src(e), j)));
                out[u * c + j] = canonical_sum(&mut terms);
            }
        }
        Ok(self.push(
            Tensor::from_parts(vec![n, c], out),
            Op::Aggregate {
                input,
                edges,
                coeffs,
            },
        ))
    }

    /// Per-edge additive score from an `n × 2` table: column 0 scores the
    /// receiving node, column 1 the sending node.
    pub fn edge_score(&mut self, pair: Var, edges: Arc<EdgeIndex>) -> Result<Var> {
        let (n, c) = self.dims(pair);
        self.check_edges(n, &edges)?;
        if c != 2 {
            return Err(Error::invalid("edge score needs an n x 2 input"));
        }
        let p = self.value(pair);
        let data: Vec<f64> = (0..edges.num_edges())
            .map(|e| p.get(edges.dst(e), 0) + p.get(edges.src(e), 1))
            .collect();
        if data.is_empty() {
            return Err(Error::invalid("edge score over an empty edge set"));
        }
        Ok(self.push(
            Tensor::from_parts(vec![data.len(), 1], data),
            Op::EdgeScore { pair, edges },
        ))
    }

    /// Softmax over the edges of each destination node.
    pub fn segment_softmax(&mut self, input: Var, edges: Arc<EdgeIndex>) -> Result<Var> {
        if self.value(input).numel() < edges.num_edges() {
            return Err(Error::invalid("segment softmax: fewer scores than edges"));
        }
        let x = self.value(input).data();
        let mut out = vec![0.0; self.value(input).numel()];
        let mut terms = Vec::new();
        for u in 0..edges.num_nodes() {
            let seg = edges.segment(u);
            if seg.is_empty() {
                continue;
            }
            let max = x[seg.clone()]
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max);
            terms.clear();
            terms.extend(x[seg.clone()].iter().map(|&s| (s - max).exp()));
            let denom = canonical_sum(&mut terms);
            for e in seg {
                out[e] = (x[e] - max).exp() / denom;
            }
        }
        let shape = self.value(input).shape().to_vec();
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::SegmentSoftmax { input, edges },
        ))
    }

    /// Neighborhood sum with per-edge weights recorded on the tape.
    pub fn weighted_aggregate(
        &mut self,
        weights: Var,
        input: Var,
        edges: Arc<EdgeIndex>,
    ) -> Result<Var> {
        let (n, c) = self.dims(input);
        self.check_edges(n, &edges)?;
        if self.value(weights).numel() < edges.num_edges() {
            return Err(Error::invalid(
                "weighted aggregate: fewer weights than edges",
            ));
        }
        let w = self.value(weights).data();
        let x = self.value(input);
        let mut out = vec![0.0; n * c];
        let mut terms = Vec::new();
        for u in 0..n {
            for j in 0..c {
                terms.clear();
                terms.extend(edges.segment(u).map(|e| w[e] * x.get(edges.src(e), j)));
                out[u * c + j] = canonical_sum(&mut terms);
            }
        }
        Ok(self.push(
            Tensor::from_parts(vec![n, c], out),
            Op::WeightedAggregate {
                weights,
                input,
                edges,
            },
        ))
    }

    /// Summed negative log-likelihood of `targets` under row-wise softmax of
    /// `logits`, via max-subtracted log-sum-exp.
    pub fn nll_sum(&mut self, logits: Var, targets: Arc<Vec<usize>>) -> Result<Var> {
        let (n, k) = self.dims(logits);
        if targets.len() != n {
            return Err(Error::invalid(format!(
                "{} targets for {n} rows",
                targets.len()
            )));
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= k) {
            return Err(Error::invalid(format!(
                "target class {t} out of range 0..{k}"
            )));
        }
        let x = self.value(logits);
        let loss: f64 = (0..n)
            .map(|u| super::tensor::log_sum_exp(x.row(u)) - x.get(u, targets[u]))
            .sum();
        Ok(self.push(
            Tensor::from_parts(vec![1], vec![loss.max(0.0)]),
            Op::NllSum { logits, targets },
        ))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(Error::invalid("backward needs a scalar loss"));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        adj[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            self.propagate(&node.op, &node.value, &g, &mut adj);
            adj[i] = Some(g);
        }

        let shapes = self
            .nodes
            .iter()
            .map(|n| n.value.shape().to_vec())
            .collect();
        Ok(Gradients { adj, shapes })
    }

    fn propagate(&self, op: &Op, out: &Tensor, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let mut acc = |v: Var, delta: &[f64]| {
            let slot = adj[v.0].get_or_insert_with(|| vec![0.0; delta.len()]);
            for (s, d) in slot.iter_mut().zip(delta) {
                *s += d;
            }
        };
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, n) = self.dims(*a);
                let p = self.dims(*b).1;
                acc(*a, &mm_nt(g, self.value(*b).data(), m, p, n));
                acc(*b, &mm_tn(self.value(*a).data(), g, m, n, p));
            }
            Op::MatMulNt(a, b) => {
                let (m, n) = self.dims(*a);
                let p = self.dims(*b).0;
                acc(*a, &mm(g, self.value(*b).data(), m, p, n));
                acc(*b, &mm_tn(g, self.value(*a).data(), m, p, n));
            }
            Op::Add(a, b) => {
                acc(*a, g);
                acc(*b, g);
            }
            Op::Sub(a, b) => {
                acc(*a, g);
                let neg: Vec<f64> = g.iter().map(|x| -x).collect();
                acc(*b, &neg);
            }
            Op::Mul(a, b) => {
                let (x, y) = (self.value(*a).data(), self.value(*b).data());
                let ga: Vec<f64> = g.iter().zip(y).map(|(g, y)| g * y).collect();
                let gb: Vec<f64> = g.iter().zip(x).map(|(g, x)| g * x).collect();
                acc(*a, &ga);
                acc(*b, &gb);
            }
            Op::AddRow(m, row) => {
                acc(*m, g);
                let c = self.dims(*m).1;
                let mut gb = vec![0.0; c];
                for chunk in g.chunks(c) {
                    for (s, x) in gb.iter_mut().zip(chunk) {
                        *s += x;
                    }
                }
                acc(*row, &gb);
            }
            Op::Scale(a, s) => {
                let ga: Vec<f64> = g.iter().map(|x| x * s).collect();
                acc(*a, &ga);
            }
            Op::Relu(a) => {
                let x = self.value(*a).data();
                let ga: Vec<f64> = g
                    .iter()
                    .zip(x)
                    .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                    .collect();
                acc(*a, &ga);
            }
            Op::Sigmoid(a) => {
                let ga: Vec<f64> = g
                    .iter()
                    .zip(out.data())
                    .map(|(g, y)| g * y * (1.0 - y))
                    .collect();
                acc(*a, &ga);
            }
            Op::Tanh(a) => {
                let ga: Vec<f64> = g
                    .iter()
                    .zip(out.data())
                    .map(|(g, y)| g * (1.0 - y * y))
                    .collect();
                acc(*a, &ga);
            }
            Op::ConcatCols(parts) => {
                let (rows, total) = out.dims2();
                let mut offset = 0;
                for &p in parts {
                    let c = self.dims(p).1;
                    let mut gp = Vec::with_capacity(rows * c);
                    for i in 0..rows {
                        gp.extend_from_slice(&g[i * total + offset..i * total + offset + c]);
                    }
                    acc(p, &gp);
                    offset += c;
                }
            }
            Op::Aggregate {
                input,
                edges,
                coeffs,
            } => {
                let (n, c) = self.dims(*input);
                let mut gi = vec![0.0; n * c];
                for e in 0..edges.num_edges() {
                    let (s, d) = (edges.src(e), edges.dst(e));
                    for j in 0..c {
                        gi[s * c + j] += coeffs[e] * g[d * c + j];
                    }
                }
                acc(*input, &gi);
            }
            Op::EdgeScore { pair, edges } => {
                let n = self.dims(*pair).0;
                let mut gp = vec![0.0; n * 2];
                for e in 0..edges.num_edges() {
                    gp[edges.dst(e) * 2] += g[e];
                    gp[edges.src(e) * 2 + 1] += g[e];
                }
                acc(*pair, &gp);
            }
            Op::SegmentSoftmax { input, edges } => {
                let y = out.data();
                let mut gi = vec![0.0; y.len()];
                for u in 0..edges.num_nodes() {
                    let seg = edges.segment(u);
                    let dot: f64 = seg.clone().map(|e| y[e] * g[e]).sum();
                    for e in seg {
                        gi[e] = y[e] * (g[e] - dot);
                    }
                }
                acc(*input, &gi);
            }
            Op::WeightedAggregate {
                weights,
                input,
                edges,
            } => {
                let (n, c) = self.dims(*input);
                let w = self.value(*weights).data();
                let x = self.value(*input);
                let mut gw = vec![0.0; self.value(*weights).numel()];
                let mut gi = vec![0.0; n * c];
                for e in 0..edges.num_edges() {
                    let (s, d) = (edges.src(e), edges.dst(e));
                    let grow = &g[d * c..(d + 1) * c];
                    gw[e] = grow.iter().zip(x.row(s)).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        gi[s * c + j] += w[e] * grow[j];
                    }
                }
                acc(*weights, &gw);
                acc(*input, &gi);
            }
            Op::NllSum { logits, targets } => {
                let x = self.value(*logits);
                let (n, k) = x.dims2();
                let mut gl = Vec::with_capacity(n * k);
                for u in 0..n {
                    let mut p = softmax_slice(x.row(u));
                    p[targets[u]] -= 1.0;
                    gl.extend(p.into_iter().map(|v| v * g[0]));
                }
                acc(*logits, &gl);
            }
        }
    }
}

/// Adjoints produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    adj: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient with respect to `v`, or zeros when the loss does not depend on it.
    pub fn wrt(&self, v: Var) -> Tensor {
        let shape = self.shapes[v.0].clone();
        match self.adj.get(v.0).and_then(Option::as_ref) {
            Some(g) => Tensor::from_parts(shape, g.clone()),
            None => Tensor::zeros(&shape),
        }
    }
}
