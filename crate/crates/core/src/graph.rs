//! Tables, the label vocabulary, and the complete column graphs built from them.
//!
//! Each table becomes a graph with one node per column and an edge between
//! every pair of columns. Node states start as the base predictor's raw
//! logits. Self loops are not stored; layers add the self term themselves.

use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{EdgeIndex, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub values: Vec<String>,
    pub label: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub table_id: String,
    pub columns: Vec<Column>,
}

impl Table {
    pub fn num_columns(&self) -> usize {
        self.columns.len()
    }

    pub fn is_fully_labeled(&self) -> bool {
        self.columns.iter().all(|c| c.label.is_some())
    }
}

/// Reads one table per line. Blank lines are skipped; line numbers in errors
/// are 1-based.
pub fn read_tables<R: BufRead>(reader: R) -> Result<Vec<Table>> {
    let mut tables = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = i + 1;
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        let text = if line_no == 1 {
            text.trim_start_matches('\u{feff}')
        } else {
            text
        };
        let table: Table = serde_json::from_str(text).map_err(|e| Error::Format {
            line: line_no,
            message: e.to_string(),
        })?;
        if table.columns.is_empty() {
            return Err(Error::Format {
                line: line_no,
                message: format!("table {:?} has no columns", table.table_id),
            });
        }
        tables.push(table);
    }
    Ok(tables)
}

pub fn write_tables<W: Write>(mut writer: W, tables: &[Table]) -> Result<()> {
    for t in tables {
        serde_json::to_writer(&mut writer, t)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// Bijection between semantic type names and class indices `0..k`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelVocab {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl LabelVocab {
    pub fn new(names: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(names.len());
        for (i, n) in names.iter().enumerate() {
            if index.insert(n.clone(), i).is_some() {
                return Err(Error::invalid(format!(
                    "duplicate label {n:?} in vocabulary"
                )));
            }
        }
        Ok(Self { names, index })
    }

    /// Sorted distinct gold labels of `tables`.
    pub fn from_tables(tables: &[Table]) -> Self {
        let names: BTreeSet<&str> = tables
            .iter()
            .flat_map(|t| t.columns.iter().filter_map(|c| c.label.as_deref()))
            .collect();
        Self::new(names.into_iter().map(String::from).collect()).expect("labels are distinct")
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, index: usize) -> &str {
        &self.names[index]
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownLabel {
                label: name.to_string(),
            })
    }
}

impl Serialize for LabelVocab {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.names.serialize(s)
    }
}

impl<'de> Deserialize<'de> for LabelVocab {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let names = Vec::<String>::deserialize(d)?;
        LabelVocab::new(names).map_err(serde::de::Error::custom)
    }
}

/// Complete graph over a table's columns.
#[derive(Clone, Debug, PartialEq)]
pub struct ColumnGraph {
    pub table_id: String,
    neighbors: Vec<Vec<usize>>,
    init: Tensor,
    gold: Vec<Option<usize>>,
}

impl ColumnGraph {
    pub fn num_nodes(&self) -> usize {
        self.neighbors.len()
    }

    pub fn num_classes(&self) -> usize {
        self.init.cols()
    }

    pub fn neighbors(&self, u: usize) -> &[usize] {
        &self.neighbors[u]
    }

    /// Initial node states, one row of `k` logits per column.
    pub fn init(&self) -> &Tensor {
        &self.init
    }

    pub fn gold(&self) -> &[Option<usize>] {
        &self.gold
    }

    pub fn is_fully_labeled(&self) -> bool {
        self.gold.iter().all(Option::is_some)
    }

    /// Same graph with node states replaced, e.g. for perturbation studies.
    pub fn with_init(&self, init: Tensor) -> Result<Self> {
        if init.shape() != self.init.shape() {
            return Err(Error::invalid("replacement states must keep the shape"));
        }
        Ok(Self {
            init,
            ..self.clone()
        })
    }

    /// Relabels nodes so that new node `i` is old node `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.num_nodes();
        let mut seen = vec![false; n];
        if perm.len() != n
            || perm
                .iter()
                .any(|&p| p >= n || std::mem::replace(&mut seen[p], true))
        {
            return Err(Error::invalid("not a permutation of the nodes"));
        }
        let rows: Vec<Vec<f64>> = perm.iter().map(|&p| self.init.row(p).to_vec()).collect();
        Ok(Self {
            table_id: self.table_id.clone(),
            neighbors: complete_neighbors(n),
            init: Tensor::from_rows(&rows)?,
            gold: perm.iter().map(|&p| self.gold[p]).collect(),
        })
    }
}

fn complete_neighbors(n: usize) -> Vec<Vec<usize>> {
    (0..n)
        .map(|u| (0..n).filter(|&v| v != u).collect())
        .collect()
}

/// Builds the complete column graph of `table` with states initialized to
/// the given per-column logits.
pub fn build_graph(table: &Table, logits: &[Vec<f64>], vocab: &LabelVocab) -> Result<ColumnGraph> {
    let n = table.num_columns();
    if n == 0 {
        return Err(Error::invalid(format!(
            "table {:?} has no columns",
            table.table_id
        )));
    }
    if logits.len() != n {
        return Err(Error::invalid(format!(
            "table {:?}: {} logits vectors for {n} columns",
            table.table_id,
            logits.len()
        )));
    }
    let k = vocab.len();
    if let Some((i, l)) = logits.iter().enumerate().find(|(_, l)| l.len() != k) {
        return Err(Error::invalid(format!(
            "table {:?} column {i}: {} logits, vocabulary has {k} classes",
            table.table_id,
            l.len()
        )));
    }
    let gold = table
        .columns
        .iter()
        .map(|c| c.label.as_deref().map(|l| vocab.index_of(l)).transpose())
        .collect::<Result<Vec<_>>>()?;
    Ok(ColumnGraph {
        table_id: table.table_id.clone(),
        neighbors: complete_neighbors(n),
        init: Tensor::from_rows(logits)?,
        gold,
    })
}

/// Where one member graph sits inside a batch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BatchMember {
    pub table_id: String,
    pub offset: usize,
    pub num_nodes: usize,
}

/// Disjoint union of column graphs with globally renumbered nodes.
#[derive(Clone, Debug)]
pub struct GraphBatch {
    members: Vec<BatchMember>,
    neighbors: Vec<Vec<usize>>,
    init: Tensor,
    gold: Vec<Option<usize>>,
    with_self: Arc<EdgeIndex>,
    without_self: Arc<EdgeIndex>,
}

pub fn batch_graphs<'a, I>(graphs: I) -> Result<GraphBatch>
where
    I: IntoIterator<Item = &'a ColumnGraph>,
{
    let mut members = Vec::new();
    let mut neighbors = Vec::new();
    let mut rows: Vec<f64> = Vec::new();
    let mut gold = Vec::new();
    let mut k = None;
    for g in graphs {
        let gk = g.num_classes();
        if *k.get_or_insert(gk) != gk {
            return Err(Error::invalid(format!(
                "graph {:?} has {gk} classes, batch has {}",
                g.table_id,
                k.unwrap()
            )));
        }
        let offset = neighbors.len();
        members.push(BatchMember {
            table_id: g.table_id.clone(),
            offset,
            num_nodes: g.num_nodes(),
        });
        neighbors.extend(
            g.neighbors
                .iter()
                .map(|l| l.iter().map(|v| v + offset).collect()),
        );
        rows.extend_from_slice(g.init.data());
        gold.extend_from_slice(&g.gold);
    }
    let Some(k) = k else {
        return Err(Error::invalid("cannot batch an empty list of graphs"));
    };
    let n = neighbors.len();
    Ok(GraphBatch {
        members,
        with_self: Arc::new(EdgeIndex::from_neighbors(&neighbors, true)),
        without_self: Arc::new(EdgeIndex::from_neighbors(&neighbors, false)),
        neighbors,
        init: Tensor::matrix(n, k, rows)?,
        gold,
    })
}

impl GraphBatch {
    pub fn single(graph: &ColumnGraph) -> Self {
        batch_graphs([graph]).expect("a single graph always batches")
    }

    pub fn num_nodes(&self) -> usize {
        self.neighbors.len()
    }

    pub fn num_classes(&self) -> usize {
        self.init.cols()
    }

    pub fn members(&self) -> &[BatchMember] {
        &self.members
    }

    pub fn neighbors(&self, u: usize) -> &[usize] {
        &self.neighbors[u]
    }

    pub fn init(&self) -> &Tensor {
        &self.init
    }

    pub fn gold(&self) -> &[Option<usize>] {
        &self.gold
    }

    /// Gold classes of every node, or an error naming the first unlabeled one.
    pub fn require_gold(&self) -> Result<Vec<usize>> {
        self.gold
            .iter()
            .enumerate()
            .map(|(u, g)| {
                g.ok_or_else(|| {
                    let (m, col) = self.locate(u);
                    Error::invalid(format!(
                        "table {:?} column {col} has no gold label",
                        self.members[m].table_id
                    ))
                })
            })
            .collect()
    }

    /// (member index, column index) of a global node.
    pub fn locate(&self, u: usize) -> (usize, usize) {
        let m = self.members.partition_point(|mem| mem.offset <= u) - 1;
        (m, u - self.members[m].offset)
    }

    /// Incoming edges over N(u) ∪ {u}.
    pub fn edges_with_self(&self) -> Arc<EdgeIndex> {
        self.with_self.clone()
    }

    /// Incoming edges over N(u).
    pub fn edges_without_self(&self) -> Arc<EdgeIndex> {
        self.without_self.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(id: &str, labels: &[Option<&str>]) -> Table {
        Table {
            table_id: id.into(),
            columns: labels
                .iter()
                .map(|l| Column {
                    values: vec!["x".into()],
                    label: l.map(String::from),
                })
                .collect(),
        }
    }

    fn vocab() -> LabelVocab {
        LabelVocab::new(vec!["a".into(), "b".into()]).unwrap()
    }

    #[test]
    fn three_columns_make_a_triangle() {
        let t = table("t", &[Some("a"), Some("b"), Some("a")]);
        let g = build_graph(&t, &vec![vec![0.0, 0.0]; 3], &vocab()).unwrap();
        assert_eq!(g.num_nodes(), 3);
        for u in 0..3 {
            assert_eq!(g.neighbors(u).len(), 2);
            assert!(!g.neighbors(u).contains(&u));
            for &v in g.neighbors(u) {
                assert!(g.neighbors(v).contains(&u));
            }
        }
        assert_eq!(g.gold(), &[Some(0), Some(1), Some(0)]);
    }

    #[test]
    fn single_column_has_no_neighbors() {
        let g = build_graph(&table("t", &[None]), &[vec![1.0, 2.0]], &vocab()).unwrap();
        assert_eq!(g.num_nodes(), 1);
        assert!(g.neighbors(0).is_empty());
        assert!(!g.is_fully_labeled());
    }

    #[test]
    fn init_is_the_raw_logits() {
        let t = table("t", &[Some("a"), Some("b")]);
        let g = build_graph(&t, &[vec![1.0, 0.0], vec![0.0, 1.0]], &vocab()).unwrap();
        assert_eq!(g.init().row(0), &[1.0, 0.0]);
        assert_eq!(g.init().row(1), &[0.0, 1.0]);
    }

    #[test]
    fn build_errors() {
        let t = table("t", &[Some("a"), Some("b")]);
        assert!(matches!(
            build_graph(&t, &[vec![0.0, 0.0]], &vocab()),
            Err(Error::InvalidInput(_))
        ));
        assert!(matches!(
            build_graph(&t, &[vec![0.0; 3], vec![0.0; 3]], &vocab()),
            Err(Error::InvalidInput(_))
        ));
        let t = table("t", &[Some("zebra")]);
        match build_graph(&t, &[vec![0.0, 0.0]], &vocab()) {
            Err(Error::UnknownLabel { label }) => assert_eq!(label, "zebra"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn batching_is_block_diagonal() {
        let v = vocab();
        let g1 = build_graph(
            &table("x", &[Some("a"), Some("b")]),
            &[vec![1.0, 0.0], vec![0.0, 1.0]],
            &v,
        )
        .unwrap();
        let g2 = build_graph(
            &table("y", &[Some("b"), Some("a")]),
            &[vec![2.0, 0.0], vec![0.0, 2.0]],
            &v,
        )
        .unwrap();
        let b = batch_graphs([&g1, &g2]).unwrap();
        assert_eq!(b.num_nodes(), 4);
        assert_eq!(b.neighbors(0), &[1]);
        assert_eq!(b.neighbors(1), &[0]);
        assert_eq!(b.neighbors(2), &[3]);
        assert_eq!(b.neighbors(3), &[2]);
        assert_eq!(b.locate(3), (1, 1));
        assert_eq!(b.init().row(2), &[2.0, 0.0]);
        assert_eq!(b.require_gold().unwrap(), vec![0, 1, 1, 0]);
        assert_eq!(b.edges_with_self().num_edges(), 8);
        assert_eq!(b.edges_without_self().num_edges(), 4);
    }

    #[test]
    fn batching_errors() {
        assert!(batch_graphs(std::iter::empty()).is_err());
        let g1 = build_graph(&table("x", &[None]), &[vec![0.0, 0.0]], &vocab()).unwrap();
        let v3 = LabelVocab::new(vec!["a".into(), "b".into(), "c".into()]).unwrap();
        let g2 = build_graph(&table("y", &[None]), &[vec![0.0; 3]], &v3).unwrap();
        assert!(batch_graphs([&g1, &g2]).is_err());
        assert!(GraphBatch::single(&g1).require_gold().is_err());
    }

    #[test]
    fn jsonl_round_trip_and_errors() {
        let tables = vec![table("t1", &[Some("a"), None]), table("t2", &[Some("b")])];
        let mut buf = Vec::new();
        write_tables(&mut buf, &tables).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.contains("\"label\":null"));
        assert_eq!(read_tables(buf.as_slice()).unwrap(), tables);

        let bad = b"{\"table_id\":\"a\",\"columns\":[{\"values\":[],\"label\":null}]}\n{oops}\n";
        match read_tables(&bad[..]) {
            Err(Error::Format { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        let empty = b"{\"table_id\":\"a\",\"columns\":[]}\n";
        assert!(matches!(
            read_tables(&empty[..]),
            Err(Error::Format { line: 1, .. })
        ));
    }

    #[test]
    fn vocab_bijection() {
        let tables = vec![table("t", &[Some("b"), Some("a"), None, Some("b")])];
        let v = LabelVocab::from_tables(&tables);
        assert_eq!(v.names(), &["a", "b"]);
        for i in 0..v.len() {
            assert_eq!(v.index_of(v.name(i)).unwrap(), i);
        }
        assert!(LabelVocab::new(vec!["a".into(), "a".into()]).is_err());
        let json = serde_json::to_string(&v).unwrap();
        assert_eq!(serde_json::from_str::<LabelVocab>(&json).unwrap(), v);
    }

    #[test]
    fn permutation_reorders_rows() {
        let t = table("t", &[Some("a"), Some("b"), None]);
        let g = build_graph(
            &t,
            &[vec![1.0, 0.0], vec![2.0, 0.0], vec![3.0, 0.0]],
            &vocab(),
        )
        .unwrap();
        let p = g.permuted(&[2, 0, 1]).unwrap();
        assert_eq!(p.init().row(0), &[3.0, 0.0]);
        assert_eq!(p.gold(), &[None, Some(0), Some(1)]);
        assert!(g.permuted(&[0, 0, 1]).is_err());
    }
}
