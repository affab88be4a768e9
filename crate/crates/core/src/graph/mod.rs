//! Graph topology, node data, and edge analytics.

mod perturb;
mod sbm;

use std::collections::BTreeSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub use perturb::{oracle_graph, perturb_inter_class, RATIO_TOLERANCE};
pub use sbm::{generate_sbm, SbmConfig};

/// Disjoint node sets used for training, model selection and evaluation.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Directed message index over an undirected graph, sorted by destination.
///
/// Every undirected edge `{i, j}` contributes the two messages `j → i` and
/// `i → j`; every node additionally receives one self-loop message. Self-loops
/// are never stored in the edge list.
#[derive(Clone, Debug, PartialEq)]
pub struct Adjacency {
    pub n_nodes: usize,
    pub src: Arc<[usize]>,
    pub dst: Arc<[usize]>,
    /// Undirected edge behind each message, `None` for self-loops.
    pub edge_of: Arc<[Option<usize>]>,
    /// Message range `offsets[i]..offsets[i + 1]` is node `i`'s inbox.
    pub offsets: Arc<[usize]>,
}

impl Adjacency {
    fn build(n_nodes: usize, edges: &[(usize, usize)]) -> Self {
        let mut inbox: Vec<Vec<(usize, Option<usize>)>> = vec![Vec::new(); n_nodes];
        for (e, &(i, j)) in edges.iter().enumerate() {
            inbox[i].push((j, Some(e)));
            inbox[j].push((i, Some(e)));
        }
        let total = 2 * edges.len() + n_nodes;
        let (mut src, mut dst, mut edge_of) = (
            Vec::with_capacity(total),
            Vec::with_capacity(total),
            Vec::with_capacity(total),
        );
        let mut offsets = Vec::with_capacity(n_nodes + 1);
        offsets.push(0);
        for (i, mut msgs) in inbox.into_iter().enumerate() {
            msgs.push((i, None));
            msgs.sort_unstable_by_key(|&(s, _)| s);
            for (s, e) in msgs {
                src.push(s);
                dst.push(i);
                edge_of.push(e);
            }
            offsets.push(src.len());
        }
        Self {
            n_nodes,
            src: src.into(),
            dst: dst.into(),
            edge_of: edge_of.into(),
            offsets: offsets.into(),
        }
    }

    pub fn n_messages(&self) -> usize {
        self.src.len()
    }

    pub fn is_self_loop(&self, k: usize) -> bool {
        self.edge_of[k].is_none()
    }

    /// Message ranges of node `i`'s inbox.
    pub fn inbox(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }
}

/// Per-message aggregation weights over a graph's [`Adjacency`].
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeWeights {
    pub values: Vec<f64>,
}

impl EdgeWeights {
    pub fn as_column(&self) -> Matrix {
        Matrix::from_shape_vec((self.values.len(), 1), self.values.clone()).expect("column shape")
    }

    /// `(dst, src, weight)` triples in message order.
    pub fn triples<'a>(
        &'a self,
        adj: &'a Adjacency,
    ) -> impl Iterator<Item = (usize, usize, f64)> + 'a {
        (0..adj.n_messages()).map(move |k| (adj.dst[k], adj.src[k], self.values[k]))
    }

    /// Sum of incoming weights per node.
    pub fn row_sums(&self, adj: &Adjacency) -> Vec<f64> {
        (0..adj.n_nodes)
            .map(|i| adj.inbox(i).map(|k| self.values[k]).sum())
            .collect()
    }
}

/// An undirected simple graph with node features, labels, and splits.
#[derive(Clone, Debug)]
pub struct Graph {
    n_nodes: usize,
    n_classes: usize,
    edges: Vec<(usize, usize)>,
    features: Matrix,
    labels: Vec<usize>,
    splits: Splits,
    adjacency: Adjacency,
}

impl Graph {
    /// Validates and canonicalizes a graph. Edges may come in either
    /// orientation and with duplicates; self-loops are dropped.
    pub fn new(
        n_nodes: usize,
        n_classes: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
        features: Matrix,
        labels: Vec<usize>,
        splits: Splits,
    ) -> Result<Self> {
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            if a >= n_nodes || b >= n_nodes {
                return Err(Error::InvalidGraph(format!(
                    "edge ({a}, {b}) references a node outside 0..{n_nodes}"
                )));
            }
            if a != b {
                set.insert((a.min(b), a.max(b)));
            }
        }
        if features.nrows() != n_nodes {
            return Err(Error::InvalidGraph(format!(
                "{} feature rows for {n_nodes} nodes",
                features.nrows()
            )));
        }
        if labels.len() != n_nodes {
            return Err(Error::InvalidGraph(format!(
                "{} labels for {n_nodes} nodes",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= n_classes) {
            return Err(Error::InvalidGraph(format!(
                "label {bad} outside 0..{n_classes}"
            )));
        }
        if splits.train.is_empty() {
            return Err(Error::InvalidGraph("training split is empty".into()));
        }
        let mut seen = vec![false; n_nodes];
        for &i in splits.train.iter().chain(&splits.val).chain(&splits.test) {
            if i >= n_nodes {
                return Err(Error::InvalidGraph(format!("split node {i} out of range")));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::InvalidGraph(format!(
                    "node {i} appears in more than one split slot"
                )));
            }
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidGraph("non-finite feature value".into()));
        }
        let edges: Vec<_> = set.into_iter().collect();
        let adjacency = Adjacency::build(n_nodes, &edges);
        Ok(Self {
            n_nodes,
            n_classes,
            edges,
            features,
            labels,
            splits,
            adjacency,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    /// Canonical undirected edges `(i, j)` with `i < j`, sorted.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn splits(&self) -> &Splits {
        &self.splits
    }

    pub fn adjacency(&self) -> &Adjacency {
        &self.adjacency
    }

    /// Number of neighbors, excluding the logical self-loop.
    pub fn degree(&self, i: usize) -> usize {
        self.adjacency.inbox(i).len() - 1
    }

    /// Nodes outside the training split.
    pub fn unlabeled(&self) -> Vec<usize> {
        let mut is_train = vec![false; self.n_nodes];
        for &i in &self.splits.train {
            is_train[i] = true;
        }
        (0..self.n_nodes).filter(|&i| !is_train[i]).collect()
    }

    /// Same nodes, features, labels and splits over a different edge set.
    pub fn with_edges(&self, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        Graph::new(
            self.n_nodes,
            self.n_classes,
            edges,
            self.features.clone(),
            self.labels.clone(),
            self.splits.clone(),
        )
    }

    pub fn with_features(&self, features: Matrix) -> Result<Self> {
        Graph::new(
            self.n_nodes,
            self.n_classes,
            self.edges.iter().copied(),
            features,
            self.labels.clone(),
            self.splits.clone(),
        )
    }
}

/// Symmetric-normalized GCN coefficients over every message, self-loops
/// included: `1 / sqrt((deg(i) + 1) * (deg(j) + 1))`.
pub fn laplacian_weights(g: &Graph) -> EdgeWeights {
    let adj = g.adjacency();
    let deg: Vec<f64> = (0..g.n_nodes()).map(|i| (g.degree(i) + 1) as f64).collect();
    EdgeWeights {
        values: (0..adj.n_messages())
            .map(|k| 1.0 / (deg[adj.dst[k]] * deg[adj.src[k]]).sqrt())
            .collect(),
    }
}

/// Fraction of edges whose endpoints carry different labels.
pub fn inter_class_ratio(g: &Graph, labels: &[usize]) -> Result<f64> {
    if labels.len() != g.n_nodes() {
        return Err(Error::Contract(format!(
            "{} labels for {} nodes",
            labels.len(),
            g.n_nodes()
        )));
    }
    if g.n_edges() == 0 {
        return Err(Error::UndefinedRatio);
    }
    Ok(count_inter_class(g.edges(), labels) as f64 / g.n_edges() as f64)
}

pub(crate) fn count_inter_class(edges: &[(usize, usize)], labels: &[usize]) -> usize {
    edges
        .iter()
        .filter(|&&(i, j)| labels[i] != labels[j])
        .count()
}
