//! Attributed undirected graphs, split masks, and the aggregation
//! operators used by the detector's two branches.

mod bundle;

pub use bundle::{load_bundle, save_bundle};

use crate::error::{Error, Result};
use crate::tensorcore::{SparseMatrix, Tensor};

/// Train/validation/test membership, one flag triple per node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Masks {
    pub train: Vec<bool>,
    pub val: Vec<bool>,
    pub test: Vec<bool>,
}

impl Masks {
    pub fn empty(n: usize) -> Masks {
        Masks {
            train: vec![false; n],
            val: vec![false; n],
            test: vec![false; n],
        }
    }
}

/// An undirected attributed graph with optional binary anomaly labels.
///
/// Validated once at construction and immutable afterwards. Stored
/// adjacency is symmetric with no self-loops; self-loops enter only
/// through [`sym_normalize`].
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    adjacency: SparseMatrix,
    features: Tensor,
    labels: Option<Vec<u8>>,
    masks: Masks,
    unseen_flags: Vec<bool>,
}

impl Graph {
    /// Builds a graph, checking every structural invariant:
    /// symmetric adjacency without self-loops, consistent lengths,
    /// binary labels, pairwise-disjoint masks covering every node
    /// exactly once when labels are present, unseen nodes labeled
    /// normal and absent from the train split.
    pub fn new(
        adjacency: SparseMatrix,
        features: Tensor,
        labels: Option<Vec<u8>>,
        masks: Masks,
        unseen_flags: Vec<bool>,
    ) -> Result<Graph> {
        let n = adjacency.n();
        if features.rows() != n {
            return Err(Error::InvalidGraph(format!(
                "{} feature rows for {} nodes",
                features.rows(),
                n
            )));
        }
        if !adjacency.is_symmetric() {
            return Err(Error::InvalidGraph("adjacency is not symmetric".into()));
        }
        for i in 0..n {
            if adjacency.get(i, i).is_some() {
                return Err(Error::InvalidGraph(format!("self-loop stored at node {}", i)));
            }
        }
        if let Some(y) = &labels {
            if y.len() != n {
                return Err(Error::InvalidGraph(format!("{} labels for {} nodes", y.len(), n)));
            }
            if let Some(i) = y.iter().position(|&v| v > 1) {
                return Err(Error::InvalidGraph(format!("label {} at node {} outside {{0,1}}", y[i], i)));
            }
        }
        if masks.train.len() != n || masks.val.len() != n || masks.test.len() != n {
            return Err(Error::InvalidGraph("mask length differs from node count".into()));
        }
        if unseen_flags.len() != n {
            return Err(Error::InvalidGraph("unseen flag length differs from node count".into()));
        }
        for i in 0..n {
            let memberships = masks.train[i] as u8 + masks.val[i] as u8 + masks.test[i] as u8;
            if memberships > 1 {
                return Err(Error::InvalidGraph(format!("node {} is in more than one split", i)));
            }
            if labels.is_some() && memberships == 0 {
                return Err(Error::InvalidGraph(format!("labeled node {} is in no split", i)));
            }
            if unseen_flags[i] {
                if let Some(y) = &labels {
                    if y[i] == 1 {
                        return Err(Error::InvalidGraph(format!("unseen node {} is labeled anomalous", i)));
                    }
                }
                if masks.train[i] {
                    return Err(Error::InvalidGraph(format!("unseen node {} is in the train split", i)));
                }
            }
        }
        Ok(Graph { adjacency, features, labels, masks, unseen_flags })
    }

    pub fn n(&self) -> usize {
        self.adjacency.n()
    }

    pub fn adjacency(&self) -> &SparseMatrix {
        &self.adjacency
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> Option<&[u8]> {
        self.labels.as_deref()
    }

    /// Labels, or [`Error::LabelsRequired`] on an unlabeled graph.
    pub fn require_labels(&self) -> Result<&[u8]> {
        self.labels.as_deref().ok_or(Error::LabelsRequired)
    }

    pub fn masks(&self) -> &Masks {
        &self.masks
    }

    pub fn unseen_flags(&self) -> &[bool] {
        &self.unseen_flags
    }

    pub fn degree(&self, node: usize) -> usize {
        self.adjacency.row_len(node)
    }

    /// Number of stored directed arcs; twice the undirected edge count.
    pub fn arc_count(&self) -> usize {
        self.adjacency.nnz()
    }

    /// A copy with different features, everything else shared. The new
    /// features must keep the old shape.
    pub fn with_features(&self, features: Tensor) -> Result<Graph> {
        if features.shape() != self.features.shape() {
            return Err(Error::InvalidGraph(format!(
                "replacement features are {:?}, graph holds {:?}",
                features.shape(),
                self.features.shape()
            )));
        }
        Ok(Graph { features, ..self.clone() })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatorKind {
    NormalizedAdjacency,
    Identity,
}

/// The message-passing matrix an encoder layer multiplies by: either
/// the normalized adjacency or its identity replacement.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregationOperator {
    kind: OperatorKind,
    matrix: SparseMatrix,
}

impl AggregationOperator {
    pub fn kind(&self) -> OperatorKind {
        self.kind
    }

    pub fn matrix(&self) -> &SparseMatrix {
        &self.matrix
    }
}

/// Symmetrically normalized adjacency with self-loops,
/// `D^{-1/2} (A + I) D^{-1/2}` with degrees taken from `A + I`.
/// Isolated nodes come out with a lone self-loop entry of 1.
pub fn sym_normalize(g: &Graph) -> AggregationOperator {
    let a = g.adjacency();
    let n = a.n();
    let mut degree = vec![1.0; n];
    for i in 0..n {
        for (_, v) in a.row(i) {
            degree[i] += v;
        }
    }
    // v / sqrt(d_i * d_j) rather than v * d_i^{-1/2} * d_j^{-1/2}:
    // one rounding instead of three, and exactly symmetric.
    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut col_idx = Vec::with_capacity(a.nnz() + n);
    let mut values = Vec::with_capacity(a.nnz() + n);
    row_ptr.push(0);
    for i in 0..n {
        let mut self_loop_placed = false;
        for (j, v) in a.row(i) {
            if !self_loop_placed && j > i {
                col_idx.push(i);
                values.push(1.0 / degree[i]);
                self_loop_placed = true;
            }
            col_idx.push(j);
            values.push(v / (degree[i] * degree[j]).sqrt());
        }
        if !self_loop_placed {
            col_idx.push(i);
            values.push(1.0 / degree[i]);
        }
        row_ptr.push(col_idx.len());
    }
    let matrix = SparseMatrix::new(n, row_ptr, col_idx, values)
        .expect("normalized adjacency built from a valid graph is valid");
    AggregationOperator { kind: OperatorKind::NormalizedAdjacency, matrix }
}

/// The aggregation-free replacement operator: multiplication by it
/// returns its input bit-for-bit, whatever the edge set was.
pub fn identity_operator(n: usize) -> AggregationOperator {
    AggregationOperator { kind: OperatorKind::Identity, matrix: SparseMatrix::identity(n) }
}

/// Fraction of a node's 1-hop neighbors that carry the unseen flag;
/// 0 for isolated nodes.
pub fn unseen_neighbor_fraction(g: &Graph, node: usize) -> Result<f64> {
    if node >= g.n() {
        return Err(Error::arg(
            "unseen_neighbor_fraction",
            format!("node {} out of range for {} nodes", node, g.n()),
        ));
    }
    let degree = g.degree(node);
    if degree == 0 {
        return Ok(0.0);
    }
    let unseen = g.adjacency().row(node).filter(|&(j, _)| g.unseen_flags()[j]).count();
    Ok(unseen as f64 / degree as f64)
}
