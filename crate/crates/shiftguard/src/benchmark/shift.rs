//! Normality-shift construction: decide which normal nodes count as
//! unseen, and carve the pre-shift graph out of the full one.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Masks};
use crate::tensorcore::{SparseMatrix, Tensor};

use super::kmeans::kmeans;

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum ShiftMethod {
    /// Cluster normal-node features; the smallest cluster becomes the
    /// unseen normals.
    KmeansHoldout,
    /// Multiclass relabeling: rare classes become anomalies, the
    /// largest remaining class becomes the unseen normals.
    ClassHoldout,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct ShiftSpec {
    pub method: ShiftMethod,
    /// Cluster count for [`ShiftMethod::KmeansHoldout`].
    pub num_clusters: usize,
    /// Strict upper bound on a class's node share for it to count as
    /// anomalous under [`ShiftMethod::ClassHoldout`].
    pub anomaly_class_threshold: f64,
}

impl Default for ShiftSpec {
    fn default() -> Self {
        ShiftSpec {
            method: ShiftMethod::KmeansHoldout,
            num_clusters: 3,
            anomaly_class_threshold: 0.05,
        }
    }
}

/// Flags the smallest feature cluster of the normal nodes as unseen and
/// moves those nodes into the test split. Nodes, edges, features, and
/// labels pass through untouched, so running it twice is a no-op after
/// the first.
pub fn construct_shift_kmeans(g: &Graph, spec: &ShiftSpec, seed: u64) -> Result<Graph> {
    if spec.method != ShiftMethod::KmeansHoldout {
        return Err(Error::arg("construct_shift_kmeans", "spec method is not kmeans_holdout"));
    }
    if spec.num_clusters < 2 {
        return Err(Error::InvalidConfig(format!(
            "num_clusters must be at least 2, got {}",
            spec.num_clusters
        )));
    }
    let labels = g.require_labels()?;
    let normal: Vec<usize> = (0..g.n()).filter(|&i| labels[i] == 0).collect();
    if normal.len() < spec.num_clusters {
        return Err(Error::arg(
            "construct_shift_kmeans",
            format!("{} normal nodes cannot form {} clusters", normal.len(), spec.num_clusters),
        ));
    }

    let rows: Vec<Vec<f64>> = normal.iter().map(|&i| g.features().row_slice(i).to_vec()).collect();
    let assignment = kmeans(&Tensor::from_rows(&rows)?, spec.num_clusters, seed)?;

    let mut sizes = vec![0usize; spec.num_clusters];
    for &c in &assignment {
        sizes[c] += 1;
    }
    // Smallest cluster, ties to the lowest cluster id. Every id can
    // appear here because k <= normal count leaves no empty cluster
    // only in the generic case; an empty cluster would win the tie and
    // flag nothing, so skip size-zero entries.
    let smallest = sizes
        .iter()
        .enumerate()
        .filter(|&(_, &s)| s > 0)
        .min_by_key(|&(c, &s)| (s, c))
        .map(|(c, _)| c)
        .expect("at least one non-empty cluster");

    let mut unseen = vec![false; g.n()];
    for (pos, &node) in normal.iter().enumerate() {
        unseen[node] = assignment[pos] == smallest;
    }

    let mut masks = g.masks().clone();
    for i in 0..g.n() {
        if unseen[i] {
            masks.train[i] = false;
            masks.val[i] = false;
            masks.test[i] = true;
        }
    }

    Graph::new(
        g.adjacency().clone(),
        g.features().detach(),
        Some(labels.to_vec()),
        masks,
        unseen,
    )
}

/// Converts a multiclass labeling into the anomaly-detection form:
/// classes holding strictly less than `anomaly_class_threshold` of all
/// nodes become anomalies (label 1), everything else is normal, and
/// the largest normal class (ties to the lowest class id) is flagged
/// unseen.
pub fn convert_imbalanced(class_labels: &[usize], spec: &ShiftSpec) -> Result<(Vec<u8>, Vec<bool>)> {
    if spec.method != ShiftMethod::ClassHoldout {
        return Err(Error::arg("convert_imbalanced", "spec method is not class_holdout"));
    }
    if !(spec.anomaly_class_threshold > 0.0 && spec.anomaly_class_threshold < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "anomaly_class_threshold must lie in (0, 1), got {}",
            spec.anomaly_class_threshold
        )));
    }
    if class_labels.is_empty() {
        return Err(Error::arg("convert_imbalanced", "empty label vector"));
    }

    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &c in class_labels {
        *counts.entry(c).or_insert(0) += 1;
    }
    if counts.len() < 2 {
        return Err(Error::arg("convert_imbalanced", "need at least two classes"));
    }

    let total = class_labels.len() as f64;
    let anomalous: Vec<usize> = counts
        .iter()
        .filter(|&(_, &count)| (count as f64) / total < spec.anomaly_class_threshold)
        .map(|(&class, _)| class)
        .collect();
    if anomalous.is_empty() {
        return Err(Error::arg("convert_imbalanced", "no class below threshold"));
    }
    if anomalous.len() == counts.len() {
        return Err(Error::arg("convert_imbalanced", "all classes below threshold"));
    }

    // Largest class among the normals; BTreeMap order means the lowest
    // class id wins ties via strict greater-than.
    let mut unseen_class = None;
    let mut best = 0usize;
    for (&class, &count) in &counts {
        if !anomalous.contains(&class) && count > best {
            best = count;
            unseen_class = Some(class);
        }
    }
    let unseen_class = unseen_class.expect("some class is normal");

    let labels: Vec<u8> = class_labels
        .iter()
        .map(|c| u8::from(anomalous.contains(c)))
        .collect();
    let unseen: Vec<bool> = class_labels.iter().map(|&c| c == unseen_class).collect();
    Ok((labels, unseen))
}

/// [`convert_imbalanced`] applied to a graph: replaces its labels,
/// flags the unseen class, and moves unseen nodes into the test split.
/// Every node must already sit in some split, since the relabeling
/// makes all of them labeled.
pub fn apply_class_holdout(g: &Graph, class_labels: &[usize], spec: &ShiftSpec) -> Result<Graph> {
    if class_labels.len() != g.n() {
        return Err(Error::shape(
            "apply_class_holdout",
            format!("{} class labels for {} nodes", class_labels.len(), g.n()),
        ));
    }
    for i in 0..g.n() {
        if !(g.masks().train[i] || g.masks().val[i] || g.masks().test[i]) {
            return Err(Error::InvalidGraph(format!(
                "node {} is in no split; class holdout needs a full split assignment",
                i
            )));
        }
    }
    let (labels, unseen) = convert_imbalanced(class_labels, spec)?;
    let mut masks = g.masks().clone();
    for i in 0..g.n() {
        if unseen[i] {
            masks.train[i] = false;
            masks.val[i] = false;
            masks.test[i] = true;
        }
    }
    Graph::new(g.adjacency().clone(), g.features().detach(), Some(labels), masks, unseen)
}

/// Induced subgraph on the non-unseen nodes, in their original order:
/// the deployment graph as it looked before the shift. Kept node `i`
/// of the result corresponds to the i-th non-unseen node of `g`.
pub fn remove_unseen(g: &Graph) -> Result<Graph> {
    let kept: Vec<usize> = (0..g.n()).filter(|&i| !g.unseen_flags()[i]).collect();
    let mut new_id = vec![usize::MAX; g.n()];
    for (new, &old) in kept.iter().enumerate() {
        new_id[old] = new;
    }

    let mut arcs = Vec::new();
    for (new_i, &old_i) in kept.iter().enumerate() {
        for (old_j, value) in g.adjacency().row(old_i) {
            if new_id[old_j] != usize::MAX {
                arcs.push((new_i, new_id[old_j], value));
            }
        }
    }
    let adjacency = SparseMatrix::from_triplets(kept.len(), &arcs)?;

    let rows: Vec<Vec<f64>> = kept.iter().map(|&i| g.features().row_slice(i).to_vec()).collect();
    let labels = g.labels().map(|l| kept.iter().map(|&i| l[i]).collect());
    let masks = Masks {
        train: kept.iter().map(|&i| g.masks().train[i]).collect(),
        val: kept.iter().map(|&i| g.masks().val[i]).collect(),
        test: kept.iter().map(|&i| g.masks().test[i]).collect(),
    };
    Graph::new(adjacency, Tensor::from_rows(&rows)?, labels, masks, vec![false; kept.len()])
}
