//! Seeded synthetic benchmark: Gaussian feature clusters over a
//! stochastic block model, with one cluster reserved as the unseen
//! normals that emerge only at deployment time.
//!
//! Node layout is contiguous and fixed: seen clusters in config order,
//! then the unseen cluster, then the anomalies. Cluster centers sit on
//! distinct coordinate axes at distance `center_separation` from the
//! origin, so `feat_dim` must exceed the seen-cluster count. Anomalies
//! draw a sample near a random seen center, then overwrite an
//! `anomaly_mix` fraction of its dimensions with uniform noise spanning
//! `[-center_separation, 2 * center_separation]`.
//!
//! Everything is drawn from one ChaCha8 stream in a fixed order
//! (features, then edges block pair by block pair, then mask shuffles),
//! which is what makes the graph bit-reproducible for a given config.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Masks};
use crate::tensorcore::{SparseMatrix, Tensor};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct SynthConfig {
    /// Sizes of the seen-normal clusters, one entry per cluster.
    pub cluster_sizes: Vec<usize>,
    pub unseen_size: usize,
    pub anomaly_size: usize,
    pub feat_dim: usize,
    /// Per-dimension Gaussian spread around each cluster center.
    pub cluster_spread: f64,
    /// Distance from the origin to every cluster center.
    pub center_separation: f64,
    /// Edge probability inside a block.
    pub intra_p: f64,
    /// Edge probability across blocks.
    pub inter_p: f64,
    /// Fraction of feature dimensions resampled for each anomaly.
    pub anomaly_mix: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            cluster_sizes: vec![150, 150, 150],
            unseen_size: 150,
            anomaly_size: 60,
            feat_dim: 16,
            cluster_spread: 0.4,
            center_separation: 6.0,
            intra_p: 0.03,
            inter_p: 0.01,
            anomaly_mix: 0.5,
            seed: 0,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        if self.cluster_sizes.is_empty() {
            return Err(Error::InvalidConfig("at least one seen cluster required".into()));
        }
        if self.cluster_sizes.iter().any(|&s| s == 0) || self.unseen_size == 0 || self.anomaly_size == 0 {
            return Err(Error::InvalidConfig("all cluster, unseen, and anomaly sizes must be at least 1".into()));
        }
        if self.feat_dim <= self.cluster_sizes.len() {
            return Err(Error::InvalidConfig(format!(
                "feat_dim {} leaves no axis for the unseen cluster ({} seen clusters)",
                self.feat_dim,
                self.cluster_sizes.len()
            )));
        }
        if !(self.cluster_spread >= 0.0 && self.cluster_spread.is_finite()) {
            return Err(Error::InvalidConfig("cluster_spread must be finite and non-negative".into()));
        }
        if !(self.center_separation > 0.0 && self.center_separation.is_finite()) {
            return Err(Error::InvalidConfig("center_separation must be positive".into()));
        }
        for (name, p) in [("intra_p", self.intra_p), ("inter_p", self.inter_p)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidConfig(format!("{} must lie in [0, 1], got {}", name, p)));
            }
        }
        if !(0.0..=1.0).contains(&self.anomaly_mix) {
            return Err(Error::InvalidConfig(format!(
                "anomaly_mix must lie in [0, 1], got {}",
                self.anomaly_mix
            )));
        }
        Ok(())
    }

    pub fn num_nodes(&self) -> usize {
        self.cluster_sizes.iter().sum::<usize>() + self.unseen_size + self.anomaly_size
    }
}

pub fn synth_graph(cfg: &SynthConfig) -> Result<Graph> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.num_nodes();
    let d = cfg.feat_dim;
    let num_seen = cfg.cluster_sizes.len();

    // Blocks in node order: seen clusters, unseen cluster, anomalies.
    let mut blocks: Vec<(usize, usize)> = Vec::new();
    let mut offset = 0;
    for &size in &cfg.cluster_sizes {
        blocks.push((offset, size));
        offset += size;
    }
    let unseen_block = blocks.len();
    blocks.push((offset, cfg.unseen_size));
    offset += cfg.unseen_size;
    let anomaly_block = blocks.len();
    blocks.push((offset, cfg.anomaly_size));

    let center = |cluster: usize, dim: usize| -> f64 {
        if dim == cluster {
            cfg.center_separation
        } else {
            0.0
        }
    };

    let mut features = vec![0.0; n * d];
    let sample_near = |cluster: usize, row: &mut [f64], rng: &mut ChaCha8Rng| {
        for (dim, v) in row.iter_mut().enumerate() {
            let z: f64 = rand_distr::StandardNormal.sample(rng);
            *v = center(cluster, dim) + cfg.cluster_spread * z;
        }
    };
    for b in 0..=unseen_block {
        let (start, size) = blocks[b];
        for node in start..start + size {
            sample_near(b, &mut features[node * d..(node + 1) * d], &mut rng);
        }
    }
    let mix_count = ((cfg.anomaly_mix * d as f64).round() as usize).min(d);
    let (anomaly_start, _) = blocks[anomaly_block];
    for node in anomaly_start..n {
        let cluster = rng.random_range(0..num_seen);
        sample_near(cluster, &mut features[node * d..(node + 1) * d], &mut rng);
        let mut dims: Vec<usize> = (0..d).collect();
        for t in 0..mix_count {
            let pick = rng.random_range(t..d);
            dims.swap(t, pick);
        }
        for &dim in &dims[..mix_count] {
            features[node * d + dim] =
                cfg.center_separation * (3.0 * rng.random::<f64>() - 1.0);
        }
    }

    let mut arcs: Vec<(usize, usize, f64)> = Vec::new();
    for a in 0..blocks.len() {
        for b in a..blocks.len() {
            let p = if a == b { cfg.intra_p } else { cfg.inter_p };
            let (a_start, a_size) = blocks[a];
            let (b_start, b_size) = blocks[b];
            if a == b {
                for (i, j) in sample_within(a_size, p, &mut rng) {
                    arcs.push((a_start + i, a_start + j, 1.0));
                    arcs.push((a_start + j, a_start + i, 1.0));
                }
            } else {
                for (i, j) in sample_across(a_size, b_size, p, &mut rng) {
                    arcs.push((a_start + i, b_start + j, 1.0));
                    arcs.push((b_start + j, a_start + i, 1.0));
                }
            }
        }
    }
    let adjacency = SparseMatrix::from_triplets(n, &arcs)?;

    let mut labels = vec![0u8; n];
    let mut unseen = vec![false; n];
    for node in anomaly_start..n {
        labels[node] = 1;
    }
    let (unseen_start, unseen_size) = blocks[unseen_block];
    for node in unseen_start..unseen_start + unseen_size {
        unseen[node] = true;
    }

    let mut masks = Masks::empty(n);
    for class in [0u8, 1u8] {
        let mut members: Vec<usize> =
            (0..n).filter(|&i| !unseen[i] && labels[i] == class).collect();
        members.shuffle(&mut rng);
        let train_count = members.len() * 2 / 5;
        let val_count = members.len() / 5;
        for (rank, &node) in members.iter().enumerate() {
            if rank < train_count {
                masks.train[node] = true;
            } else if rank < train_count + val_count {
                masks.val[node] = true;
            } else {
                masks.test[node] = true;
            }
        }
    }
    for node in unseen_start..unseen_start + unseen_size {
        masks.test[node] = true;
    }

    Graph::new(adjacency, Tensor::from_vec(n, d, features)?, Some(labels), masks, unseen)
}

/// Sorted Bernoulli(p) draws over `0..total` by geometric gap
/// sampling, so sparse regimes cost O(hits) instead of O(total).
fn sample_indices(total: u64, p: f64, rng: &mut ChaCha8Rng) -> Vec<u64> {
    if total == 0 || p <= 0.0 {
        return Vec::new();
    }
    if p >= 1.0 {
        return (0..total).collect();
    }
    let ln_miss = (1.0 - p).ln();
    let mut out = Vec::new();
    let mut pos = 0u64;
    loop {
        let u: f64 = rng.random();
        let gap = ((1.0 - u).ln() / ln_miss).floor();
        if !(gap >= 0.0) || gap >= (total as f64) {
            break;
        }
        pos = pos.saturating_add(gap as u64);
        if pos >= total {
            break;
        }
        out.push(pos);
        pos += 1;
    }
    out
}

/// Unordered pairs i < j inside a block of `size` nodes.
fn sample_within(size: usize, p: f64, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    if size < 2 {
        return Vec::new();
    }
    let total = (size as u64) * (size as u64 - 1) / 2;
    let mut row = 0usize;
    let mut row_start = 0u64;
    let mut row_len = (size - 1) as u64;
    sample_indices(total, p, rng)
        .into_iter()
        .map(|idx| {
            while idx >= row_start + row_len {
                row_start += row_len;
                row += 1;
                row_len = (size - 1 - row) as u64;
            }
            (row, row + 1 + (idx - row_start) as usize)
        })
        .collect()
}

/// Pairs (i, j) across two blocks of sizes `a` and `b`.
fn sample_across(a: usize, b: usize, p: f64, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let total = (a as u64) * (b as u64);
    sample_indices(total, p, rng)
        .into_iter()
        .map(|idx| ((idx / b as u64) as usize, (idx % b as u64) as usize))
        .collect()
}
