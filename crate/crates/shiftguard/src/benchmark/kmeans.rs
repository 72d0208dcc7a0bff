//! Plain Lloyd's k-means with k-means++ seeding, used to carve the
//! smallest feature cluster out of the normal nodes.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensorcore::Tensor;

const MAX_ITERATIONS: usize = 100;

/// Assigns each row of `x` to one of `k` clusters. Iterates to an
/// assignment fixpoint or 100 rounds, whichever comes first.
pub fn kmeans(x: &Tensor, k: usize, seed: u64) -> Result<Vec<usize>> {
    kmeans_trace(x, k, seed).map(|(assignment, _)| assignment)
}

/// [`kmeans`] plus the objective (within-cluster sum of squares) after
/// each assignment step, which must be non-increasing.
pub(crate) fn kmeans_trace(x: &Tensor, k: usize, seed: u64) -> Result<(Vec<usize>, Vec<f64>)> {
    let n = x.rows();
    let d = x.cols();
    if k == 0 {
        return Err(Error::arg("kmeans", "k must be at least 1"));
    }
    if k > n {
        return Err(Error::arg("kmeans", format!("k = {} exceeds {} rows", k, n)));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = plus_plus_init(x, k, &mut rng);
    let mut assignment: Vec<usize> = vec![usize::MAX; n];
    let mut objectives = Vec::new();

    for _ in 0..MAX_ITERATIONS {
        let mut next = vec![0usize; n];
        let mut objective = 0.0;
        for i in 0..n {
            let (c, d2) = nearest_center(&centers, x.row_slice(i));
            next[i] = c;
            objective += d2;
        }
        objectives.push(objective);
        if next == assignment {
            break;
        }
        assignment = next;

        // Means of the new assignment; a cluster that lost every
        // member keeps its previous center.
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            counts[assignment[i]] += 1;
            for (s, v) in sums[assignment[i]].iter_mut().zip(x.row_slice(i)) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for (s, center) in sums[c].iter().zip(centers[c].iter_mut()) {
                    *center = s / counts[c] as f64;
                }
            }
        }
    }

    Ok((assignment, objectives))
}

/// Lowest-index center at minimal squared distance, plus that distance.
fn nearest_center(centers: &[Vec<f64>], row: &[f64]) -> (usize, f64) {
    let mut best = 0;
    let mut best_d2 = squared_distance(&centers[0], row);
    for (c, center) in centers.iter().enumerate().skip(1) {
        let d2 = squared_distance(center, row);
        if d2 < best_d2 {
            best = c;
            best_d2 = d2;
        }
    }
    (best, best_d2)
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means++: first center uniform, each next center drawn with
/// probability proportional to its squared distance from the chosen
/// set. All weights zero (every row already a center) falls back to a
/// uniform draw.
fn plus_plus_init(x: &Tensor, k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = x.rows();
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    centers.push(x.row_slice(rng.random_range(0..n)).to_vec());
    let mut d2: Vec<f64> = (0..n)
        .map(|i| squared_distance(&centers[0], x.row_slice(i)))
        .collect();

    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut picked = None;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 {
                    if r < w {
                        picked = Some(i);
                        break;
                    }
                    r -= w;
                    picked = Some(i);
                }
            }
            picked.expect("positive total implies a positive weight")
        } else {
            rng.random_range(0..n)
        };
        centers.push(x.row_slice(pick).to_vec());
        let last = centers.last().unwrap();
        for i in 0..n {
            let fresh = squared_distance(last, x.row_slice(i));
            if fresh < d2[i] {
                d2[i] = fresh;
            }
        }
    }
    centers
}
