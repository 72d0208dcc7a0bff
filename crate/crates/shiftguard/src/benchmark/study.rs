//! Measures aggregation contamination directly: how much does each
//! seen-normal node's anomaly score move once unseen normals join its
//! neighborhood, as a function of how much of that neighborhood they
//! take over.

use crate::error::{Error, Result};
use crate::gadmodel::{detect, encode, GadModel};
use crate::graph::{sym_normalize, unseen_neighbor_fraction, Graph};
use crate::tensorcore::sigmoid;

use super::metrics::ContaminationBin;

/// Neighborhood-fraction bin edges: the exact-zero bin first, then
/// quarters. A node with no unseen neighbors at all lands in `[0]`,
/// which keeps the drift of untouched nodes separately visible.
const BIN_EDGES: [(f64, f64); 5] =
    [(0.0, 0.0), (0.0, 0.25), (0.25, 0.5), (0.5, 0.75), (0.75, 1.0)];

/// Per-node score change between the pre-shift graph and the shifted
/// one, grouped by unseen-neighbor fraction.
///
/// `g_before` must be exactly `g_after` minus its unseen nodes and
/// their incident edges, with node order preserved; both graphs need
/// labels. Scores are sigmoid probabilities of the frozen model `m`
/// over raw features, since contamination is a property of the model
/// as deployed, before any adaptation.
pub fn contamination_study(
    g_before: &Graph,
    g_after: &Graph,
    m: &GadModel,
) -> Result<Vec<ContaminationBin>> {
    let kept: Vec<usize> = (0..g_after.n()).filter(|&i| !g_after.unseen_flags()[i]).collect();
    check_mapping(g_before, g_after, &kept)?;
    let labels = g_before.require_labels()?;

    let probabilities = |g: &Graph| -> Result<Vec<f64>> {
        let h = encode(&sym_normalize(g), g.features(), m)?;
        let s = detect(&h, m)?;
        Ok(s.data().iter().map(|&z| sigmoid(z)).collect())
    };
    let p_before = probabilities(g_before)?;
    let p_after = probabilities(g_after)?;

    let mut sums = [0.0f64; BIN_EDGES.len()];
    let mut counts = [0usize; BIN_EDGES.len()];
    for (i, &node_after) in kept.iter().enumerate() {
        if labels[i] != 0 {
            continue;
        }
        let delta = p_after[node_after] - p_before[i];
        let fraction = unseen_neighbor_fraction(g_after, node_after)?;
        let bin = if fraction == 0.0 {
            0
        } else if fraction <= 0.25 {
            1
        } else if fraction <= 0.5 {
            2
        } else if fraction <= 0.75 {
            3
        } else {
            4
        };
        sums[bin] += delta;
        counts[bin] += 1;
    }

    Ok(BIN_EDGES
        .iter()
        .zip(sums.iter().zip(&counts))
        .map(|(&(lo, hi), (&sum, &count))| ContaminationBin {
            lo,
            hi,
            mean_delta: (count > 0).then(|| sum / count as f64),
            count,
        })
        .collect())
}

/// Verifies that `g_before` really is the induced seen subgraph of
/// `g_after` under the order-preserving id map `kept`.
fn check_mapping(g_before: &Graph, g_after: &Graph, kept: &[usize]) -> Result<()> {
    let fail = |detail: String| Err(Error::arg("contamination_study", detail));
    if g_before.n() != kept.len() {
        return fail(format!(
            "{} nodes before vs {} seen nodes after",
            g_before.n(),
            kept.len()
        ));
    }
    if g_before.unseen_flags().iter().any(|&f| f) {
        return fail("pre-shift graph already carries unseen flags".into());
    }
    let (before_labels, after_labels) = match (g_before.labels(), g_after.labels()) {
        (Some(b), Some(a)) => (b, a),
        _ => return Err(Error::LabelsRequired),
    };

    let mut new_id = vec![usize::MAX; g_after.n()];
    for (new, &old) in kept.iter().enumerate() {
        new_id[old] = new;
    }
    for (new, &old) in kept.iter().enumerate() {
        if g_before.features().row_slice(new) != g_after.features().row_slice(old) {
            return fail(format!("feature mismatch at seen node {}", new));
        }
        if before_labels[new] != after_labels[old] {
            return fail(format!("label mismatch at seen node {}", new));
        }
        let got: Vec<(usize, f64)> = g_before.adjacency().row(new).collect();
        let expect: Vec<(usize, f64)> = g_after
            .adjacency()
            .row(old)
            .filter(|&(j, _)| new_id[j] != usize::MAX)
            .map(|(j, v)| (new_id[j], v))
            .collect();
        if got != expect {
            return fail(format!("edge mismatch at seen node {}", new));
        }
    }
    Ok(())
}
