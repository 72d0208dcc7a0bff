//! Ranking metrics and the evaluation report.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::tensorcore::{sigmoid, Tensor};

/// Probability that a uniformly random anomaly outscores a uniformly
/// random normal, ties counted half. Computed from average ranks in
/// O(n log n).
pub fn auroc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, neg) = class_counts("auroc", scores, labels)?;

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Average rank within each tied group keeps the half-credit
    // convention exact.
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            if labels[idx] == 1 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j;
    }
    let p = pos as f64;
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * neg as f64))
}

/// Area under the precision-recall curve with step-wise interpolation,
/// tied scores collapsed into single thresholds.
pub fn auprc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, _) = class_counts("auprc", scores, labels)?;

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut prev_recall = 0.0;
    let mut area = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            j += 1;
        }
        let precision = tp as f64 / (tp + fp) as f64;
        let recall = tp as f64 / pos as f64;
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j;
    }
    Ok(area)
}

fn class_counts(op: &'static str, scores: &[f64], labels: &[u8]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::shape(op, format!("{} scores, {} labels", scores.len(), labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y > 1) {
        return Err(Error::arg(op, format!("label {} outside {{0,1}}", bad)));
    }
    if let Some(bad) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::arg(op, format!("non-finite score {}", bad)));
    }
    let pos = labels.iter().filter(|&&y| y == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::arg(op, "both classes must be present"));
    }
    Ok((pos, neg))
}

/// One contamination histogram bin: seen normals whose unseen-neighbor
/// fraction lies in `(lo, hi]`, except the first bin which holds the
/// exact-zero population. `mean_delta` is null for an empty bin.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ContaminationBin {
    pub lo: f64,
    pub hi: f64,
    pub mean_delta: Option<f64>,
    pub count: usize,
}

/// Detection quality on a labeled test split, with optional
/// per-subpopulation breakdowns and contamination bins.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MetricReport {
    pub auroc: f64,
    pub auprc: f64,
    pub auroc_seen_vs_anom: Option<f64>,
    pub auroc_unseen_vs_anom: Option<f64>,
    pub contamination_bins: Vec<ContaminationBin>,
}

/// Scores the test split of a labeled graph. `scores` are full-graph
/// logits; metrics are computed over test-mask nodes in probability
/// space. Subset entries drop to null when a subpopulation is absent.
pub fn evaluate_scores(g: &Graph, scores: &Tensor) -> Result<MetricReport> {
    let labels = g.require_labels()?;
    if scores.rows() != g.n() || scores.cols() != 1 {
        return Err(Error::shape(
            "evaluate_scores",
            format!("scores are {}x{}, graph has {} nodes", scores.rows(), scores.cols(), g.n()),
        ));
    }
    let mut test_scores = Vec::new();
    let mut test_labels = Vec::new();
    let mut seen_scores = Vec::new();
    let mut seen_labels = Vec::new();
    let mut unseen_scores = Vec::new();
    let mut unseen_labels = Vec::new();
    for i in 0..g.n() {
        if !g.masks().test[i] {
            continue;
        }
        let s = sigmoid(scores.data()[i]);
        let y = labels[i];
        test_scores.push(s);
        test_labels.push(y);
        if y == 1 {
            seen_scores.push(s);
            seen_labels.push(1);
            unseen_scores.push(s);
            unseen_labels.push(1);
        } else if g.unseen_flags()[i] {
            unseen_scores.push(s);
            unseen_labels.push(0);
        } else {
            seen_scores.push(s);
            seen_labels.push(0);
        }
    }
    Ok(MetricReport {
        auroc: auroc(&test_scores, &test_labels)?,
        auprc: auprc(&test_scores, &test_labels)?,
        auroc_seen_vs_anom: auroc(&seen_scores, &seen_labels).ok(),
        auroc_unseen_vs_anom: auroc(&unseen_scores, &unseen_labels).ok(),
        contamination_bins: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// O(n^2) definition: count wins plus half-ties over all
    /// anomaly/normal pairs.
    fn pairwise_auroc(scores: &[f64], labels: &[u8]) -> f64 {
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for i in 0..scores.len() {
            if labels[i] != 1 {
                continue;
            }
            for j in 0..scores.len() {
                if labels[j] != 0 {
                    continue;
                }
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
        wins / pairs
    }

    #[test]
    fn perfect_ranking_scores_one() {
        assert_eq!(auroc(&[0.9, 0.1], &[1, 0]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.1, 0.9], &[1, 0]).unwrap(), 0.0);
    }

    #[test]
    fn all_ties_score_half() {
        assert_eq!(auroc(&[0.3; 6], &[1, 0, 1, 0, 0, 0]).unwrap(), 0.5);
    }

    #[test]
    fn rank_statistic_matches_pairwise_oracle_with_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..50 {
            let n = rng.random_range(5..60);
            // Coarse quantization forces plenty of exact ties.
            let scores: Vec<f64> = (0..n).map(|_| (rng.random::<f64>() * 8.0).floor() / 8.0).collect();
            let mut labels: Vec<u8> = (0..n).map(|_| u8::from(rng.random::<f64>() < 0.3)).collect();
            labels[0] = 1;
            labels[1] = 0;
            let fast = auroc(&scores, &labels).unwrap();
            let slow = pairwise_auroc(&scores, &labels);
            assert!((fast - slow).abs() < 1e-12, "{} vs {}", fast, slow);
        }
    }

    #[test]
    fn auroc_is_invariant_under_monotone_transforms() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for _ in 0..20 {
            let n = rng.random_range(4..40);
            let scores: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 6.0 - 3.0).collect();
            let mut labels: Vec<u8> = (0..n).map(|_| u8::from(rng.random::<f64>() < 0.4)).collect();
            labels[0] = 1;
            labels[1] = 0;
            let raw = auroc(&scores, &labels).unwrap();
            let squashed: Vec<f64> = scores.iter().map(|&s| sigmoid(s)).collect();
            assert_eq!(raw.to_bits(), auroc(&squashed, &labels).unwrap().to_bits());
        }
    }

    #[test]
    fn single_class_inputs_are_rejected() {
        assert!(auroc(&[0.1, 0.2], &[1, 1]).is_err());
        assert!(auroc(&[0.1, 0.2], &[0, 0]).is_err());
        assert!(auprc(&[0.1, 0.2], &[0, 0]).is_err());
    }

    #[test]
    fn auprc_hand_cases() {
        // Perfect ranking: precision 1 at every recall level.
        assert_eq!(auprc(&[0.9, 0.8, 0.1, 0.2], &[1, 1, 0, 0]).unwrap(), 1.0);
        // Worst ranking of 1 positive among 4: the single positive is
        // found last, precision 1/4 at recall 1.
        assert_eq!(auprc(&[0.1, 0.5, 0.6, 0.7], &[1, 0, 0, 0]).unwrap(), 0.25);
        // All scores tied: one threshold, precision = prevalence.
        assert_eq!(auprc(&[0.5; 4], &[1, 0, 1, 0]).unwrap(), 0.5);
    }

    #[test]
    fn auprc_step_area_matches_manual_walk() {
        // Descending scores with labels [1, 0, 1]:
        //   threshold 1: tp=1 fp=0 -> P=1,   R=1/2, area += 1/2
        //   threshold 2: tp=1 fp=1 -> P=1/2, R=1/2, area += 0
        //   threshold 3: tp=2 fp=1 -> P=2/3, R=1,   area += 1/3
        let got = auprc(&[0.9, 0.5, 0.3], &[1, 0, 1]).unwrap();
        assert!((got - (0.5 + 2.0 / 3.0 * 0.5)).abs() < 1e-15);
    }

    #[test]
    fn report_serialization_round_trips() {
        let report = MetricReport {
            auroc: 0.875,
            auprc: 0.5,
            auroc_seen_vs_anom: Some(0.9),
            auroc_unseen_vs_anom: None,
            contamination_bins: vec![ContaminationBin { lo: 0.0, hi: 0.0, mean_delta: None, count: 0 }],
        };
        let text = serde_json::to_string(&report).unwrap();
        assert!(text.starts_with("{\"auroc\":"));
        assert!(text.contains("\"auroc_unseen_vs_anom\":null"));
        let back: MetricReport = serde_json::from_str(&text).unwrap();
        assert_eq!(report, back);
    }
}
