//! Classification metrics for imbalanced binary detection: F1 of the
//! malicious class, false-positive rate, and rank-statistic AUC-ROC.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Confusion counts plus derived metrics. `auc_roc` is absent when the test
/// set contains a single class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub f1: f64,
    pub fpr: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub auc_roc: Option<f64>,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl MetricsReport {
    /// Build from per-session (label, predicted, score) triples.
    pub fn compute(rows: &[(u8, u8, f64)]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::validation("cannot evaluate an empty test set"));
        }
        let (mut tp, mut fp, mut tn, mut fn_) = (0usize, 0usize, 0usize, 0usize);
        for &(label, predicted, _) in rows {
            match (label, predicted) {
                (1, 1) => tp += 1,
                (0, 1) => fp += 1,
                (0, 0) => tn += 1,
                (1, 0) => fn_ += 1,
                _ => return Err(Error::validation("labels must be 0 or 1")),
            }
        }
        let precision = if tp + fp > 0 {
            tp as f64 / (tp + fp) as f64
        } else {
            0.0
        };
        let recall = if tp + fn_ > 0 {
            tp as f64 / (tp + fn_) as f64
        } else {
            0.0
        };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        let fpr = if fp + tn > 0 {
            fp as f64 / (fp + tn) as f64
        } else {
            0.0
        };
        let scores: Vec<(f64, u8)> = rows.iter().map(|&(label, _, s)| (s, label)).collect();
        let auc_roc = auc_rank_statistic(&scores);
        Ok(MetricsReport {
            f1,
            fpr,
            auc_roc,
            tp,
            fp,
            tn,
            fn_,
        })
    }
}

/// AUC-ROC via the Mann-Whitney rank statistic with tie-averaged ranks.
/// Returns `None` when either class is absent.
pub fn auc_rank_statistic(scores: &[(f64, u8)]) -> Option<f64> {
    let n_pos = scores.iter().filter(|&&(_, y)| y == 1).count();
    let n_neg = scores.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].0.partial_cmp(&scores[b].0).unwrap());

    // Average ranks over tied score groups.
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]].0 == scores[order[i]].0 {
            j += 1;
        }
        // 1-based ranks i+1 ..= j+1 share the average.
        let avg_rank = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if scores[idx].1 == 1 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos as f64 * n_neg as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::rng_for;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn perfect_predictions() {
        let rows = vec![(1u8, 1u8, 2.0), (1, 1, 3.0), (0, 0, -1.0), (0, 0, -2.0)];
        let report = MetricsReport::compute(&rows).unwrap();
        assert_eq!(report.f1, 1.0);
        assert_eq!(report.fpr, 0.0);
        assert_eq!(report.auc_roc, Some(1.0));
    }

    #[test]
    fn hand_computed_confusion_case() {
        // tp=3, fp=1, fn=1, tn=5 -> precision 0.75, recall 0.75, f1 0.75, fpr 1/6
        let mut rows = Vec::new();
        for _ in 0..3 {
            rows.push((1u8, 1u8, 1.0));
        }
        rows.push((0, 1, 1.0));
        rows.push((1, 0, -1.0));
        for _ in 0..5 {
            rows.push((0, 0, -1.0));
        }
        let report = MetricsReport::compute(&rows).unwrap();
        assert!((report.f1 - 0.75).abs() < 1e-12);
        assert!((report.fpr - 1.0 / 6.0).abs() < 1e-12);
        assert_eq!((report.tp, report.fp, report.tn, report.fn_), (3, 1, 5, 1));
    }

    #[test]
    fn equal_scores_give_half_auc() {
        let rows = vec![(1u8, 0u8, 0.5), (0, 0, 0.5), (1, 0, 0.5), (0, 0, 0.5)];
        let report = MetricsReport::compute(&rows).unwrap();
        assert_eq!(report.auc_roc, Some(0.5));
    }

    #[test]
    fn single_class_has_no_auc() {
        let rows = vec![(0u8, 0u8, 0.1), (0, 1, 0.9)];
        let report = MetricsReport::compute(&rows).unwrap();
        assert_eq!(report.auc_roc, None);
    }

    /// Brute-force AUC: fraction of (positive, negative) pairs ranked
    /// correctly, ties counting half.
    fn naive_auc(scores: &[(f64, u8)]) -> Option<f64> {
        let pos: Vec<f64> = scores.iter().filter(|s| s.1 == 1).map(|s| s.0).collect();
        let neg: Vec<f64> = scores.iter().filter(|s| s.1 == 0).map(|s| s.0).collect();
        if pos.is_empty() || neg.is_empty() {
            return None;
        }
        let mut acc = 0.0;
        for &p in &pos {
            for &n in &neg {
                acc += if p > n {
                    1.0
                } else if p == n {
                    0.5
                } else {
                    0.0
                };
            }
        }
        Some(acc / (pos.len() * neg.len()) as f64)
    }

    #[test]
    fn rank_auc_equals_pair_counting_with_ties() {
        let mut rng = rng_for(31, "auc-test");
        for _ in 0..50 {
            let n = rng.gen_range(2..50);
            let scores: Vec<(f64, u8)> = (0..n)
                .map(|_| {
                    // Coarse grid forces plenty of ties.
                    let s = (rng.gen_range(-5i32..=5)) as f64 / 2.0;
                    (s, rng.gen_range(0..2) as u8)
                })
                .collect();
            assert_eq!(auc_rank_statistic(&scores), naive_auc(&scores));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn rank_auc_matches_naive_on_random_inputs(
            scores in prop::collection::vec((-3.0f64..3.0, 0u8..2), 2..50)
        ) {
            let via_ranks = auc_rank_statistic(&scores);
            let via_pairs = naive_auc(&scores);
            match (via_ranks, via_pairs) {
                (None, None) => {}
                (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-12),
                other => prop_assert!(false, "mismatch: {other:?}"),
            }
        }
    }
}
