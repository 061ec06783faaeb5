//! Scalar metrics: tie-corrected AUC, thresholded binary metrics, Recall@k,
//! and the serialized metrics report.

use crate::error::CoreError;
use crate::nn::Tensor;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Mann-Whitney AUC with average ranks for ties. `None` when a class has no
/// positives or no negatives.
pub fn auc(scores: &[f64], positives: &[bool]) -> Option<f64> {
    debug_assert_eq!(scores.len(), positives.len());
    let n = scores.len();
    let n_pos = positives.iter().filter(|p| **p).count();
    let n_neg = n - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    // average ranks over tie groups (1-based)
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + 1 + j + 1) as f64 / 2.0;
        for &k in &order[i..=j] {
            if positives[k] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    Some(
        (rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0) / (n_pos as f64 * n_neg as f64),
    )
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BinaryCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

pub fn binary_counts(decisions: &[bool], positives: &[bool]) -> BinaryCounts {
    let mut c = BinaryCounts::default();
    for (&d, &p) in decisions.iter().zip(positives) {
        match (d, p) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    c
}

impl BinaryCounts {
    pub fn accuracy(&self) -> f64 {
        let n = self.tp + self.fp + self.tn + self.fn_;
        if n == 0 {
            0.0
        } else {
            (self.tp + self.tn) as f64 / n as f64
        }
    }
    pub fn precision(&self) -> f64 {
        if self.tp + self.fp == 0 {
            0.0
        } else {
            self.tp as f64 / (self.tp + self.fp) as f64
        }
    }
    pub fn sensitivity(&self) -> f64 {
        if self.tp + self.fn_ == 0 {
            0.0
        } else {
            self.tp as f64 / (self.tp + self.fn_) as f64
        }
    }
    pub fn specificity(&self) -> f64 {
        if self.tn + self.fp == 0 {
            0.0
        } else {
            self.tn as f64 / (self.tn + self.fp) as f64
        }
    }
    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.sensitivity());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

/// Recall@k for a report-to-volume similarity matrix: row i is report i and
/// its true match is column i; ties rank the lower column index first.
pub fn recall_at_k(
    sim: &Tensor,
    ks: &[usize],
) -> Result<BTreeMap<usize, f64>, CoreError> {
    if sim.shape.len() != 2 || sim.shape[0] != sim.shape[1] {
        return Err(CoreError::DimMismatch(format!(
            "similarity matrix must be square, got {:?}",
            sim.shape
        )));
    }
    let n = sim.shape[0];
    for &k in ks {
        if k == 0 || k > n {
            return Err(CoreError::Config(format!(
                "recall@k requires 1 <= k <= {n}, got {k}"
            )));
        }
    }
    let mut ranks = Vec::with_capacity(n);
    for i in 0..n {
        let row = &sim.data[i * n..(i + 1) * n];
        let true_score = row[i];
        let mut rank = 1usize;
        for (j, &s) in row.iter().enumerate() {
            if s > true_score || (s == true_score && j < i) {
                rank += 1;
            }
        }
        ranks.push(rank);
    }
    let mut out = BTreeMap::new();
    for &k in ks {
        let hits = ranks.iter().filter(|&&r| r <= k).count();
        out.insert(k, hits as f64 / n as f64);
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ClassMetrics {
    pub name: String,
    pub auc: f64,
    pub acc: f64,
    pub f1: f64,
    pub precision: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub n_pos: usize,
    pub n_neg: usize,
    /// Degenerate gold (no positives or no negatives after exclusions):
    /// dropped from macro averages.
    pub excluded: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MacroMetrics {
    pub auc: f64,
    pub acc: f64,
    pub f1: f64,
    pub precision: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub n_classes: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MetricsReport {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub per_class: Vec<ClassMetrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub macro_avg: Option<MacroMetrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recall_at: Option<BTreeMap<usize, f64>>,
    pub n_eval: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_positive: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_negative: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
}

impl MetricsReport {
    pub fn macro_from_classes(per_class: &[ClassMetrics]) -> Option<MacroMetrics> {
        let used: Vec<&ClassMetrics> = per_class.iter().filter(|c| !c.excluded).collect();
        if used.is_empty() {
            return None;
        }
        let n = used.len() as f64;
        Some(MacroMetrics {
            auc: used.iter().map(|c| c.auc).sum::<f64>() / n,
            acc: used.iter().map(|c| c.acc).sum::<f64>() / n,
            f1: used.iter().map(|c| c.f1).sum::<f64>() / n,
            precision: used.iter().map(|c| c.precision).sum::<f64>() / n,
            sensitivity: used.iter().map(|c| c.sensitivity).sum::<f64>() / n,
            specificity: used.iter().map(|c| c.specificity).sum::<f64>() / n,
            n_classes: used.len(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Human-readable table.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        if !self.per_class.is_empty() {
            out.push_str(&format!(
                "{:<34} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7} {:>5} {:>5}\n",
                "class", "auc", "acc", "f1", "prec", "sens", "spec", "pos", "neg"
            ));
            for c in &self.per_class {
                if c.excluded {
                    out.push_str(&format!("{:<34} excluded (degenerate gold)\n", c.name));
                } else {
                    out.push_str(&format!(
                        "{:<34} {:>7.4} {:>7.4} {:>7.4} {:>7.4} {:>7.4} {:>7.4} {:>5} {:>5}\n",
                        c.name, c.auc, c.acc, c.f1, c.precision, c.sensitivity, c.specificity,
                        c.n_pos, c.n_neg
                    ));
                }
            }
        }
        if let Some(m) = &self.macro_avg {
            out.push_str(&format!(
                "{:<34} {:>7.4} {:>7.4} {:>7.4} {:>7.4} {:>7.4} {:>7.4} ({} classes)\n",
                "MACRO", m.auc, m.acc, m.f1, m.precision, m.sensitivity, m.specificity,
                m.n_classes
            ));
        }
        if let Some(r) = &self.recall_at {
            for (k, v) in r {
                out.push_str(&format!("recall@{k:<4} {v:.4}\n"));
            }
        }
        out.push_str(&format!("n_eval {}\n", self.n_eval));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auc_perfect_and_constant() {
        let scores = [0.9, 0.8, 0.7, 0.2, 0.1];
        let labels = [true, true, false, false, false];
        assert_eq!(auc(&scores, &labels), Some(1.0));
        // constant scores: all ties -> 0.5
        let flat = [0.3; 5];
        assert_eq!(auc(&flat, &labels), Some(0.5));
        // degenerate
        assert_eq!(auc(&scores, &[true; 5]), None);
    }

    #[test]
    fn auc_hand_case_eight_ninths() {
        // pos: 0.9, 0.8, 0.4; neg: 0.7, 0.3, 0.2 -> 8/9 by pair counting
        let scores = [0.9, 0.8, 0.4, 0.7, 0.3, 0.2];
        let labels = [true, true, true, false, false, false];
        let a = auc(&scores, &labels).unwrap();
        assert!((a - 8.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn auc_matches_pairwise_oracle_with_ties() {
        let scores = [0.5, 0.5, 0.3, 0.5, 0.1, 0.3];
        let labels = [true, false, true, true, false, false];
        // O(N^2) oracle: ties count 1/2
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..6 {
            if !labels[i] {
                continue;
            }
            for j in 0..6 {
                if labels[j] {
                    continue;
                }
                den += 1.0;
                if scores[i] > scores[j] {
                    num += 1.0;
                } else if scores[i] == scores[j] {
                    num += 0.5;
                }
            }
        }
        assert!((auc(&scores, &labels).unwrap() - num / den).abs() < 1e-12);
    }

    #[test]
    fn auc_is_order_independent() {
        let scores = [0.1, 0.7, 0.7, 0.2, 0.9];
        let labels = [false, true, false, false, true];
        let a = auc(&scores, &labels).unwrap();
        let perm = [4usize, 2, 0, 1, 3];
        let s2: Vec<f64> = perm.iter().map(|&i| scores[i]).collect();
        let l2: Vec<bool> = perm.iter().map(|&i| labels[i]).collect();
        assert_eq!(a, auc(&s2, &l2).unwrap());
    }

    #[test]
    fn recall_at_k_identity_and_reversed() {
        let n = 10;
        let mut sim = Tensor::zeros(&[n, n]);
        for i in 0..n {
            sim.data[i * n + i] = 10.0;
        }
        let r = recall_at_k(&sim, &[1, 5, 10]).unwrap();
        assert_eq!(r[&1], 1.0);
        // true match ranked last: every off-diagonal beats the diagonal
        let mut worst = Tensor::zeros(&[n, n]);
        for i in 0..n {
            for j in 0..n {
                worst.data[i * n + j] = if i == j { -1.0 } else { 1.0 };
            }
        }
        let r = recall_at_k(&worst, &[5, 10]).unwrap();
        assert_eq!(r[&5], 0.0);
        assert_eq!(r[&10], 1.0);
        assert!(recall_at_k(&worst, &[11]).is_err());
        assert!(recall_at_k(&worst, &[0]).is_err());
    }

    #[test]
    fn recall_ties_break_by_lower_column() {
        // row 0: all equal; true col 0 wins ties -> rank 1
        // row 1: all equal; col 0 precedes true col 1 -> rank 2
        let sim = Tensor::from_vec(&[2, 2], vec![1.0, 1.0, 1.0, 1.0]);
        let r = recall_at_k(&sim, &[1, 2]).unwrap();
        assert_eq!(r[&1], 0.5);
        assert_eq!(r[&2], 1.0);
    }

    #[test]
    fn binary_counts_and_metrics() {
        let decisions = [true, true, false, false, true];
        let positives = [true, false, false, true, true];
        let c = binary_counts(&decisions, &positives);
        assert_eq!((c.tp, c.fp, c.tn, c.fn_), (2, 1, 1, 1));
        assert!((c.accuracy() - 0.6).abs() < 1e-12);
        assert!((c.precision() - 2.0 / 3.0).abs() < 1e-12);
        assert!((c.sensitivity() - 2.0 / 3.0).abs() < 1e-12);
        assert!((c.specificity() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn macro_skips_excluded_classes() {
        let classes = vec![
            ClassMetrics {
                name: "a".into(),
                auc: 0.9,
                acc: 0.8,
                f1: 0.7,
                precision: 0.6,
                sensitivity: 0.5,
                specificity: 0.4,
                n_pos: 3,
                n_neg: 4,
                excluded: false,
            },
            ClassMetrics {
                name: "b".into(),
                auc: 0.0,
                acc: 0.0,
                f1: 0.0,
                precision: 0.0,
                sensitivity: 0.0,
                specificity: 0.0,
                n_pos: 0,
                n_neg: 7,
                excluded: true,
            },
        ];
        let m = MetricsReport::macro_from_classes(&classes).unwrap();
        assert_eq!(m.n_classes, 1);
        assert_eq!(m.auc, 0.9);
    }
}
