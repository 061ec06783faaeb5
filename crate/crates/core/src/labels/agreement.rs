//! Agreement scoring between predicted and reference label sets.
//!
//! All (study, category) cells are flattened and scored under one of three
//! protocols:
//!
//! * `strict` — {-1, 0, 1} as a 3-class problem: multi-class Cohen's kappa,
//!   accuracy, and macro-averaged precision/recall/F1 over the 3 classes.
//! * `ignore_uncertain` — cells with reference -1 dropped, then binary
//!   scoring with positive class 1; a predicted -1 counts as a negative
//!   prediction.
//! * `map_uncertain_to_negative` — -1 mapped to 0 on both sides, then binary.

use crate::error::CoreError;
use crate::schema::LabelVector;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgreementProtocol {
    Strict,
    IgnoreUncertain,
    MapUncertainToNegative,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AgreementReport {
    pub protocol: AgreementProtocol,
    pub kappa: f64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub n_cells: usize,
}

/// Cohen's kappa `(po - pe) / (1 - pe)` over paired class assignments.
/// When `pe == 1` (both raters constant), kappa is 1 for perfect agreement
/// and 0 otherwise.
pub fn cohens_kappa(pairs: &[(i8, i8)], classes: &[i8]) -> f64 {
    let n = pairs.len() as f64;
    if pairs.is_empty() {
        return 0.0;
    }
    let po = pairs.iter().filter(|(a, b)| a == b).count() as f64 / n;
    let mut pe = 0.0;
    for &c in classes {
        let pa = pairs.iter().filter(|(a, _)| *a == c).count() as f64 / n;
        let pb = pairs.iter().filter(|(_, b)| *b == c).count() as f64 / n;
        pe += pa * pb;
    }
    if (1.0 - pe).abs() < 1e-12 {
        return if (1.0 - po).abs() < 1e-12 { 1.0 } else { 0.0 };
    }
    (po - pe) / (1.0 - pe)
}

fn precision_recall_f1(tp: usize, fp: usize, fn_: usize) -> (f64, f64, f64) {
    let precision = if tp + fp == 0 {
        0.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let recall = if tp + fn_ == 0 {
        0.0
    } else {
        tp as f64 / (tp + fn_) as f64
    };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    (precision, recall, f1)
}

pub fn agreement_metrics(
    pred: &[LabelVector],
    gold: &[LabelVector],
    protocol: AgreementProtocol,
) -> Result<AgreementReport, CoreError> {
    if pred.is_empty() || pred.len() != gold.len() {
        return Err(CoreError::SchemaMismatch(format!(
            "label sets must be nonempty and equal length ({} vs {})",
            pred.len(),
            gold.len()
        )));
    }
    let arity = pred[0].values.len();
    for (p, g) in pred.iter().zip(gold) {
        if p.schema != pred[0].schema
            || g.schema != pred[0].schema
            || p.values.len() != arity
            || g.values.len() != arity
        {
            return Err(CoreError::SchemaMismatch(
                "all label vectors must share one schema".into(),
            ));
        }
    }

    // Flatten to (pred, gold) cells under the protocol.
    let mut cells: Vec<(i8, i8)> = Vec::with_capacity(pred.len() * arity);
    for (p, g) in pred.iter().zip(gold) {
        for c in 0..arity {
            let (pv, gv) = (p.values[c], g.values[c]);
            match protocol {
                AgreementProtocol::Strict => cells.push((pv, gv)),
                AgreementProtocol::IgnoreUncertain => {
                    if gv != -1 {
                        cells.push((if pv == 1 { 1 } else { 0 }, gv));
                    }
                }
                AgreementProtocol::MapUncertainToNegative => {
                    cells.push((pv.max(0), gv.max(0)));
                }
            }
        }
    }
    if cells.is_empty() {
        return Err(CoreError::Data(
            "no cells left to score after filtering".into(),
        ));
    }

    let n = cells.len();
    let accuracy = cells.iter().filter(|(a, b)| a == b).count() as f64 / n as f64;
    let (kappa, precision, recall, f1) = match protocol {
        AgreementProtocol::Strict => {
            let classes = [-1i8, 0, 1];
            let kappa = cohens_kappa(&cells, &classes);
            let mut sums = (0.0, 0.0, 0.0);
            for &c in &classes {
                let tp = cells.iter().filter(|(a, b)| *a == c && *b == c).count();
                let fp = cells.iter().filter(|(a, b)| *a == c && *b != c).count();
                let fn_ = cells.iter().filter(|(a, b)| *a != c && *b == c).count();
                let (p, r, f) = precision_recall_f1(tp, fp, fn_);
                sums = (sums.0 + p, sums.1 + r, sums.2 + f);
            }
            let k = classes.len() as f64;
            (kappa, sums.0 / k, sums.1 / k, sums.2 / k)
        }
        AgreementProtocol::IgnoreUncertain | AgreementProtocol::MapUncertainToNegative => {
            let kappa = cohens_kappa(&cells, &[0, 1]);
            let tp = cells.iter().filter(|(a, b)| *a == 1 && *b == 1).count();
            let fp = cells.iter().filter(|(a, b)| *a == 1 && *b != 1).count();
            let fn_ = cells.iter().filter(|(a, b)| *a != 1 && *b == 1).count();
            let (p, r, f) = precision_recall_f1(tp, fp, fn_);
            (kappa, p, r, f)
        }
    };

    Ok(AgreementReport {
        protocol,
        kappa,
        accuracy,
        precision,
        recall,
        f1,
        n_cells: n,
    })
}
