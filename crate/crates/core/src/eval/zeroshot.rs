//! Zero-shot multi-label diagnosis via positive/negative prompt pairs.

use crate::corpus::manifest::Split;
use crate::encoders::AlignedModel;
use crate::error::CoreError;
use crate::eval::metrics::{auc, binary_counts, ClassMetrics, MetricsReport};
use crate::nn::{dot, sigmoid};
use crate::training::data::Dataset;
use serde::{Deserialize, Serialize};

pub const PATHOLOGY_SLOT: &str = "{pathology}";

/// A positive/negative prompt template pair with a `{pathology}` slot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptPair {
    pub positive: String,
    pub negative: String,
}

impl PromptPair {
    pub fn new(positive: &str, negative: &str) -> Result<Self, CoreError> {
        let count = |s: &str| s.matches(PATHOLOGY_SLOT).count();
        if count(positive) != 1 {
            return Err(CoreError::Config(format!(
                "positive template must contain {PATHOLOGY_SLOT} exactly once: {positive:?}"
            )));
        }
        // The empty-string negative is the sanctioned exception.
        if !negative.is_empty() && count(negative) != 1 {
            return Err(CoreError::Config(format!(
                "negative template must contain {PATHOLOGY_SLOT} exactly once (or be empty): {negative:?}"
            )));
        }
        Ok(PromptPair {
            positive: positive.to_string(),
            negative: negative.to_string(),
        })
    }

    pub fn fill_positive(&self, pathology: &str) -> String {
        self.positive.replace(PATHOLOGY_SLOT, pathology)
    }

    pub fn fill_negative(&self, pathology: &str) -> String {
        self.negative.replace(PATHOLOGY_SLOT, pathology)
    }
}

/// The five published prompt pairs, in order.
pub fn prompt_bank() -> Vec<PromptPair> {
    vec![
        PromptPair::new("{pathology}.", "not {pathology}.").unwrap(),
        PromptPair::new("{pathology}.", "").unwrap(),
        PromptPair::new("There is {pathology}.", "There is no {pathology}.").unwrap(),
        PromptPair::new("{pathology} is present.", "{pathology} is not present.").unwrap(),
        PromptPair::new(
            "Findings are compatible with {pathology}.",
            "Findings are not compatible with {pathology}.",
        )
        .unwrap(),
    ]
}

/// 1-based lookup into the prompt bank.
pub fn prompt_by_index(index: usize) -> Result<PromptPair, CoreError> {
    let bank = prompt_bank();
    if index == 0 || index > bank.len() {
        return Err(CoreError::Config(format!(
            "prompt index must be 1..={}, got {index}",
            bank.len()
        )));
    }
    Ok(bank[index - 1].clone())
}

/// `P = exp(v·t⁺) / (exp(v·t⁺) + exp(v·t⁻)) = σ(v·t⁺ − v·t⁻)`, computed in
/// log space so extreme similarities cannot overflow.
pub fn zero_shot_probability(v: &[f64], t_pos: &[f64], t_neg: &[f64]) -> f64 {
    sigmoid(dot(v, t_pos) - dot(v, t_neg))
}

/// Zero-shot evaluation over a split: per class, the filled prompt pair is
/// encoded once, every image is scored by the similarity margin, and cells
/// whose gold label is -1 are excluded. Ranking metrics use the margin
/// directly (σ is monotone), which keeps decisions and AUC exact even where
/// the probability itself saturates.
pub fn eval_zero_shot(
    model: &AlignedModel,
    ds: &Dataset,
    split: Split,
    pair: &PromptPair,
    threshold: f64,
) -> Result<MetricsReport, CoreError> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(CoreError::Config(format!(
            "threshold must be in (0,1), got {threshold}"
        )));
    }
    let idx = ds.indices(split);
    if idx.is_empty() {
        return Err(CoreError::Data(format!("split {split} is empty")));
    }
    let embeds: Vec<Vec<f64>> = idx
        .iter()
        .map(|&i| {
            let (crop, _) = ds.eval_crop(i);
            model.embed_volume(&crop)
        })
        .collect::<Result<_, _>>()?;
    // decision margin: P > threshold  <=>  d > ln(thr/(1-thr))
    let logit_thr = (threshold / (1.0 - threshold)).ln();

    let mut per_class = Vec::with_capacity(ds.schema.arity());
    for (c, name) in ds.schema.categories.iter().enumerate() {
        let t_pos = model.embed_text(&pair.fill_positive(name))?;
        let t_neg = model.embed_text(&pair.fill_negative(name))?;
        let mut margins = Vec::new();
        let mut gold = Vec::new();
        for (k, &i) in idx.iter().enumerate() {
            let lab = ds.studies[i].labels[c];
            if lab == -1 {
                continue;
            }
            margins.push(dot(&embeds[k], &t_pos) - dot(&embeds[k], &t_neg));
            gold.push(lab == 1);
        }
        let n_pos = gold.iter().filter(|g| **g).count();
        let n_neg = gold.len() - n_pos;
        match auc(&margins, &gold) {
            Some(a) => {
                let decisions: Vec<bool> = margins.iter().map(|&d| d > logit_thr).collect();
                let counts = binary_counts(&decisions, &gold);
                per_class.push(ClassMetrics {
                    name: name.clone(),
                    auc: a,
                    acc: counts.accuracy(),
                    f1: counts.f1(),
                    precision: counts.precision(),
                    sensitivity: counts.sensitivity(),
                    specificity: counts.specificity(),
                    n_pos,
                    n_neg,
                    excluded: false,
                });
            }
            None => per_class.push(ClassMetrics {
                name: name.clone(),
                auc: 0.0,
                acc: 0.0,
                f1: 0.0,
                precision: 0.0,
                sensitivity: 0.0,
                specificity: 0.0,
                n_pos,
                n_neg,
                excluded: true,
            }),
        }
    }
    let macro_avg = MetricsReport::macro_from_classes(&per_class);
    Ok(MetricsReport {
        per_class,
        macro_avg,
        recall_at: None,
        n_eval: idx.len(),
        prompt_positive: Some(pair.positive.clone()),
        prompt_negative: Some(pair.negative.clone()),
        threshold: Some(threshold),
    })
}
