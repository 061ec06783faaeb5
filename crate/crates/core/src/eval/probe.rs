//! Alignment-loss probes over filtered report sentences.
//!
//! Each report is replaced by only its label-related (or only its
//! label-unrelated) sentences; the validation contrastive loss over the
//! filtered pairs measures what part of the report the alignment relies on.
//! Sentence classification is a keyword match against the schema's category
//! names, which is exact on the synthetic corpus by construction.

use crate::corpus::manifest::Split;
use crate::corpus::synth::sentence_is_label_related;
use crate::encoders::{volume_to_input, AlignedModel};
use crate::error::CoreError;
use crate::nn::Tensor;
use crate::training::data::Dataset;
use crate::training::losses::contrastive_loss;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SentenceFilter {
    All,
    LabelRelated,
    LabelUnrelated,
}

impl std::str::FromStr for SentenceFilter {
    type Err = CoreError;
    fn from_str(s: &str) -> Result<Self, CoreError> {
        match s {
            "all" => Ok(SentenceFilter::All),
            "label-related" => Ok(SentenceFilter::LabelRelated),
            "label-unrelated" => Ok(SentenceFilter::LabelUnrelated),
            other => Err(CoreError::Config(format!("unknown sentence filter {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeResult {
    pub filter: SentenceFilter,
    pub loss: f64,
    pub n_used: usize,
    pub n_skipped: usize,
}

/// Split a report into sentences (periods terminate sentences).
pub fn split_sentences(report: &str) -> Vec<String> {
    report
        .split('.')
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| format!("{s}."))
        .collect()
}

pub fn alignment_probe(
    model: &AlignedModel,
    ds: &Dataset,
    split: Split,
    filter: SentenceFilter,
    batch_size: usize,
    l2_normalize: bool,
) -> Result<ProbeResult, CoreError> {
    let idx = ds.indices(split);
    if idx.is_empty() {
        return Err(CoreError::Data(format!("split {split} is empty")));
    }
    // Tokenized (volume, filtered-report) pairs; studies whose filtered
    // report is empty are skipped and counted.
    let mut kept: Vec<(usize, Vec<u32>)> = Vec::new();
    let mut n_skipped = 0usize;
    for &i in &idx {
        let study = &ds.studies[i];
        let tokens = match filter {
            SentenceFilter::All => study.tokens.clone(),
            _ => {
                let want_related = filter == SentenceFilter::LabelRelated;
                let selected: Vec<String> = split_sentences(&study.report)
                    .into_iter()
                    .filter(|s| sentence_is_label_related(s, &ds.schema) == want_related)
                    .collect();
                if selected.is_empty() {
                    n_skipped += 1;
                    continue;
                }
                model
                    .tokenizer
                    .encode(&selected.join(" "), model.text.cfg.max_tokens)
            }
        };
        kept.push((i, tokens));
    }
    if kept.is_empty() {
        return Err(CoreError::Data(
            "sentence filter left no usable studies".into(),
        ));
    }
    let dim = model.vision.cfg.embed_dim;
    let mut loss_sum = 0.0;
    let mut n = 0usize;
    for chunk in kept.chunks(batch_size) {
        let mut z = Tensor::zeros(&[chunk.len(), dim]);
        let mut t = Tensor::zeros(&[chunk.len(), dim]);
        for (bi, (i, tokens)) in chunk.iter().enumerate() {
            let (crop, _) = ds.eval_crop(*i);
            let (_, ze) = model.vision.forward(&volume_to_input(&crop))?;
            z.data[bi * dim..(bi + 1) * dim].copy_from_slice(&ze);
            let te = model.text.forward(tokens)?;
            t.data[bi * dim..(bi + 1) * dim].copy_from_slice(&te);
        }
        loss_sum += contrastive_loss(&z, &t, l2_normalize)? * chunk.len() as f64;
        n += chunk.len();
    }
    Ok(ProbeResult {
        filter,
        loss: loss_sum / n as f64,
        n_used: n,
        n_skipped,
    })
}
