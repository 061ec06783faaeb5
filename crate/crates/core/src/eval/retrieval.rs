//! Report-to-volume retrieval.

use crate::corpus::manifest::Split;
use crate::encoders::AlignedModel;
use crate::error::CoreError;
use crate::eval::metrics::{recall_at_k, MetricsReport};
use crate::nn::{dot, Tensor};
use crate::training::data::Dataset;
use std::collections::BTreeMap;

/// `sim[i][j] = t_i · v_j` for reports i and volumes j of the split.
pub fn similarity_matrix(
    model: &AlignedModel,
    ds: &Dataset,
    split: Split,
) -> Result<(Tensor, Vec<String>), CoreError> {
    let idx = ds.indices(split);
    if idx.is_empty() {
        return Err(CoreError::Data(format!("split {split} is empty")));
    }
    let n = idx.len();
    let mut vols = Vec::with_capacity(n);
    let mut txts = Vec::with_capacity(n);
    let mut ids = Vec::with_capacity(n);
    for &i in &idx {
        let (crop, _) = ds.eval_crop(i);
        vols.push(model.embed_volume(&crop)?);
        txts.push(model.text.forward(&ds.studies[i].tokens)?);
        ids.push(ds.studies[i].id.clone());
    }
    let mut sim = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in 0..n {
            sim.data[i * n + j] = dot(&txts[i], &vols[j]);
        }
    }
    Ok((sim, ids))
}

pub fn eval_retrieval(
    model: &AlignedModel,
    ds: &Dataset,
    split: Split,
    ks: &[usize],
) -> Result<MetricsReport, CoreError> {
    let (sim, ids) = similarity_matrix(model, ds, split)?;
    let recall: BTreeMap<usize, f64> = recall_at_k(&sim, ks)?;
    Ok(MetricsReport {
        per_class: Vec::new(),
        macro_avg: None,
        recall_at: Some(recall),
        n_eval: ids.len(),
        prompt_positive: None,
        prompt_negative: None,
        threshold: None,
    })
}
