//! Stage 1: supervised unimodal pre-training of each encoder.

use crate::corpus::manifest::Split;
use crate::derive_seed;
use crate::encoders::{
    volume_to_input, SegDecoder, TextEncoder, TextEncoderConfig, TextStage1, Tokenizer,
    VisionEncoder, VisionEncoderConfig, VisionStage1,
};
use crate::error::CoreError;
use crate::nn::{AdamW, Linear, Tensor};
use crate::training::config::{StageKind, TrainingConfig};
use crate::training::data::Dataset;
use crate::training::losses::{masked_bce_batch, masked_bce_batch_grad, seg_ce, seg_ce_grad};
use crate::training::trace::LossTrace;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Training failure carrying the trace recorded so far.
#[derive(Debug)]
pub struct TrainAbort {
    pub error: CoreError,
    pub trace: LossTrace,
}

impl TrainAbort {
    fn wrap(error: CoreError, trace: &LossTrace) -> Self {
        TrainAbort {
            error,
            trace: trace.clone(),
        }
    }
}

pub struct StageOutcome<M> {
    pub model: M,
    pub trace: LossTrace,
    pub best_epoch: usize,
    pub best_val_total: f64,
}

fn check_finite(value: f64, what: &str) -> Result<(), CoreError> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(CoreError::Divergence(format!("{what} is not finite")))
    }
}

pub fn run_stage1_vision(
    ds: &Dataset,
    vcfg: &VisionEncoderConfig,
    cfg: &TrainingConfig,
) -> Result<StageOutcome<VisionStage1>, TrainAbort> {
    let mut trace = LossTrace::new();
    run_stage1_vision_inner(ds, vcfg, cfg, &mut trace)
        .map(|(model, best_epoch, best_val)| StageOutcome {
            model,
            trace: trace.clone(),
            best_epoch,
            best_val_total: best_val,
        })
        .map_err(|e| TrainAbort::wrap(e, &trace))
}

fn run_stage1_vision_inner(
    ds: &Dataset,
    vcfg: &VisionEncoderConfig,
    cfg: &TrainingConfig,
    trace: &mut LossTrace,
) -> Result<(VisionStage1, usize, f64), CoreError> {
    if cfg.stage != StageKind::VisionPretrain {
        return Err(CoreError::Config("config stage must be vision_pretrain".into()));
    }
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0x51, 0));
    let mut enc = VisionEncoder::new(vcfg, &mut rng)?;
    let mut classifier = Linear::new(vcfg.embed_dim, ds.schema.arity(), &mut rng);
    let mut seg = if cfg.use_seg {
        if ds.studies.iter().any(|s| s.mask.is_none()) {
            return Err(CoreError::Data(
                "use_seg requires anatomy masks for every study".into(),
            ));
        }
        Some(SegDecoder::new(
            enc.feature_channels(),
            ds.n_seg_classes(),
            vcfg.total_stride(),
            &mut rng,
        )?)
    } else {
        None
    };
    let mut opt = AdamW::new(cfg.lr, cfg.weight_decay);
    let train_idx = ds.indices(Split::Train);
    let val_idx = ds.indices(Split::Val);
    if train_idx.is_empty() {
        return Err(CoreError::Data("no training studies".into()));
    }

    let mut step: u64 = 0;
    let mut best: Option<(f64, usize, VisionStage1)> = None;
    for epoch in 0..cfg.epochs {
        let mut order = train_idx.clone();
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            for p in enc.params_mut() {
                p.zero_grad();
            }
            classifier.weight.zero_grad();
            classifier.bias.zero_grad();
            if let Some(s) = &mut seg {
                for p in s.params_mut() {
                    p.zero_grad();
                }
            }

            let mut tapes = Vec::with_capacity(batch.len());
            let mut z = Tensor::zeros(&[batch.len(), vcfg.embed_dim]);
            for (bi, &i) in batch.iter().enumerate() {
                let (crop, mask) = ds.train_crop(i, &mut rng);
                let tape = enc.forward_train(&volume_to_input(&crop))?;
                z.data[bi * vcfg.embed_dim..(bi + 1) * vcfg.embed_dim]
                    .copy_from_slice(&tape.embed);
                tapes.push((tape, mask));
            }
            let labels: Vec<&[i8]> = batch.iter().map(|&i| ds.studies[i].labels.as_slice()).collect();
            let logits = classifier.forward_rows(&z);
            let (bce, d_logits) = masked_bce_batch_grad(&logits, &labels, cfg.uncertain_policy)?;
            let dz = classifier.backward_rows(&z, &d_logits);

            let mut seg_loss = 0.0;
            for (bi, &_i) in batch.iter().enumerate() {
                let (tape, mask) = &tapes[bi];
                let d_fmap = match (&mut seg, mask) {
                    (Some(dec), Some(m)) => {
                        let st = dec.forward_train(&tape.fmap);
                        let (l, mut dlog) = seg_ce_grad(&st.logits, &m.data)?;
                        seg_loss += l / batch.len() as f64;
                        for g in &mut dlog.data {
                            *g /= batch.len() as f64;
                        }
                        Some(dec.backward(&st, &dlog))
                    }
                    _ => None,
                };
                let dz_row = &dz.data[bi * vcfg.embed_dim..(bi + 1) * vcfg.embed_dim];
                enc.backward(tape, dz_row, d_fmap.as_ref());
            }

            let total = bce + seg_loss;
            check_finite(total, "train loss")?;
            let mut params = enc.params_mut();
            params.push(&mut classifier.weight);
            params.push(&mut classifier.bias);
            if let Some(s) = &mut seg {
                params.extend(s.params_mut());
            }
            if let Some(max) = cfg.clip_grad_norm {
                crate::nn::clip_grad_norm(&mut params, max);
            }
            opt.step(&mut params);

            trace.push(step, "train", "bce", bce);
            if seg.is_some() {
                trace.push(step, "train", "seg", seg_loss);
            }
            trace.push(step, "train", "total", total);
            step += 1;
        }

        let (vbce, vseg, vtotal) =
            eval_vision(&enc, &classifier, seg.as_ref(), ds, &val_idx, cfg)?;
        if !val_idx.is_empty() {
            trace.push(step, "val", "bce", vbce);
            if seg.is_some() {
                trace.push(step, "val", "seg", vseg);
            }
            trace.push(step, "val", "total", vtotal);
            check_finite(vtotal, "validation loss")?;
        }
        let score = if val_idx.is_empty() {
            trace.last("train", "total").unwrap_or(f64::INFINITY)
        } else {
            vtotal
        };
        if best.as_ref().map_or(true, |(b, _, _)| score < *b) {
            best = Some((
                score,
                epoch,
                VisionStage1 {
                    encoder: enc.clone(),
                    classifier: classifier.clone(),
                    seg: seg.clone(),
                    schema: ds.schema.clone(),
                    preset: ds.spec.name.clone(),
                },
            ));
        }
    }
    let (best_val, best_epoch, model) = best.expect("at least one epoch ran");
    Ok((model, best_epoch, best_val))
}

fn eval_vision(
    enc: &VisionEncoder,
    classifier: &Linear,
    seg: Option<&SegDecoder>,
    ds: &Dataset,
    idx: &[usize],
    cfg: &TrainingConfig,
) -> Result<(f64, f64, f64), CoreError> {
    if idx.is_empty() {
        return Ok((0.0, 0.0, 0.0));
    }
    let embed_dim = enc.cfg.embed_dim;
    let mut bce_sum = 0.0;
    let mut seg_sum = 0.0;
    let mut n_cells = 0usize;
    for chunk in idx.chunks(cfg.batch_size) {
        let mut z = Tensor::zeros(&[chunk.len(), embed_dim]);
        for (bi, &i) in chunk.iter().enumerate() {
            let (crop, mask) = ds.eval_crop(i);
            let tape = enc.forward_train(&volume_to_input(&crop))?;
            z.data[bi * embed_dim..(bi + 1) * embed_dim].copy_from_slice(&tape.embed);
            if let Some(dec) = seg {
                let logits = dec.forward(&tape.fmap);
                seg_sum += seg_ce(&logits, &mask.expect("masks checked").data)?;
            }
        }
        let labels: Vec<&[i8]> = chunk.iter().map(|&i| ds.studies[i].labels.as_slice()).collect();
        let logits = classifier.forward_rows(&z);
        let bce = masked_bce_batch(&logits, &labels, cfg.uncertain_policy)?;
        bce_sum += bce * chunk.len() as f64;
        n_cells += chunk.len();
    }
    let bce = bce_sum / n_cells as f64;
    let seg_mean = if seg.is_some() {
        seg_sum / idx.len() as f64
    } else {
        0.0
    };
    Ok((bce, seg_mean, bce + seg_mean))
}

pub fn run_stage1_text(
    ds: &Dataset,
    tokenizer: &Tokenizer,
    tcfg: &TextEncoderConfig,
    cfg: &TrainingConfig,
) -> Result<StageOutcome<TextStage1>, TrainAbort> {
    let mut trace = LossTrace::new();
    run_stage1_text_inner(ds, tokenizer, tcfg, cfg, &mut trace)
        .map(|(model, best_epoch, best_val)| StageOutcome {
            model,
            trace: trace.clone(),
            best_epoch,
            best_val_total: best_val,
        })
        .map_err(|e| TrainAbort::wrap(e, &trace))
}

fn run_stage1_text_inner(
    ds: &Dataset,
    tokenizer: &Tokenizer,
    tcfg: &TextEncoderConfig,
    cfg: &TrainingConfig,
    trace: &mut LossTrace,
) -> Result<(TextStage1, usize, f64), CoreError> {
    if cfg.stage != StageKind::TextPretrain {
        return Err(CoreError::Config("config stage must be text_pretrain".into()));
    }
    cfg.validate()?;
    let mut tcfg = tcfg.clone();
    tcfg.vocab_size = tokenizer.vocab_size();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0x52, 0));
    let mut enc = TextEncoder::new(&tcfg, &mut rng)?;
    let mut classifier = Linear::new(tcfg.embed_dim, ds.schema.arity(), &mut rng);
    let mut opt = AdamW::new(cfg.lr, cfg.weight_decay);
    let train_idx = ds.indices(Split::Train);
    let val_idx = ds.indices(Split::Val);
    if train_idx.is_empty() {
        return Err(CoreError::Data("no training studies".into()));
    }

    let mut step: u64 = 0;
    let mut best: Option<(f64, usize, TextStage1)> = None;
    for epoch in 0..cfg.epochs {
        let mut order = train_idx.clone();
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            for p in enc.params_mut() {
                p.zero_grad();
            }
            classifier.weight.zero_grad();
            classifier.bias.zero_grad();

            let mut tapes = Vec::with_capacity(batch.len());
            let mut z = Tensor::zeros(&[batch.len(), tcfg.embed_dim]);
            for (bi, &i) in batch.iter().enumerate() {
                let tape = enc.forward_train_dropout(&ds.studies[i].tokens, Some(&mut rng))?;
                z.data[bi * tcfg.embed_dim..(bi + 1) * tcfg.embed_dim]
                    .copy_from_slice(&tape.embed);
                tapes.push(tape);
            }
            let labels: Vec<&[i8]> = batch.iter().map(|&i| ds.studies[i].labels.as_slice()).collect();
            let logits = classifier.forward_rows(&z);
            let (bce, d_logits) = masked_bce_batch_grad(&logits, &labels, cfg.uncertain_policy)?;
            let dz = classifier.backward_rows(&z, &d_logits);
            for (bi, tape) in tapes.iter().enumerate() {
                enc.backward(tape, &dz.data[bi * tcfg.embed_dim..(bi + 1) * tcfg.embed_dim]);
            }
            check_finite(bce, "train loss")?;
            let mut params = enc.params_mut();
            params.push(&mut classifier.weight);
            params.push(&mut classifier.bias);
            if let Some(max) = cfg.clip_grad_norm {
                crate::nn::clip_grad_norm(&mut params, max);
            }
            opt.step(&mut params);
            trace.push(step, "train", "bce", bce);
            trace.push(step, "train", "total", bce);
            step += 1;
        }

        let vbce = eval_text(&enc, &classifier, ds, &val_idx, cfg)?;
        if !val_idx.is_empty() {
            trace.push(step, "val", "bce", vbce);
            trace.push(step, "val", "total", vbce);
            check_finite(vbce, "validation loss")?;
        }
        let score = if val_idx.is_empty() {
            trace.last("train", "total").unwrap_or(f64::INFINITY)
        } else {
            vbce
        };
        if best.as_ref().map_or(true, |(b, _, _)| score < *b) {
            best = Some((
                score,
                epoch,
                TextStage1 {
                    tokenizer: tokenizer.clone(),
                    encoder: enc.clone(),
                    classifier: classifier.clone(),
                    schema: ds.schema.clone(),
                },
            ));
        }
    }
    let (best_val, best_epoch, model) = best.expect("at least one epoch ran");
    Ok((model, best_epoch, best_val))
}

fn eval_text(
    enc: &TextEncoder,
    classifier: &Linear,
    ds: &Dataset,
    idx: &[usize],
    cfg: &TrainingConfig,
) -> Result<f64, CoreError> {
    if idx.is_empty() {
        return Ok(0.0);
    }
    let embed_dim = enc.cfg.embed_dim;
    let mut sum = 0.0;
    for chunk in idx.chunks(cfg.batch_size) {
        let mut z = Tensor::zeros(&[chunk.len(), embed_dim]);
        for (bi, &i) in chunk.iter().enumerate() {
            let e = enc.forward(&ds.studies[i].tokens)?;
            z.data[bi * embed_dim..(bi + 1) * embed_dim].copy_from_slice(&e);
        }
        let labels: Vec<&[i8]> = chunk.iter().map(|&i| ds.studies[i].labels.as_slice()).collect();
        let logits = classifier.forward_rows(&z);
        sum += masked_bce_batch(&logits, &labels, cfg.uncertain_policy)? * chunk.len() as f64;
    }
    Ok(sum / idx.len() as f64)
}
