//! Stage 2: contrastive alignment of the matured encoders, and the joint
//! multi-task baseline trained from scratch at matched budget.

use crate::corpus::manifest::Split;
use crate::derive_seed;
use crate::encoders::{
    volume_to_input, AlignedModel, TextEncoder, TextEncoderConfig, TextStage1, Tokenizer,
    VisionEncoder, VisionEncoderConfig, VisionStage1,
};
use crate::error::CoreError;
use crate::nn::{AdamW, Linear, Tensor};
use crate::training::config::{StageKind, TrainingConfig};
use crate::training::data::Dataset;
use crate::training::losses::{
    masked_bce_batch_grad, total_align_loss, total_align_loss_grad, AlignComponents,
};
use crate::training::stage1::{StageOutcome, TrainAbort};
use crate::training::trace::LossTrace;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Validation alignment components over a split: center crops, fixed order,
/// weighted mean over batches. The clip term is the prompt-independent
/// alignment quality proxy.
pub fn validation_align_components(
    vision: &VisionEncoder,
    text: &TextEncoder,
    classifier: &Linear,
    ds: &Dataset,
    idx: &[usize],
    cfg: &TrainingConfig,
) -> Result<AlignComponents, CoreError> {
    if idx.is_empty() {
        return Ok(AlignComponents {
            clip: 0.0,
            cls_img: 0.0,
            cls_txt: 0.0,
            total: 0.0,
        });
    }
    let dim = vision.cfg.embed_dim;
    let mut acc = AlignComponents {
        clip: 0.0,
        cls_img: 0.0,
        cls_txt: 0.0,
        total: 0.0,
    };
    let mut n = 0usize;
    for chunk in idx.chunks(cfg.batch_size) {
        let mut z = Tensor::zeros(&[chunk.len(), dim]);
        let mut t = Tensor::zeros(&[chunk.len(), dim]);
        for (bi, &i) in chunk.iter().enumerate() {
            let (crop, _) = ds.eval_crop(i);
            let (_, ze) = vision.forward(&volume_to_input(&crop))?;
            z.data[bi * dim..(bi + 1) * dim].copy_from_slice(&ze);
            let te = text.forward(&ds.studies[i].tokens)?;
            t.data[bi * dim..(bi + 1) * dim].copy_from_slice(&te);
        }
        let labels: Vec<&[i8]> = chunk.iter().map(|&i| ds.studies[i].labels.as_slice()).collect();
        let c = total_align_loss(
            &z,
            &t,
            &labels,
            classifier,
            cfg.lambda_cls,
            cfg.uncertain_policy,
            cfg.l2_normalize,
        )?;
        let w = chunk.len() as f64;
        acc.clip += c.clip * w;
        acc.cls_img += c.cls_img * w;
        acc.cls_txt += c.cls_txt * w;
        acc.total += c.total * w;
        n += chunk.len();
    }
    let n = n as f64;
    Ok(AlignComponents {
        clip: acc.clip / n,
        cls_img: acc.cls_img / n,
        cls_txt: acc.cls_txt / n,
        total: acc.total / n,
    })
}

pub fn run_stage2_align(
    ds: &Dataset,
    vision_s1: &VisionStage1,
    text_s1: &TextStage1,
    cfg: &TrainingConfig,
) -> Result<StageOutcome<AlignedModel>, TrainAbort> {
    let mut trace = LossTrace::new();
    run_align_inner(ds, vision_s1, text_s1, cfg, &mut trace)
        .map(|(model, best_epoch, best_val)| StageOutcome {
            model,
            trace: trace.clone(),
            best_epoch,
            best_val_total: best_val,
        })
        .map_err(|e| TrainAbort {
            error: e,
            trace: trace.clone(),
        })
}

fn run_align_inner(
    ds: &Dataset,
    vision_s1: &VisionStage1,
    text_s1: &TextStage1,
    cfg: &TrainingConfig,
    trace: &mut LossTrace,
) -> Result<(AlignedModel, usize, f64), CoreError> {
    if cfg.stage != StageKind::Align {
        return Err(CoreError::Config("config stage must be align".into()));
    }
    cfg.validate()?;
    if vision_s1.encoder.cfg.embed_dim != text_s1.encoder.cfg.embed_dim {
        return Err(CoreError::Config(format!(
            "embed dims differ: vision {} vs text {}",
            vision_s1.encoder.cfg.embed_dim, text_s1.encoder.cfg.embed_dim
        )));
    }
    if vision_s1.classifier.dim_out() != ds.schema.arity() {
        return Err(CoreError::Config(format!(
            "classifier arity {} but schema has {}",
            vision_s1.classifier.dim_out(),
            ds.schema.arity()
        )));
    }
    // The shared classifier continues the diagnostic supervision started in
    // stage 1: it is seeded from the vision head and then shared by both
    // modalities.
    let mut model = AlignedModel {
        vision: vision_s1.encoder.clone(),
        text: text_s1.encoder.clone(),
        classifier: vision_s1.classifier.clone(),
        tokenizer: text_s1.tokenizer.clone(),
        schema: ds.schema.clone(),
        preset: ds.spec.name.clone(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0x53, 0));
    train_align_loop(ds, &mut model, cfg, &mut rng, trace, false)
}

pub fn run_joint_baseline(
    ds: &Dataset,
    vcfg: &VisionEncoderConfig,
    tokenizer: &Tokenizer,
    tcfg: &TextEncoderConfig,
    cfg: &TrainingConfig,
) -> Result<StageOutcome<AlignedModel>, TrainAbort> {
    let mut trace = LossTrace::new();
    run_joint_inner(ds, vcfg, tokenizer, tcfg, cfg, &mut trace)
        .map(|(model, best_epoch, best_val)| StageOutcome {
            model,
            trace: trace.clone(),
            best_epoch,
            best_val_total: best_val,
        })
        .map_err(|e| TrainAbort {
            error: e,
            trace: trace.clone(),
        })
}

fn run_joint_inner(
    ds: &Dataset,
    vcfg: &VisionEncoderConfig,
    tokenizer: &Tokenizer,
    tcfg: &TextEncoderConfig,
    cfg: &TrainingConfig,
    trace: &mut LossTrace,
) -> Result<(AlignedModel, usize, f64), CoreError> {
    if cfg.stage != StageKind::JointBaseline {
        return Err(CoreError::Config("config stage must be joint_baseline".into()));
    }
    cfg.validate()?;
    let mut tcfg = tcfg.clone();
    tcfg.vocab_size = tokenizer.vocab_size();
    if vcfg.embed_dim != tcfg.embed_dim {
        return Err(CoreError::Config("embed dims must match".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0x54, 0));
    let vision = VisionEncoder::new(vcfg, &mut rng)?;
    let text = TextEncoder::new(&tcfg, &mut rng)?;
    let classifier = Linear::new(vcfg.embed_dim, ds.schema.arity(), &mut rng);
    let mut model = AlignedModel {
        vision,
        text,
        classifier,
        tokenizer: tokenizer.clone(),
        schema: ds.schema.clone(),
        preset: ds.spec.name.clone(),
    };
    train_align_loop(ds, &mut model, cfg, &mut rng, trace, true)
}

/// Shared optimization loop for the align stage and the joint baseline.
/// With `with_vision_bce`, adds the from-scratch image classification term.
fn train_align_loop(
    ds: &Dataset,
    model: &mut AlignedModel,
    cfg: &TrainingConfig,
    rng: &mut ChaCha8Rng,
    trace: &mut LossTrace,
    with_vision_bce: bool,
) -> Result<(AlignedModel, usize, f64), CoreError> {
    let dim = model.vision.cfg.embed_dim;
    let mut opt = AdamW::new(cfg.lr, cfg.weight_decay);
    let train_idx = ds.indices(Split::Train);
    let val_idx = ds.indices(Split::Val);
    if train_idx.is_empty() {
        return Err(CoreError::Data("no training studies".into()));
    }

    let mut step: u64 = 0;
    let mut best: Option<(f64, usize, AlignedModel)> = None;
    for epoch in 0..cfg.epochs {
        let mut order = train_idx.clone();
        order.shuffle(rng);
        for batch in order.chunks(cfg.batch_size) {
            if batch.len() < 2 {
                continue; // contrastive term needs a negative
            }
            for p in model.vision.params_mut() {
                p.zero_grad();
            }
            for p in model.text.params_mut() {
                p.zero_grad();
            }
            model.classifier.weight.zero_grad();
            model.classifier.bias.zero_grad();

            let mut vtapes = Vec::with_capacity(batch.len());
            let mut ttapes = Vec::with_capacity(batch.len());
            let mut z = Tensor::zeros(&[batch.len(), dim]);
            let mut t = Tensor::zeros(&[batch.len(), dim]);
            for (bi, &i) in batch.iter().enumerate() {
                let (crop, _) = ds.train_crop(i, rng);
                let vt = model.vision.forward_train(&volume_to_input(&crop))?;
                z.data[bi * dim..(bi + 1) * dim].copy_from_slice(&vt.embed);
                vtapes.push(vt);
                let tt = model.text.forward_train_dropout(&ds.studies[i].tokens, Some(rng))?;
                t.data[bi * dim..(bi + 1) * dim].copy_from_slice(&tt.embed);
                ttapes.push(tt);
            }
            let labels: Vec<&[i8]> = batch.iter().map(|&i| ds.studies[i].labels.as_slice()).collect();
            let (comps, mut dz, dt) = total_align_loss_grad(
                &z,
                &t,
                &labels,
                &mut model.classifier,
                cfg.lambda_cls,
                cfg.uncertain_policy,
                cfg.l2_normalize,
            )?;
            let mut total = comps.total;
            let mut extra_bce = 0.0;
            if with_vision_bce {
                let logits = model.classifier.forward_rows(&z);
                let (bce, d_logits) =
                    masked_bce_batch_grad(&logits, &labels, cfg.uncertain_policy)?;
                extra_bce = bce;
                total += bce;
                let dz2 = model.classifier.backward_rows(&z, &d_logits);
                for (a, b) in dz.data.iter_mut().zip(&dz2.data) {
                    *a += b;
                }
            }
            if !total.is_finite() {
                return Err(CoreError::Divergence("train loss is not finite".into()));
            }
            for (bi, vt) in vtapes.iter().enumerate() {
                model
                    .vision
                    .backward(vt, &dz.data[bi * dim..(bi + 1) * dim], None);
            }
            for (bi, tt) in ttapes.iter().enumerate() {
                model.text.backward(tt, &dt.data[bi * dim..(bi + 1) * dim]);
            }

            if cfg.train_projections_only {
                let mut params = vec![
                    &mut model.vision.proj.weight,
                    &mut model.vision.proj.bias,
                    &mut model.text.proj.weight,
                    &mut model.text.proj.bias,
                    &mut model.classifier.weight,
                    &mut model.classifier.bias,
                ];
                if let Some(max) = cfg.clip_grad_norm {
                    crate::nn::clip_grad_norm(&mut params, max);
                }
                opt.step(&mut params);
            } else {
                let mut params = model.vision.params_mut();
                params.extend(model.text.params_mut());
                params.push(&mut model.classifier.weight);
                params.push(&mut model.classifier.bias);
                if let Some(max) = cfg.clip_grad_norm {
                    crate::nn::clip_grad_norm(&mut params, max);
                }
                opt.step(&mut params);
            }

            trace.push(step, "train", "clip", comps.clip);
            trace.push(step, "train", "cls_img", comps.cls_img);
            trace.push(step, "train", "cls_txt", comps.cls_txt);
            if with_vision_bce {
                trace.push(step, "train", "bce", extra_bce);
            }
            trace.push(step, "train", "total", total);
            step += 1;
        }

        if !val_idx.is_empty() {
            let c = validation_align_components(
                &model.vision,
                &model.text,
                &model.classifier,
                ds,
                &val_idx,
                cfg,
            )?;
            trace.push(step, "val", "clip", c.clip);
            trace.push(step, "val", "cls_img", c.cls_img);
            trace.push(step, "val", "cls_txt", c.cls_txt);
            trace.push(step, "val", "total", c.total);
            if !c.total.is_finite() {
                return Err(CoreError::Divergence("validation loss is not finite".into()));
            }
            if best.as_ref().map_or(true, |(b, _, _)| c.total < *b) {
                best = Some((c.total, epoch, model.clone()));
            }
        } else {
            let score = trace.last("train", "total").unwrap_or(f64::INFINITY);
            if best.as_ref().map_or(true, |(b, _, _)| score < *b) {
                best = Some((score, epoch, model.clone()));
            }
        }
    }
    let (best_val, best_epoch, best_model) = best.expect("at least one epoch ran");
    Ok((best_model, best_epoch, best_val))
}
