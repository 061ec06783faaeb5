//! Vision and text encoders, the shared classifier, the segmentation
//! decoder, and checkpoint bundles.

pub mod checkpoint;
pub mod seg;
pub mod text;
pub mod vision;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointData, CKPT_VERSION};
pub use seg::{SegDecoder, SegTape};
pub use text::{split_words, TextEncoder, TextEncoderConfig, TextTape, Tokenizer, CLS_ID, UNK_ID};
pub use vision::{PoolingKind, StemKind, VisionEncoder, VisionEncoderConfig, VisionTape};

use crate::corpus::volume::VolumeTensor;
use crate::error::CoreError;
use crate::nn::{Linear, Tensor};
use crate::schema::LabelSchema;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// View a volume crop as a `[1, D, H, W]` network input. The volume's
/// d-major layout is already `[D, H, W]` row-major, so this is a copy with a
/// reshape.
pub fn volume_to_input(vol: &VolumeTensor) -> Tensor {
    Tensor::from_vec(
        &[1, vol.shape[2], vol.shape[0], vol.shape[1]],
        vol.data.clone(),
    )
}

#[derive(Debug, Serialize, Deserialize)]
struct VisionMeta {
    cfg: VisionEncoderConfig,
    arity: usize,
    seg_classes: Option<usize>,
    schema: LabelSchema,
    preset: String,
}

/// Stage-1 vision bundle: encoder + classification head (+ seg decoder).
#[derive(Debug, Clone)]
pub struct VisionStage1 {
    pub encoder: VisionEncoder,
    pub classifier: Linear,
    pub seg: Option<SegDecoder>,
    pub schema: LabelSchema,
    /// Preprocessing preset the encoder was trained under.
    pub preset: String,
}

impl VisionStage1 {
    pub fn save(&self, path: &Path) -> Result<(), CoreError> {
        let meta = VisionMeta {
            cfg: self.encoder.cfg.clone(),
            arity: self.classifier.dim_out(),
            seg_classes: self.seg.as_ref().map(|s| s.n_classes),
            schema: self.schema.clone(),
            preset: self.preset.clone(),
        };
        let mut arrays: Vec<(String, Tensor)> = self
            .encoder
            .named_params()
            .into_iter()
            .map(|(n, t)| (format!("vision.{n}"), t.clone()))
            .collect();
        arrays.push(("classifier.weight".into(), self.classifier.weight.value.clone()));
        arrays.push(("classifier.bias".into(), self.classifier.bias.value.clone()));
        if let Some(seg) = &self.seg {
            for (n, t) in seg.named_params() {
                arrays.push((format!("seg.{n}"), t.clone()));
            }
        }
        save_checkpoint(
            path,
            &CheckpointData {
                version: CKPT_VERSION,
                kind: "vision-stage1".into(),
                meta: serde_json::to_value(meta).expect("meta"),
                arrays,
            },
        )
    }

    pub fn load(path: &Path) -> Result<Self, CoreError> {
        let data = load_checkpoint(path)?;
        if data.kind != "vision-stage1" {
            return Err(CoreError::Data(format!(
                "{}: expected vision-stage1 checkpoint, got {}",
                path.display(),
                data.kind
            )));
        }
        let meta: VisionMeta = serde_json::from_value(data.meta.clone())
            .map_err(|e| CoreError::Data(format!("bad vision meta: {e}")))?;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut encoder = VisionEncoder::new(&meta.cfg, &mut rng)?;
        let vision_arrays: Vec<(String, Tensor)> = data
            .arrays
            .iter()
            .filter_map(|(n, t)| n.strip_prefix("vision.").map(|s| (s.to_string(), t.clone())))
            .collect();
        encoder.load_named(&vision_arrays)?;
        let mut classifier = Linear::new(meta.cfg.embed_dim, meta.arity, &mut rng);
        load_linear(&mut classifier, &data.arrays, "classifier")?;
        let seg = match meta.seg_classes {
            Some(k) => {
                let mut s = SegDecoder::new(
                    *meta.cfg.channels_per_stage.last().unwrap(),
                    k,
                    meta.cfg.total_stride(),
                    &mut rng,
                )?;
                let seg_arrays: Vec<(String, Tensor)> = data
                    .arrays
                    .iter()
                    .filter_map(|(n, t)| n.strip_prefix("seg.").map(|s| (s.to_string(), t.clone())))
                    .collect();
                s.load_named(&seg_arrays)?;
                Some(s)
            }
            None => None,
        };
        Ok(VisionStage1 {
            encoder,
            classifier,
            seg,
            schema: meta.schema,
            preset: meta.preset,
        })
    }
}

fn load_linear(
    lin: &mut Linear,
    arrays: &[(String, Tensor)],
    prefix: &str,
) -> Result<(), CoreError> {
    let w = arrays
        .iter()
        .find(|(n, _)| n == &format!("{prefix}.weight"))
        .ok_or_else(|| CoreError::Data(format!("checkpoint missing {prefix}.weight")))?;
    let b = arrays
        .iter()
        .find(|(n, _)| n == &format!("{prefix}.bias"))
        .ok_or_else(|| CoreError::Data(format!("checkpoint missing {prefix}.bias")))?;
    if w.1.shape != lin.weight.value.shape || b.1.shape != lin.bias.value.shape {
        return Err(CoreError::Data(format!("{prefix}: shape mismatch")));
    }
    lin.weight.value = w.1.clone();
    lin.bias.value = b.1.clone();
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct TextMeta {
    cfg: TextEncoderConfig,
    arity: usize,
    schema: LabelSchema,
    vocab: Vec<String>,
}

/// Stage-1 text bundle: tokenizer + encoder + CLS classification head.
#[derive(Debug, Clone)]
pub struct TextStage1 {
    pub tokenizer: Tokenizer,
    pub encoder: TextEncoder,
    pub classifier: Linear,
    pub schema: LabelSchema,
}

impl TextStage1 {
    pub fn save(&self, path: &Path) -> Result<(), CoreError> {
        let meta = TextMeta {
            cfg: self.encoder.cfg.clone(),
            arity: self.classifier.dim_out(),
            schema: self.schema.clone(),
            vocab: self.tokenizer.words.clone(),
        };
        let mut arrays: Vec<(String, Tensor)> = self
            .encoder
            .named_params()
            .into_iter()
            .map(|(n, t)| (format!("text.{n}"), t.clone()))
            .collect();
        arrays.push(("classifier.weight".into(), self.classifier.weight.value.clone()));
        arrays.push(("classifier.bias".into(), self.classifier.bias.value.clone()));
        save_checkpoint(
            path,
            &CheckpointData {
                version: CKPT_VERSION,
                kind: "text-stage1".into(),
                meta: serde_json::to_value(meta).expect("meta"),
                arrays,
            },
        )
    }

    pub fn load(path: &Path) -> Result<Self, CoreError> {
        let data = load_checkpoint(path)?;
        if data.kind != "text-stage1" {
            return Err(CoreError::Data(format!(
                "{}: expected text-stage1 checkpoint, got {}",
                path.display(),
                data.kind
            )));
        }
        let meta: TextMeta = serde_json::from_value(data.meta.clone())
            .map_err(|e| CoreError::Data(format!("bad text meta: {e}")))?;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut encoder = TextEncoder::new(&meta.cfg, &mut rng)?;
        let text_arrays: Vec<(String, Tensor)> = data
            .arrays
            .iter()
            .filter_map(|(n, t)| n.strip_prefix("text.").map(|s| (s.to_string(), t.clone())))
            .collect();
        encoder.load_named(&text_arrays)?;
        let mut classifier = Linear::new(meta.cfg.embed_dim, meta.arity, &mut rng);
        load_linear(&mut classifier, &data.arrays, "classifier")?;
        Ok(TextStage1 {
            tokenizer: Tokenizer::from_words(meta.vocab),
            encoder,
            classifier,
            schema: meta.schema,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct AlignedMeta {
    vision_cfg: VisionEncoderConfig,
    text_cfg: TextEncoderConfig,
    arity: usize,
    schema: LabelSchema,
    vocab: Vec<String>,
    preset: String,
}

/// Stage-2 artifact: both encoders plus the shared classifier.
#[derive(Debug, Clone)]
pub struct AlignedModel {
    pub vision: VisionEncoder,
    pub text: TextEncoder,
    /// One affine head applied identically to image and text embeddings.
    pub classifier: Linear,
    pub tokenizer: Tokenizer,
    pub schema: LabelSchema,
    /// Preprocessing preset the model was trained under.
    pub preset: String,
}

impl AlignedModel {
    pub fn embed_volume(&self, crop: &VolumeTensor) -> Result<Vec<f64>, CoreError> {
        Ok(self.vision.forward(&volume_to_input(crop))?.1)
    }

    pub fn embed_text(&self, text: &str) -> Result<Vec<f64>, CoreError> {
        let tokens = self.tokenizer.encode(text, self.text.cfg.max_tokens);
        self.text.forward(&tokens)
    }

    pub fn save(&self, path: &Path) -> Result<(), CoreError> {
        let meta = AlignedMeta {
            vision_cfg: self.vision.cfg.clone(),
            text_cfg: self.text.cfg.clone(),
            arity: self.classifier.dim_out(),
            schema: self.schema.clone(),
            vocab: self.tokenizer.words.clone(),
            preset: self.preset.clone(),
        };
        let mut arrays: Vec<(String, Tensor)> = self
            .vision
            .named_params()
            .into_iter()
            .map(|(n, t)| (format!("vision.{n}"), t.clone()))
            .collect();
        arrays.extend(
            self.text
                .named_params()
                .into_iter()
                .map(|(n, t)| (format!("text.{n}"), t.clone())),
        );
        arrays.push(("classifier.weight".into(), self.classifier.weight.value.clone()));
        arrays.push(("classifier.bias".into(), self.classifier.bias.value.clone()));
        save_checkpoint(
            path,
            &CheckpointData {
                version: CKPT_VERSION,
                kind: "aligned".into(),
                meta: serde_json::to_value(meta).expect("meta"),
                arrays,
            },
        )
    }

    pub fn load(path: &Path) -> Result<Self, CoreError> {
        let data = load_checkpoint(path)?;
        if data.kind != "aligned" {
            return Err(CoreError::Data(format!(
                "{}: expected aligned checkpoint, got {}",
                path.display(),
                data.kind
            )));
        }
        let meta: AlignedMeta = serde_json::from_value(data.meta.clone())
            .map_err(|e| CoreError::Data(format!("bad aligned meta: {e}")))?;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut vision = VisionEncoder::new(&meta.vision_cfg, &mut rng)?;
        let va: Vec<(String, Tensor)> = data
            .arrays
            .iter()
            .filter_map(|(n, t)| n.strip_prefix("vision.").map(|s| (s.to_string(), t.clone())))
            .collect();
        vision.load_named(&va)?;
        let mut text = TextEncoder::new(&meta.text_cfg, &mut rng)?;
        let ta: Vec<(String, Tensor)> = data
            .arrays
            .iter()
            .filter_map(|(n, t)| n.strip_prefix("text.").map(|s| (s.to_string(), t.clone())))
            .collect();
        text.load_named(&ta)?;
        let mut classifier = Linear::new(meta.vision_cfg.embed_dim, meta.arity, &mut rng);
        load_linear(&mut classifier, &data.arrays, "classifier")?;
        Ok(AlignedModel {
            vision,
            text,
            classifier,
            tokenizer: Tokenizer::from_words(meta.vocab),
            schema: meta.schema,
            preset: meta.preset,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn aligned_model_round_trips_through_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("aligned.ckpt");
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let vcfg = VisionEncoderConfig {
            channels_per_stage: vec![4, 8],
            blocks_per_stage: vec![1, 1],
            stem: StemKind::Lite,
            pooling: PoolingKind::Gap,
            embed_dim: 12,
        };
        let tok = Tokenizer::build(["there is nodule .", "no effusion ."]);
        let tcfg = TextEncoderConfig {
            vocab_size: tok.vocab_size(),
            layers: 1,
            heads: 2,
            hidden_dim: 8,
            max_tokens: 10,
            embed_dim: 12,
            cls_token_id: CLS_ID,
            dropout: 0.0,
        };
        let model = AlignedModel {
            vision: VisionEncoder::new(&vcfg, &mut rng).unwrap(),
            text: TextEncoder::new(&tcfg, &mut rng).unwrap(),
            classifier: Linear::new(12, 8, &mut rng),
            tokenizer: tok,
            schema: crate::schema::schema_desk_8(),
            preset: "desk".into(),
        };
        model.save(&path).unwrap();
        let loaded = AlignedModel::load(&path).unwrap();
        assert_eq!(loaded.schema.name, "desk-8");
        assert_eq!(loaded.preset, "desk");
        let e1 = model.embed_text("there is nodule .").unwrap();
        let e2 = loaded.embed_text("there is nodule .").unwrap();
        assert_eq!(e1, e2);
        assert_eq!(
            model.classifier.weight.value.data,
            loaded.classifier.weight.value.data
        );
        assert!(VisionStage1::load(&path).is_err());
    }
}
