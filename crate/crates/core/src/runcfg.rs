//! Run configuration: one JSON document covering corpus synthesis, encoder
//! configs, per-stage training settings, and evaluation options. Parsing is
//! strict (unknown keys are rejected) and the document is validated before
//! any work starts.

use crate::corpus::presets::preset_by_name;
use crate::corpus::synth::SynthParams;
use crate::encoders::{TextEncoderConfig, VisionEncoderConfig};
use crate::error::CoreError;
use crate::schema::bundled_schema;
use crate::training::config::{StageKind, TrainingConfig};
use crate::training::losses::UncertainPolicy;
use serde::{Deserialize, Serialize};

pub const RUNCONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    pub vision_pretrain: TrainingConfig,
    pub text_pretrain: TrainingConfig,
    pub align: TrainingConfig,
    pub joint: TrainingConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    /// 1-based index into the prompt bank.
    pub prompt_index: usize,
    pub threshold: f64,
    pub ks: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub seed: u64,
    /// Preprocessing preset name (chest, abdomen, abd-5mm, mri, desk).
    pub preset: String,
    /// Bundled label schema name.
    pub label_schema: String,
    pub synth: SynthParams,
    pub vision: VisionEncoderConfig,
    pub text: TextEncoderConfig,
    pub training: TrainingSection,
    pub eval: EvalSection,
}

impl RunConfig {
    /// Desk-scale defaults: the full pipeline runs on one CPU in minutes.
    pub fn desk_default(seed: u64) -> Self {
        let mk = |stage: StageKind, lr: f64, epochs: usize| {
            let mut c = TrainingConfig::new(stage, lr, epochs, seed);
            c.uncertain_policy = UncertainPolicy::Ignore;
            c
        };
        let mut vision_pretrain = mk(StageKind::VisionPretrain, 5e-3, 5);
        vision_pretrain.use_seg = true;
        let text_pretrain = mk(StageKind::TextPretrain, 2e-3, 5);
        let align = mk(StageKind::Align, 2e-3, 5);
        // Matched budget: stage1 + stage2 epochs of the two-stage run.
        let joint = mk(StageKind::JointBaseline, 2e-3, 10);
        RunConfig {
            schema_version: RUNCONFIG_SCHEMA_VERSION,
            seed,
            preset: "desk".into(),
            label_schema: "desk-8".into(),
            synth: SynthParams::default(),
            vision: VisionEncoderConfig {
                channels_per_stage: vec![12, 24],
                blocks_per_stage: vec![1, 1],
                stem: crate::encoders::StemKind::Lite,
                pooling: crate::encoders::PoolingKind::Gap,
                embed_dim: 48,
            },
            text: TextEncoderConfig {
                vocab_size: 0,
                layers: 2,
                heads: 4,
                hidden_dim: 48,
                max_tokens: 96,
                embed_dim: 48,
                cls_token_id: crate::encoders::CLS_ID,
                dropout: 0.2,
            },
            training: TrainingSection {
                vision_pretrain,
                text_pretrain,
                align,
                joint,
            },
            eval: EvalSection {
                prompt_index: 3,
                threshold: 0.5,
                ks: vec![1, 5, 10, 50, 100],
            },
        }
    }

    /// Paper-scale stage settings (reference values; the desk preset
    /// overrides learning rates for its much smaller encoders).
    pub fn paper_training(seed: u64) -> TrainingSection {
        let mut vision_pretrain = TrainingConfig::new(StageKind::VisionPretrain, 1e-4, 5, seed);
        vision_pretrain.use_seg = true;
        TrainingSection {
            vision_pretrain,
            text_pretrain: TrainingConfig::new(StageKind::TextPretrain, 1e-5, 5, seed),
            align: TrainingConfig::new(StageKind::Align, 1e-5, 5, seed),
            joint: TrainingConfig::new(StageKind::JointBaseline, 1e-5, 10, seed),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, CoreError> {
        let cfg: RunConfig = serde_json::from_str(text)
            .map_err(|e| CoreError::Config(format!("config does not validate: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), CoreError> {
        if self.schema_version != RUNCONFIG_SCHEMA_VERSION {
            return Err(CoreError::Config(format!(
                "schema_version must be {RUNCONFIG_SCHEMA_VERSION}, got {}",
                self.schema_version
            )));
        }
        let preset = preset_by_name(&self.preset)
            .ok_or_else(|| CoreError::Config(format!("unknown preset {:?}", self.preset)))?;
        preset.validate()?;
        bundled_schema(&self.label_schema).ok_or_else(|| {
            CoreError::Config(format!("unknown label schema {:?}", self.label_schema))
        })?;
        self.vision.validate()?;
        // vocab_size is filled from the corpus tokenizer at run time.
        if self.text.hidden_dim % self.text.heads != 0 {
            return Err(CoreError::Config(
                "text hidden_dim must be divisible by heads".into(),
            ));
        }
        if self.vision.embed_dim != self.text.embed_dim {
            return Err(CoreError::Config(
                "vision and text embed_dim must match for alignment".into(),
            ));
        }
        for (name, tc, stage) in [
            ("vision_pretrain", &self.training.vision_pretrain, StageKind::VisionPretrain),
            ("text_pretrain", &self.training.text_pretrain, StageKind::TextPretrain),
            ("align", &self.training.align, StageKind::Align),
            ("joint", &self.training.joint, StageKind::JointBaseline),
        ] {
            if tc.stage != stage {
                return Err(CoreError::Config(format!(
                    "training.{name}.stage must be {stage:?}"
                )));
            }
            tc.validate()?;
        }
        if self.eval.prompt_index == 0 || self.eval.prompt_index > 5 {
            return Err(CoreError::Config("eval.prompt_index must be 1..=5".into()));
        }
        if !(self.eval.threshold > 0.0 && self.eval.threshold < 1.0) {
            return Err(CoreError::Config("eval.threshold must be in (0,1)".into()));
        }
        if self.eval.ks.is_empty() || self.eval.ks.windows(2).any(|w| w[0] >= w[1]) {
            return Err(CoreError::Config(
                "eval.ks must be nonempty and strictly increasing".into(),
            ));
        }
        Ok(())
    }
}

/// Published JSON Schema for the run configuration document.
pub const RUNCONFIG_JSON_SCHEMA: &str = r##"{
  "$schema": "http://json-schema.org/draft-07/schema#",
  "title": "RunConfig",
  "type": "object",
  "additionalProperties": false,
  "required": ["schema_version", "seed", "preset", "label_schema", "synth", "vision", "text", "training", "eval"],
  "properties": {
    "schema_version": { "type": "integer", "const": 1 },
    "seed": { "type": "integer", "minimum": 0 },
    "preset": { "enum": ["chest", "abdomen", "abd-5mm", "mri", "desk"] },
    "label_schema": { "enum": ["diagnostic-18", "diagnostic-30", "visual-11", "desk-8"] },
    "synth": {
      "type": "object",
      "additionalProperties": false,
      "properties": {
        "n_studies": { "type": "integer", "minimum": 1 },
        "shape": { "type": "array", "items": { "type": "integer", "minimum": 1 }, "minItems": 3, "maxItems": 3 },
        "spacing_mm": { "type": "array", "items": { "type": "number", "exclusiveMinimum": 0 }, "minItems": 3, "maxItems": 3 },
        "prevalence": { "type": "number", "minimum": 0, "maximum": 1 },
        "uncertain_rate": { "type": "number", "minimum": 0, "maximum": 1 },
        "negation_rate": { "type": "number", "minimum": 0, "maximum": 1 },
        "fillers": { "type": "array", "items": { "type": "integer", "minimum": 0 }, "minItems": 2, "maxItems": 2 },
        "contrast_scale": { "type": "number", "exclusiveMinimum": 0 },
        "noise_hu": { "type": "number", "minimum": 0 },
        "smooth_hu": { "type": "number", "minimum": 0 },
        "render_uncertain_faint": { "type": "boolean" },
        "split_fractions": { "type": "array", "items": { "type": "number", "minimum": 0, "maximum": 1 }, "minItems": 3, "maxItems": 3 },
        "forced_labels": { "type": "array", "items": { "type": "integer", "enum": [-1, 0, 1] } }
      }
    },
    "vision": {
      "type": "object",
      "additionalProperties": false,
      "required": ["channels_per_stage", "blocks_per_stage", "stem", "pooling", "embed_dim"],
      "properties": {
        "channels_per_stage": { "type": "array", "items": { "type": "integer", "minimum": 1 }, "minItems": 1 },
        "blocks_per_stage": { "type": "array", "items": { "type": "integer", "minimum": 1 }, "minItems": 1 },
        "stem": { "enum": ["standard", "lite"] },
        "pooling": { "enum": ["gap", "max", "noisy_or"] },
        "embed_dim": { "type": "integer", "minimum": 1 }
      }
    },
    "text": {
      "type": "object",
      "additionalProperties": false,
      "required": ["vocab_size", "layers", "heads", "hidden_dim", "max_tokens", "embed_dim", "cls_token_id"],
      "properties": {
        "vocab_size": { "type": "integer", "minimum": 0 },
        "layers": { "type": "integer", "minimum": 1 },
        "heads": { "type": "integer", "minimum": 1 },
        "hidden_dim": { "type": "integer", "minimum": 1 },
        "max_tokens": { "type": "integer", "minimum": 1 },
        "embed_dim": { "type": "integer", "minimum": 1 },
        "cls_token_id": { "type": "integer", "minimum": 0 },
        "dropout": { "type": "number", "minimum": 0, "exclusiveMaximum": 1 }
      }
    },
    "training": {
      "type": "object",
      "additionalProperties": false,
      "required": ["vision_pretrain", "text_pretrain", "align", "joint"],
      "properties": {
        "vision_pretrain": { "$ref": "#/definitions/training_config" },
        "text_pretrain": { "$ref": "#/definitions/training_config" },
        "align": { "$ref": "#/definitions/training_config" },
        "joint": { "$ref": "#/definitions/training_config" }
      }
    },
    "eval": {
      "type": "object",
      "additionalProperties": false,
      "required": ["prompt_index", "threshold", "ks"],
      "properties": {
        "prompt_index": { "type": "integer", "minimum": 1, "maximum": 5 },
        "threshold": { "type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1 },
        "ks": { "type": "array", "items": { "type": "integer", "minimum": 1 }, "minItems": 1 }
      }
    }
  },
  "definitions": {
    "training_config": {
      "type": "object",
      "additionalProperties": false,
      "required": ["stage", "lr", "batch_size", "epochs", "lambda_cls", "uncertain_policy", "use_seg", "l2_normalize", "seed"],
      "properties": {
        "stage": { "enum": ["vision_pretrain", "text_pretrain", "align", "joint_baseline"] },
        "lr": { "type": "number", "exclusiveMinimum": 0 },
        "batch_size": { "type": "integer", "minimum": 1 },
        "epochs": { "type": "integer", "minimum": 1 },
        "lambda_cls": { "type": "number", "minimum": 0 },
        "uncertain_policy": { "enum": ["ignore", "map_to_negative"] },
        "use_seg": { "type": "boolean" },
        "l2_normalize": { "type": "boolean" },
        "seed": { "type": "integer", "minimum": 0 },
        "weight_decay": { "type": "number", "minimum": 0 },
        "clip_grad_norm": { "type": ["number", "null"], "exclusiveMinimum": 0 },
        "train_projections_only": { "type": "boolean" }
      }
    }
  }
}
"##;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_default_validates_and_round_trips() {
        let cfg = RunConfig::desk_default(7);
        cfg.validate().unwrap();
        let text = cfg.to_json();
        let back = RunConfig::from_json(&text).unwrap();
        assert_eq!(back.to_json(), text);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut v: serde_json::Value =
            serde_json::from_str(&RunConfig::desk_default(1).to_json()).unwrap();
        v.as_object_mut()
            .unwrap()
            .insert("mystery_knob".into(), serde_json::json!(42));
        let err = RunConfig::from_json(&v.to_string()).unwrap_err().to_string();
        assert!(err.contains("mystery_knob"), "{err}");
    }

    #[test]
    fn bad_values_fail_validation() {
        let mut cfg = RunConfig::desk_default(1);
        cfg.eval.prompt_index = 9;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::desk_default(1);
        cfg.preset = "galactic".into();
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::desk_default(1);
        cfg.training.align.batch_size = 1;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::desk_default(1);
        cfg.schema_version = 2;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn published_schema_is_valid_json() {
        let v: serde_json::Value = serde_json::from_str(RUNCONFIG_JSON_SCHEMA).unwrap();
        assert_eq!(v["title"], "RunConfig");
    }

    #[test]
    fn paper_training_carries_published_settings() {
        let t = RunConfig::paper_training(0);
        assert_eq!(t.vision_pretrain.lr, 1e-4);
        assert_eq!(t.text_pretrain.lr, 1e-5);
        assert_eq!(t.align.lr, 1e-5);
        assert_eq!(t.vision_pretrain.batch_size, 10);
        assert_eq!(t.align.epochs, 5);
        assert_eq!(t.vision_pretrain.epochs, 5);
        assert_eq!(t.joint.epochs, 10);
    }
}
