//! Training configuration.

use crate::error::CoreError;
use crate::training::losses::UncertainPolicy;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageKind {
    VisionPretrain,
    TextPretrain,
    Align,
    JointBaseline,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    pub stage: StageKind,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// λ on the shared-classifier terms of the stage-2 objective.
    pub lambda_cls: f64,
    pub uncertain_policy: UncertainPolicy,
    pub use_seg: bool,
    /// Ablation flag: unit-normalize embeddings inside the contrastive loss.
    pub l2_normalize: bool,
    pub seed: u64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    /// Global gradient-norm clip applied before every optimizer step.
    #[serde(default = "default_clip_grad_norm")]
    pub clip_grad_norm: Option<f64>,
    /// Stage-2 smoke-test mode: train only the projection heads and the
    /// shared classifier, freezing encoder bodies.
    #[serde(default)]
    pub train_projections_only: bool,
}

fn default_weight_decay() -> f64 {
    0.01
}

fn default_clip_grad_norm() -> Option<f64> {
    None
}

impl TrainingConfig {
    pub fn new(stage: StageKind, lr: f64, epochs: usize, seed: u64) -> Self {
        TrainingConfig {
            stage,
            lr,
            batch_size: 10,
            epochs,
            lambda_cls: 1.0,
            uncertain_policy: UncertainPolicy::Ignore,
            use_seg: matches!(stage, StageKind::VisionPretrain),
            l2_normalize: false,
            seed,
            weight_decay: default_weight_decay(),
            clip_grad_norm: default_clip_grad_norm(),
            train_projections_only: false,
        }
    }

    pub fn validate(&self) -> Result<(), CoreError> {
        if !(self.lr > 0.0) {
            return Err(CoreError::Config(format!("lr must be > 0, got {}", self.lr)));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(CoreError::Config("epochs and batch_size must be >= 1".into()));
        }
        if matches!(self.stage, StageKind::Align | StageKind::JointBaseline)
            && self.batch_size < 2
        {
            return Err(CoreError::Config(
                "contrastive stages need batch_size >= 2 (negatives)".into(),
            ));
        }
        if self.lambda_cls < 0.0 {
            return Err(CoreError::Config("lambda_cls must be >= 0".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn align_stage_requires_batch_of_two() {
        let mut c = TrainingConfig::new(StageKind::Align, 1e-5, 5, 1);
        c.batch_size = 1;
        assert!(c.validate().is_err());
        c.batch_size = 2;
        assert!(c.validate().is_ok());
        let mut v = TrainingConfig::new(StageKind::VisionPretrain, 1e-4, 5, 1);
        v.batch_size = 1;
        assert!(v.validate().is_ok());
        v.lr = 0.0;
        assert!(v.validate().is_err());
    }
}
