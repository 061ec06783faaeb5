//! Two-stage training (supervised pre-training then contrastive alignment),
//! the joint multi-task baseline, and all loss functions.

pub mod config;
pub mod data;
pub mod losses;
pub mod stage1;
pub mod stage2;
pub mod trace;

pub use config::{StageKind, TrainingConfig};
pub use data::{Dataset, LoadOptions, TrainStudy};
pub use losses::{
    contrastive_loss, contrastive_loss_grad, masked_bce, masked_bce_batch, masked_bce_batch_grad,
    masked_bce_grad, seg_ce, seg_ce_grad, total_align_loss, total_align_loss_grad,
    AlignComponents, UncertainPolicy,
};
pub use stage1::{run_stage1_text, run_stage1_vision, StageOutcome, TrainAbort};
pub use stage2::{run_joint_baseline, run_stage2_align, validation_align_components};
pub use trace::{LossTrace, TraceRow};
