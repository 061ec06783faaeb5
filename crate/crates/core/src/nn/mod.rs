//! Minimal f64 neural-network substrate with hand-written backward passes.

pub mod adamw;
pub mod attention;
pub mod conv3d;
pub mod linear;
pub mod tensor;

pub use adamw::{clip_grad_norm, AdamW};
pub use attention::{Mhsa, MhsaCache};
pub use conv3d::{relu, relu_backward, Conv3d, ConvTranspose3d};
pub use linear::{LayerNorm, Linear};
pub use tensor::{dot, log_sum_exp, matmul, matmul_at, matmul_bt, sigmoid, Param, Tensor};
