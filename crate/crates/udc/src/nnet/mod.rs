//! Minimal differentiable compute substrate: dense tensors, the layer ops
//! the policies need, a reverse-mode tape, Adam, and checkpoint files.

pub mod checkpoint;
mod params;
mod tape;
mod tensor;

pub use params::{grad_norm, is_buffer, ParamStore, ADAM_BETA1, ADAM_BETA2, ADAM_EPS, BN_MOMENTUM};
pub use tape::{BnBatchStats, BnMode, Tape, ValueId, BN_EPS};
pub use tensor::{sigmoid, silu, Tensor};
