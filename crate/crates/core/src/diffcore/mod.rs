//! Minimal differentiable tensor layer: kernels, a reverse-mode tape,
//! AdamW, and a central-difference gradient checker.

mod functional;
mod gradcheck;
pub mod kernels;
mod optim;
mod tape;
mod tensor;

pub use functional::{pool, BatchNormStats, PoolKind};
pub use gradcheck::{grad_check, grad_check_filtered, GradCheckReport};
pub use kernels::Conv2dGeom;
pub use optim::{adamw_step, AdamWConfig, OptimizerState};
pub use tape::{BnMode, CustomBackward, Gradients, Tape, Var};
pub use tensor::{Real, Tensor};
