//! Dense network substrate: parameters, MLPs with low-rank adapters,
//! AdamW, finite-difference checking and checkpoints.

pub mod checkpoint;
pub mod gradcheck;
mod linalg;
pub mod mlp;
pub mod optim;
pub mod param;

pub use checkpoint::{Checkpoint, CheckpointMeta};
pub use gradcheck::{finite_diff_grad, max_rel_error};
pub use mlp::{Activation, Dense, LowRankAdapter, Mlp, MlpSpec};
pub use optim::{AdamWConfig, LrSchedule, OptimState, StepStats};
pub use param::{grad_norm, param_l2_sq, ParamBlock};
