//! Toy training: next-byte cross-entropy, hand-written backward pass,
//! finite-difference oracle, warmup-stable-decay schedule, group freezing
//! and Adam.

mod backward;
mod gradcheck;
mod schedule;
mod trainer;

pub use backward::{backward, loss, loss_and_grad, loss_and_grad_assigned};
pub use gradcheck::{gradient_check, perturb_params, rel_err, GradCheckEntry, GradCheckReport, REL_ERR_FLOOR};
pub use schedule::{GroupPolicy, GroupSetting, LrSchedule};
pub use trainer::{
    format_loss_curve, train_from, train_loop, Adam, AdamConfig, StepStats, TrainOptions, TrainResult,
};
