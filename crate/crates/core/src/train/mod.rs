//! L1 objective, Adam with step decay, the epoch loop, and the
//! finite-difference gradient check.

mod adam;
mod gradient_check;
mod schedule;
mod trainer;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradient_check::{gradient_check, GradCheckOptions, GradCheckReport, TensorCheck};
pub use schedule::LrSchedule;
pub use trainer::{epoch_order, evaluate, predict_all, train_loop, EpochMetrics, TrainConfig, TrainOutcome};

pub use crate::ops::l1_loss;
