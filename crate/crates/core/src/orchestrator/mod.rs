//! Training runs: configuration, the epoch loop, evaluation, logging and
//! checkpoints.

mod ablation;
mod config;
mod eval;
mod log;
mod trainer;

pub use ablation::{horizon_ablation, AblationRow};
pub use config::{RolloutSchedule, RunConfig};
pub use eval::{evaluate_detailed, evaluate_policy, EvalSummary};
pub use log::{EpochRecord, RunLog, Timings};
pub use trainer::{branched_rollout, offline_train, train_loop, ModelBuffer, Trainer};
