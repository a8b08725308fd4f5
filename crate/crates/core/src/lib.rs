//! Model-based reinforcement learning with a dynamics model that plans its rollouts.
//!
//! The model rollout process is treated as a decision problem of its own: the
//! dynamics model picks next states, the current policy plays the role of the
//! environment, and the model is rewarded for keeping multi-step prediction
//! error small. This crate contains everything needed to run that loop at desk
//! scale, from a small autodiff engine up to the training orchestrator and an
//! exact tabular checker for the return-gap bound.

// NaN-rejecting checks are written as negated comparisons on purpose
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod autodiff;
pub mod dynamics;
pub mod env;
pub mod error;
pub mod learners;
pub mod model_mdp;
pub mod orchestrator;
pub mod rng;
pub mod sac;

pub use error::{Error, Result};
