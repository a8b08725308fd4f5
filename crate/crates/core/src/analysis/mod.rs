//! Exact tabular checks of the return-gap bound, accumulated rollout error
//! against the true simulator, and rollout trajectory export.

mod bound;
mod rollouts;

pub use bound::{
    bound_value, check_policy, compute_bound_terms, exact_tabular_return, occupancies, random_bound_instance,
    truncation_horizon, tv_distance, BoundInstance, BoundReport,
};
pub use rollouts::{
    accumulated_error_curve, export_rollout_trajectories, uncertain_fraction, ErrorCurve, ErrorMode, TrajectoryCluster,
    TrajectoryDump,
};
