//! Soft actor-critic with a squashed Gaussian actor and twin critics.

mod bundle;

pub use bundle::{squashed_sample, PolicyBundle, SacBatch, SacConfig, SacReport};

use crate::env::Controller;
use crate::rng::SimRng;

/// A state-to-action map with a deterministic and a stochastic mode.
pub trait Policy: Send + Sync {
    fn act_mean(&self, s: &[f64]) -> Vec<f64>;

    fn act_sample(&self, s: &[f64], rng: &mut SimRng) -> Vec<f64>;
}

/// Drives an environment with the policy's deterministic action.
pub struct MeanActions<'a>(pub &'a dyn Policy);

/// Drives an environment with sampled actions.
pub struct SampledActions<'a>(pub &'a dyn Policy);

impl Controller for MeanActions<'_> {
    fn act(&self, s: &[f64], _rng: &mut SimRng) -> Vec<f64> {
        self.0.act_mean(s)
    }
}

impl Controller for SampledActions<'_> {
    fn act(&self, s: &[f64], rng: &mut SimRng) -> Vec<f64> {
        self.0.act_sample(s, rng)
    }
}

/// Linear policy without squashing, handy as a test stub.
#[derive(Debug, Clone)]
pub struct LinearPolicy {
    /// Row-major `[action_dim, state_dim]`.
    pub weight: Vec<Vec<f64>>,
    pub noise_std: f64,
}

impl Policy for LinearPolicy {
    fn act_mean(&self, s: &[f64]) -> Vec<f64> {
        self.weight
            .iter()
            .map(|row| row.iter().zip(s).map(|(w, x)| w * x).sum())
            .collect()
    }

    fn act_sample(&self, s: &[f64], rng: &mut SimRng) -> Vec<f64> {
        self.act_mean(s)
            .into_iter()
            .map(|m| m + self.noise_std * crate::rng::normal(rng))
            .collect()
    }
}
