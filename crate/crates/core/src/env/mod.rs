//! Native environments, transition containers and offline data collection.

mod buffer;
mod maze;
mod reach;
mod tabular;

pub use buffer::{DatasetBuffer, Transition};
pub use maze::{collect_offline_dataset, Cell, MazeController, PointMaze, DEFAULT_LAYOUT};
pub use reach::PointReach;
pub use tabular::TabularMdp;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SimRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub name: String,
    pub state_dim: usize,
    pub action_dim: usize,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
    /// Maximum episode length.
    pub horizon: usize,
    pub gamma: f64,
    /// Upper bound on |reward|.
    pub r_max: f64,
}

impl EnvSpec {
    pub fn validate(&self) -> Result<()> {
        if self.state_dim == 0 || self.action_dim == 0 {
            return Err(Error::InvalidArgument("zero state or action dimension".into()));
        }
        if self.action_low.len() != self.action_dim || self.action_high.len() != self.action_dim {
            return Err(Error::InvalidArgument("action bounds do not match action_dim".into()));
        }
        for (lo, hi) in self.action_low.iter().zip(&self.action_high) {
            if !lo.is_finite() || !hi.is_finite() || lo >= hi {
                return Err(Error::InvalidArgument(format!("bad action bound [{lo}, {hi}]")));
            }
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::InvalidArgument(format!("gamma {} not in [0, 1)", self.gamma)));
        }
        if !(self.r_max > 0.0) || self.horizon == 0 {
            return Err(Error::InvalidArgument("r_max and horizon must be positive".into()));
        }
        Ok(())
    }

    pub fn clip_action(&self, a: &[f64]) -> Vec<f64> {
        a.iter()
            .zip(self.action_low.iter().zip(&self.action_high))
            .map(|(&x, (&lo, &hi))| x.clamp(lo, hi))
            .collect()
    }
}

/// Result of one environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub state: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

/// A simulator with externally held state.
///
/// `step` takes the full state, so any state can be "set" by passing it in;
/// the accumulated-error analysis relies on this.
pub trait Env: Send + Sync {
    fn spec(&self) -> &EnvSpec;

    fn reset(&self, rng: &mut SimRng) -> Vec<f64>;

    /// One transition. Actions outside the box are clipped. `rng` is only
    /// consumed by stochastic environments.
    fn step(&self, state: &[f64], action: &[f64], rng: &mut SimRng) -> Step;

    /// Terminal predicate, also applied to model-generated states.
    fn is_terminal(&self, state: &[f64]) -> bool;

    fn is_success(&self, state: &[f64]) -> bool {
        self.is_terminal(state)
    }

    fn supports_state_setting(&self) -> bool {
        true
    }

    /// Planar position, for environments that have one.
    fn position(&self, _state: &[f64]) -> Option<(f64, f64)> {
        None
    }
}

/// Anything that maps a state to an action.
pub trait Controller {
    fn act(&self, state: &[f64], rng: &mut SimRng) -> Vec<f64>;
}

/// Runs one episode until termination or the horizon.
///
/// Environment and controller randomness come from separate streams.
pub fn run_episode(
    env: &dyn Env,
    controller: &dyn Controller,
    env_rng: &mut SimRng,
    policy_rng: &mut SimRng,
) -> Vec<Transition> {
    let mut s = env.reset(env_rng);
    let mut out = Vec::new();
    for _ in 0..env.spec().horizon {
        let a = env.spec().clip_action(&controller.act(&s, policy_rng));
        let step = env.step(&s, &a, env_rng);
        out.push(Transition {
            s: std::mem::take(&mut s),
            a,
            r: step.reward,
            s_next: step.state.clone(),
            done: step.done,
        });
        if step.done {
            break;
        }
        s = step.state;
    }
    out
}

/// Builds a named environment with default settings.
pub fn make_env(name: &str) -> Result<Box<dyn Env>> {
    match name {
        "point_maze" => Ok(Box::new(PointMaze::default_maze())),
        "point_reach" => Ok(Box::new(PointReach::default())),
        other => Err(Error::Config(format!("unknown environment {other:?}"))),
    }
}
