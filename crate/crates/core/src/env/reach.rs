use rand::Rng;

use super::{Env, EnvSpec, Step};
use crate::rng::SimRng;

/// Kinematic point on `[0,1]^2`: `p' = clip(p + step_size * a)`. Reward is
/// minus the distance to the goal; entering the goal disc ends the episode.
#[derive(Debug, Clone)]
pub struct PointReach {
    spec: EnvSpec,
    pub goal: [f64; 2],
    pub radius: f64,
    pub step_size: f64,
    /// Resets never start closer than this to the goal.
    pub min_start_distance: f64,
}

impl Default for PointReach {
    fn default() -> Self {
        Self {
            spec: EnvSpec {
                name: "point_reach".into(),
                state_dim: 2,
                action_dim: 2,
                action_low: vec![-1.0; 2],
                action_high: vec![1.0; 2],
                horizon: 50,
                gamma: 0.99,
                r_max: std::f64::consts::SQRT_2,
            },
            goal: [0.8, 0.8],
            radius: 0.1,
            step_size: 0.1,
            min_start_distance: 0.3,
        }
    }
}

impl PointReach {
    fn distance(&self, s: &[f64]) -> f64 {
        (s[0] - self.goal[0]).hypot(s[1] - self.goal[1])
    }
}

impl Env for PointReach {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&self, rng: &mut SimRng) -> Vec<f64> {
        loop {
            let s = vec![rng.random::<f64>(), rng.random::<f64>()];
            if self.distance(&s) >= self.min_start_distance {
                return s;
            }
        }
    }

    fn step(&self, state: &[f64], action: &[f64], _rng: &mut SimRng) -> Step {
        let a = self.spec.clip_action(action);
        let next: Vec<f64> = (0..2)
            .map(|k| (state[k] + self.step_size * a[k]).clamp(0.0, 1.0))
            .collect();
        Step {
            reward: -self.distance(&next),
            done: self.is_terminal(&next),
            state: next,
        }
    }

    fn is_terminal(&self, state: &[f64]) -> bool {
        self.distance(state) < self.radius
    }

    fn position(&self, state: &[f64]) -> Option<(f64, f64)> {
        Some((state[0], state[1]))
    }
}
