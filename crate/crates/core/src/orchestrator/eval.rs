use serde::{Deserialize, Serialize};

use crate::env::{run_episode, Env};
use crate::error::{Error, Result};
use crate::rng::{rng_from, substream};
use crate::sac::{MeanActions, Policy};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub mean: f64,
    /// Population standard deviation, so a single episode gives 0.
    pub std: f64,
    pub success_rate: f64,
    pub episodes: usize,
}

/// Mean and standard deviation of the undiscounted return of the policy's
/// mean actions. Episode `i` resets from `substream(seed, i)`.
pub fn evaluate_policy(policy: &dyn Policy, env: &dyn Env, n_episodes: usize, seed: u64) -> Result<(f64, f64)> {
    let s = evaluate_detailed(policy, env, n_episodes, seed)?;
    Ok((s.mean, s.std))
}

pub fn evaluate_detailed(policy: &dyn Policy, env: &dyn Env, n_episodes: usize, seed: u64) -> Result<EvalSummary> {
    if n_episodes == 0 {
        return Err(Error::InvalidArgument("evaluation needs at least one episode".into()));
    }
    let controller = MeanActions(policy);
    // mean actions never draw from this stream
    let mut unused = rng_from(seed);
    let mut returns = Vec::with_capacity(n_episodes);
    let mut successes = 0usize;
    for i in 0..n_episodes {
        let mut env_rng = substream(seed, i as u64);
        let traj = run_episode(env, &controller, &mut env_rng, &mut unused);
        returns.push(traj.iter().map(|t| t.r).sum::<f64>());
        if traj.last().is_some_and(|t| env.is_success(&t.s_next)) {
            successes += 1;
        }
    }
    let n = n_episodes as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    Ok(EvalSummary {
        mean,
        std: var.sqrt(),
        success_rate: successes as f64 / n,
        episodes: n_episodes,
    })
}
