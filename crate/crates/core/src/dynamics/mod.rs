//! Probabilistic dynamics models predicting state deltas and rewards.

mod ensemble;
mod normalizer;

pub use ensemble::{select_elites, EnsembleConfig, EnsembleModel, TrainReport};
pub use normalizer::{Normalizer, STD_FLOOR};

use rand::Rng;

use crate::env::Env;
use crate::error::{Error, Result};
use crate::rng::{rng_from, SimRng};

/// Diagonal Gaussian over `(delta_s, r)` in raw units.
#[derive(Debug, Clone, PartialEq)]
pub struct MemberGaussian {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// One sampled model transition.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub s_next: Vec<f64>,
    pub r: f64,
    pub member_index: usize,
    /// Predicted mean of `(s_next, r)`.
    pub mean: Vec<f64>,
    /// Predicted per-dimension variance of `(s_next, r)`.
    pub var: Vec<f64>,
}

impl Prediction {
    pub fn mean_state(&self) -> &[f64] {
        &self.mean[..self.s_next.len()]
    }

    pub fn mean_reward(&self) -> f64 {
        self.mean[self.s_next.len()]
    }
}

/// Anything that can play the role of the learned transition model.
pub trait DynamicsModel: Send + Sync {
    fn state_dim(&self) -> usize;

    fn action_dim(&self) -> usize;

    /// Members used for sampling, ascending.
    fn elites(&self) -> Result<&[usize]>;

    fn member_gaussian(&self, member: usize, s: &[f64], a: &[f64]) -> Result<MemberGaussian>;

    /// One draw from a given member.
    fn sample_member(&self, member: usize, s: &[f64], a: &[f64], rng: &mut SimRng) -> Result<Prediction> {
        let g = self.member_gaussian(member, s, a)?;
        Ok(draw(s, member, g, rng))
    }

    /// Uniformly chosen elite, then one draw from its Gaussian.
    fn predict_sample(&self, s: &[f64], a: &[f64], rng: &mut SimRng) -> Result<Prediction> {
        let elites = self.elites()?;
        let member = elites[rng.random_range(0..elites.len())];
        self.sample_member(member, s, a, rng)
    }

    /// One draw per elite, in ascending member order.
    fn predict_per_member(&self, s: &[f64], a: &[f64], rng: &mut SimRng) -> Result<Vec<Prediction>> {
        let elites = self.elites()?.to_vec();
        elites.into_iter().map(|m| self.sample_member(m, s, a, rng)).collect()
    }

    /// Mixture moments over the elites: mean of member means and total
    /// variance (mean variance plus variance of means).
    fn predict_mean(&self, s: &[f64], a: &[f64]) -> Result<MemberGaussian> {
        let elites = self.elites()?.to_vec();
        let gs = elites
            .iter()
            .map(|&m| self.member_gaussian(m, s, a))
            .collect::<Result<Vec<_>>>()?;
        let k = gs.len() as f64;
        let d = gs[0].mean.len();
        let mut mean = vec![0.0; d];
        let mut var = vec![0.0; d];
        for g in &gs {
            for j in 0..d {
                mean[j] += g.mean[j] / k;
                var[j] += g.var[j] / k;
            }
        }
        for g in &gs {
            for j in 0..d {
                var[j] += (g.mean[j] - mean[j]).powi(2) / k;
            }
        }
        for (j, m) in mean.iter_mut().enumerate().take(s.len()) {
            *m += s[j];
        }
        Ok(MemberGaussian { mean, var })
    }

    /// Variance of the elite means, averaged over output dimensions.
    fn disagreement(&self, s: &[f64], a: &[f64]) -> Result<f64> {
        let elites = self.elites()?.to_vec();
        let gs = elites
            .iter()
            .map(|&m| self.member_gaussian(m, s, a))
            .collect::<Result<Vec<_>>>()?;
        let k = gs.len() as f64;
        let d = gs[0].mean.len();
        let mut total = 0.0;
        for j in 0..d {
            let mu = gs.iter().map(|g| g.mean[j]).sum::<f64>() / k;
            total += gs.iter().map(|g| (g.mean[j] - mu).powi(2)).sum::<f64>() / k;
        }
        Ok(total / d as f64)
    }
}

fn draw(s: &[f64], member: usize, g: MemberGaussian, rng: &mut SimRng) -> Prediction {
    let n = s.len();
    let mut mean = g.mean;
    for j in 0..n {
        mean[j] += s[j];
    }
    let sample: Vec<f64> = mean
        .iter()
        .zip(&g.var)
        .map(|(&m, &v)| m + v.sqrt() * crate::rng::normal(rng))
        .collect();
    Prediction {
        s_next: sample[..n].to_vec(),
        r: sample[n],
        member_index: member,
        mean,
        var: g.var,
    }
}

/// The true simulator dressed up as a zero-variance, single-member model.
pub struct EnvOracle<'a> {
    env: &'a dyn Env,
    elites: [usize; 1],
}

impl<'a> EnvOracle<'a> {
    pub fn new(env: &'a dyn Env) -> Result<Self> {
        if !env.supports_state_setting() {
            return Err(Error::InvalidArgument("oracle needs state setting".into()));
        }
        Ok(Self { env, elites: [0] })
    }
}

impl DynamicsModel for EnvOracle<'_> {
    fn state_dim(&self) -> usize {
        self.env.spec().state_dim
    }

    fn action_dim(&self) -> usize {
        self.env.spec().action_dim
    }

    fn elites(&self) -> Result<&[usize]> {
        Ok(&self.elites)
    }

    fn member_gaussian(&self, _member: usize, s: &[f64], a: &[f64]) -> Result<MemberGaussian> {
        let step = self.env.step(s, a, &mut rng_from(0));
        let mut mean: Vec<f64> = step.state.iter().zip(s).map(|(n, o)| n - o).collect();
        mean.push(step.reward);
        let d = mean.len();
        Ok(MemberGaussian {
            mean,
            var: vec![0.0; d],
        })
    }
}
