use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{rng_from, SimRng};

/// Finite MDP with explicit transition tensor `p[s][a][s']`, flattened.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularMdp {
    pub n_states: usize,
    pub n_actions: usize,
    p: Vec<f64>,
    r: Vec<f64>,
    pub rho0: Vec<f64>,
    pub gamma: f64,
}

/// A Dirichlet(1, ..., 1) draw via normalized exponentials.
pub(crate) fn flat_dirichlet(n: usize, rng: &mut SimRng) -> Vec<f64> {
    let e: Vec<f64> = (0..n).map(|_| Exp1.sample(rng)).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|x| x / total).collect()
}

fn check_distribution(what: &str, row: &[f64]) -> Result<()> {
    if row.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "{what} has a negative or non-finite entry"
        )));
    }
    let s: f64 = row.iter().sum();
    if (s - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidArgument(format!("{what} sums to {s}")));
    }
    Ok(())
}

impl TabularMdp {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        p: Vec<f64>,
        r: Vec<f64>,
        rho0: Vec<f64>,
        gamma: f64,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::InvalidArgument("empty state or action set".into()));
        }
        if p.len() != n_states * n_actions * n_states || r.len() != n_states * n_actions {
            return Err(Error::shape("tabular_mdp", "transition or reward table size"));
        }
        if rho0.len() != n_states {
            return Err(Error::shape("tabular_mdp", "initial distribution size"));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::InvalidArgument(format!("gamma {gamma} not in [0, 1)")));
        }
        if r.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("reward table".into()));
        }
        let mdp = Self {
            n_states,
            n_actions,
            p,
            r,
            rho0,
            gamma,
        };
        for s in 0..n_states {
            for a in 0..n_actions {
                check_distribution(&format!("P[{s}][{a}]"), mdp.p_row(s, a))?;
            }
        }
        check_distribution("rho0", &mdp.rho0)?;
        Ok(mdp)
    }

    /// Dirichlet(1) transition rows and initial distribution, rewards
    /// uniform in `[0, 1]`, discount 0.9.
    pub fn random(n_states: usize, n_actions: usize, seed: u64) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::InvalidArgument("empty state or action set".into()));
        }
        let mut rng = rng_from(seed);
        let mut p = Vec::with_capacity(n_states * n_actions * n_states);
        for _ in 0..n_states * n_actions {
            p.extend(flat_dirichlet(n_states, &mut rng));
        }
        let r = (0..n_states * n_actions).map(|_| rng.random::<f64>()).collect();
        let rho0 = flat_dirichlet(n_states, &mut rng);
        Ok(Self {
            n_states,
            n_actions,
            p,
            r,
            rho0,
            gamma: 0.9,
        })
    }

    pub fn with_gamma(mut self, gamma: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::InvalidArgument(format!("gamma {gamma} not in [0, 1)")));
        }
        self.gamma = gamma;
        Ok(self)
    }

    pub fn p_row(&self, s: usize, a: usize) -> &[f64] {
        let n = self.n_states;
        let start = (s * self.n_actions + a) * n;
        &self.p[start..start + n]
    }

    pub fn kernel(&self) -> &[f64] {
        &self.p
    }

    /// Same MDP with a different transition kernel.
    pub fn with_kernel(&self, p: Vec<f64>) -> Result<Self> {
        Self::new(
            self.n_states,
            self.n_actions,
            p,
            self.r.clone(),
            self.rho0.clone(),
            self.gamma,
        )
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.r[s * self.n_actions + a]
    }

    pub fn rewards(&self) -> &[f64] {
        &self.r
    }

    pub fn r_max(&self) -> f64 {
        self.r.iter().fold(0.0f64, |m, x| m.max(x.abs()))
    }

    pub fn step(&self, s: usize, a: usize, rng: &mut SimRng) -> (usize, f64) {
        (sample_index(self.p_row(s, a), rng), self.reward(s, a))
    }

    pub fn sample_initial(&self, rng: &mut SimRng) -> usize {
        sample_index(&self.rho0, rng)
    }
}

/// Inverse-CDF draw from a discrete distribution.
pub(crate) fn sample_index(p: &[f64], rng: &mut SimRng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &x) in p.iter().enumerate() {
        acc += x;
        if u < acc {
            return i;
        }
    }
    // rounding left u above the running sum: take the last non-zero entry
    p.iter().rposition(|&x| x > 0.0).unwrap_or(p.len() - 1)
}
