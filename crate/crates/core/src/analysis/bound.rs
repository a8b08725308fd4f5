use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::env::TabularMdp;
use crate::error::{Error, Result};
use crate::rng::{rng_from, SimRng};

/// Half the L1 distance between two distributions on the same support.
pub fn tv_distance(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::shape("tv_distance", format!("{} vs {}", p.len(), q.len())));
    }
    for (name, d) in [("p", p), ("q", q)] {
        let s: f64 = d.iter().sum();
        if (s - 1.0).abs() > 1e-9 || d.iter().any(|&x| !(x >= 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "{name} is not a distribution (sums to {s})"
            )));
        }
    }
    Ok(tv_unchecked(p, q))
}

fn tv_unchecked(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Checks a `[n_states][n_actions]` stochastic policy table.
pub fn check_policy(mdp: &TabularMdp, pi: &[Vec<f64>]) -> Result<()> {
    if pi.len() != mdp.n_states || pi.iter().any(|r| r.len() != mdp.n_actions) {
        return Err(Error::shape("policy table", "rows must be n_states x n_actions"));
    }
    for (s, row) in pi.iter().enumerate() {
        let t: f64 = row.iter().sum();
        if (t - 1.0).abs() > 1e-9 || row.iter().any(|&x| !(x >= 0.0)) {
            return Err(Error::InvalidArgument(format!("policy row {s} sums to {t}")));
        }
    }
    Ok(())
}

fn check_kernel(mdp: &TabularMdp, p: &[f64]) -> Result<()> {
    let n = mdp.n_states;
    if p.len() != n * mdp.n_actions * n {
        return Err(Error::shape("transition kernel", format!("{} entries", p.len())));
    }
    for (i, row) in p.chunks(n).enumerate() {
        let t: f64 = row.iter().sum();
        if (t - 1.0).abs() > 1e-9 || row.iter().any(|&x| !(x >= 0.0)) {
            return Err(Error::InvalidArgument(format!("kernel row {i} sums to {t}")));
        }
    }
    Ok(())
}

fn row(p: &[f64], n_s: usize, n_a: usize, s: usize, a: usize) -> &[f64] {
    let start = (s * n_a + a) * n_s;
    &p[start..start + n_s]
}

/// Discounted return of `pi` from `rho0`, by a direct linear solve of the
/// policy-evaluation equations. `kernel` replaces the MDP's own dynamics.
pub fn exact_tabular_return(mdp: &TabularMdp, pi: &[Vec<f64>], kernel: Option<&[f64]>) -> Result<f64> {
    check_policy(mdp, pi)?;
    let p = kernel.unwrap_or(mdp.kernel());
    check_kernel(mdp, p)?;
    let (n, na) = (mdp.n_states, mdp.n_actions);
    let mut m = DMatrix::<f64>::identity(n, n);
    let mut r = DVector::<f64>::zeros(n);
    for s in 0..n {
        for (a, &w) in pi[s].iter().enumerate() {
            r[s] += w * mdp.reward(s, a);
            for (s2, &pr) in row(p, n, na, s, a).iter().enumerate() {
                m[(s, s2)] -= mdp.gamma * w * pr;
            }
        }
    }
    let v = m
        .lu()
        .solve(&r)
        .ok_or_else(|| Error::InvalidArgument("singular policy-evaluation system".into()))?;
    Ok(mdp.rho0.iter().zip(v.iter()).map(|(a, b)| a * b).sum())
}

/// Smallest `T` with `gamma^T r_max / (1 - gamma) < 1e-6` whose omitted
/// tail of the bound's sum is also below `1e-10`.
pub fn truncation_horizon(gamma: f64, r_max: f64) -> usize {
    if r_max == 0.0 || gamma == 0.0 {
        return 1;
    }
    let mut t = 1usize;
    let mut gt = gamma;
    loop {
        let invariant = gt * r_max / (1.0 - gamma);
        let tail = 2.0 * r_max * gt * gamma / (1.0 - gamma).powi(2);
        if invariant < 1e-6 && tail < 1e-10 {
            return t;
        }
        t += 1;
        gt *= gamma;
    }
}

/// Everything on both sides of the return-gap bound for one tabular instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub j_true: f64,
    pub j_model: f64,
    pub eps_pi: f64,
    /// Model error at rollout steps `1..=T`.
    pub eps_m: Vec<f64>,
    pub r_max: f64,
    pub gamma: f64,
    pub horizon: usize,
    pub c: f64,
    pub gap: f64,
    pub holds: bool,
    pub slack: f64,
    /// Model-MDP return with the squared-probability-difference reward.
    pub rm_squared_return: f64,
    /// Model-MDP return with the norm-of-prediction-error reward.
    pub rm_norm_return: f64,
}

/// `(2 r_max / (1-gamma)^2) ((2-gamma) eps_pi + (1-gamma) sum_t gamma^t eps_m[t])`.
pub fn bound_value(r_max: f64, gamma: f64, eps_pi: f64, eps_m: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut gt = 1.0;
    for e in eps_m {
        gt *= gamma;
        sum += gt * e;
    }
    2.0 * r_max / (1.0 - gamma).powi(2) * ((2.0 - gamma) * eps_pi + (1.0 - gamma) * sum)
}

/// State-action occupancies `d_0 .. d_{T-1}` under `(kernel, pi)` from
/// `rho0 x pi`, propagated exactly.
pub fn occupancies(mdp: &TabularMdp, kernel: &[f64], pi: &[Vec<f64>], steps: usize) -> Vec<Vec<f64>> {
    let (n, na) = (mdp.n_states, mdp.n_actions);
    let mut d: Vec<f64> = (0..n * na).map(|i| mdp.rho0[i / na] * pi[i / na][i % na]).collect();
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        let mut next_s = vec![0.0; n];
        for s in 0..n {
            for a in 0..na {
                let w = d[s * na + a];
                if w == 0.0 {
                    continue;
                }
                for (s2, &pr) in row(kernel, n, na, s, a).iter().enumerate() {
                    next_s[s2] += w * pr;
                }
            }
        }
        let next: Vec<f64> = (0..n * na).map(|i| next_s[i / na] * pi[i / na][i % na]).collect();
        out.push(std::mem::replace(&mut d, next));
    }
    out
}

/// Exact discounted return of the model MDP over `(s, a)` states for a
/// per-state-action model reward.
fn model_mdp_return(mdp: &TabularMdp, kernel: &[f64], pi: &[Vec<f64>], reward: &[f64]) -> Result<f64> {
    let (n, na) = (mdp.n_states, mdp.n_actions);
    let k = n * na;
    let mut m = DMatrix::<f64>::identity(k, k);
    for s in 0..n {
        for a in 0..na {
            let i = s * na + a;
            for (s2, &pr) in row(kernel, n, na, s, a).iter().enumerate() {
                for a2 in 0..na {
                    m[(i, s2 * na + a2)] -= mdp.gamma * pr * pi[s2][a2];
                }
            }
        }
    }
    let v = m
        .lu()
        .solve(&DVector::from_column_slice(reward))
        .ok_or_else(|| Error::InvalidArgument("singular model-MDP system".into()))?;
    Ok((0..k).map(|i| mdp.rho0[i / na] * pi[i / na][i % na] * v[i]).sum())
}

/// Both sides of the return-gap bound for `pi` under the true kernel and
/// `hat_p`, with `pi_d` the data-collecting policy. `horizon = None` picks
/// the truncation automatically.
pub fn compute_bound_terms(
    mdp: &TabularMdp,
    hat_p: &[f64],
    pi: &[Vec<f64>],
    pi_d: &[Vec<f64>],
    horizon: Option<usize>,
) -> Result<BoundReport> {
    check_policy(mdp, pi)?;
    check_policy(mdp, pi_d)?;
    check_kernel(mdp, hat_p)?;
    let gamma = mdp.gamma;
    let r_max = mdp.r_max();
    let t = match horizon {
        None => truncation_horizon(gamma, r_max),
        Some(t) => {
            if t == 0 || gamma.powi(t as i32) * r_max / (1.0 - gamma) >= 1e-6 {
                return Err(Error::InvalidArgument(format!(
                    "horizon {t} leaves a truncated tail of at least 1e-6"
                )));
            }
            t
        }
    };
    let (n, na) = (mdp.n_states, mdp.n_actions);
    let p = mdp.kernel();
    let eps_pi = (0..n).map(|s| tv_unchecked(&pi_d[s], &pi[s])).fold(0.0, f64::max);
    let tv_rows: Vec<f64> = (0..n * na)
        .map(|i| tv_unchecked(row(hat_p, n, na, i / na, i % na), row(p, n, na, i / na, i % na)))
        .collect();
    let eps_m: Vec<f64> = occupancies(mdp, hat_p, pi, t)
        .iter()
        .map(|d| d.iter().zip(&tv_rows).map(|(w, e)| w * e).sum())
        .collect();
    let c = bound_value(r_max, gamma, eps_pi, &eps_m);
    let j_true = exact_tabular_return(mdp, pi, None)?;
    let j_model = exact_tabular_return(mdp, pi, Some(hat_p))?;
    let gap = (j_true - j_model).abs();

    let squared: Vec<f64> = (0..n * na)
        .map(|i| {
            let (ph, pt) = (row(hat_p, n, na, i / na, i % na), row(p, n, na, i / na, i % na));
            -ph.iter().zip(pt).map(|(a, b)| a * (a - b).powi(2)).sum::<f64>()
        })
        .collect();
    // E over independent draws of one-hot next states of -||e_hat - e||_2;
    // rewards are deterministic so the reward term vanishes
    let norm: Vec<f64> = (0..n * na)
        .map(|i| {
            let (ph, pt) = (row(hat_p, n, na, i / na, i % na), row(p, n, na, i / na, i % na));
            let agree: f64 = ph.iter().zip(pt).map(|(a, b)| a * b).sum();
            -std::f64::consts::SQRT_2 * (1.0 - agree)
        })
        .collect();
    Ok(BoundReport {
        j_true,
        j_model,
        eps_pi,
        eps_m,
        r_max,
        gamma,
        horizon: t,
        c,
        gap,
        holds: gap <= c + 1e-9,
        slack: c - gap,
        rm_squared_return: model_mdp_return(mdp, hat_p, pi, &squared)?,
        rm_norm_return: model_mdp_return(mdp, hat_p, pi, &norm)?,
    })
}

/// A randomized bound-check instance: a small tabular MDP, a perturbed
/// kernel, the evaluated policy and the data-collecting policy.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundInstance {
    pub mdp: TabularMdp,
    pub hat_p: Vec<f64>,
    pub pi: Vec<Vec<f64>>,
    pub pi_d: Vec<Vec<f64>>,
    /// Weight of the Dirichlet noise blended into the true kernel.
    pub mix: f64,
}

fn dirichlet(n: usize, rng: &mut SimRng) -> Vec<f64> {
    let e: Vec<f64> = (0..n).map(|_| Exp1.sample(rng)).collect();
    let t: f64 = e.iter().sum();
    e.into_iter().map(|x| x / t).collect()
}

/// Up to 5 states and 3 actions, discount 0.5 or 0.9, and a model kernel
/// `(1 - mix) P + mix D` with fresh Dirichlet rows `D`, mix in {0.1, 0.3, 0.6}.
pub fn random_bound_instance(seed: u64) -> Result<BoundInstance> {
    let mut rng = rng_from(seed);
    let n_s = rng.random_range(1..=5);
    let n_a = rng.random_range(1..=3);
    let gamma = [0.5, 0.9][rng.random_range(0..2)];
    let mix = [0.1, 0.3, 0.6][rng.random_range(0..3)];
    let mdp = TabularMdp::random(n_s, n_a, rng.random())?.with_gamma(gamma)?;
    let mut hat_p = Vec::with_capacity(mdp.kernel().len());
    for row in mdp.kernel().chunks(n_s) {
        let d = dirichlet(n_s, &mut rng);
        let mut r: Vec<f64> = row.iter().zip(&d).map(|(p, q)| (1.0 - mix) * p + mix * q).collect();
        let t: f64 = r.iter().sum();
        r.iter_mut().for_each(|x| *x /= t);
        hat_p.extend(r);
    }
    let pi = (0..n_s).map(|_| dirichlet(n_a, &mut rng)).collect();
    let pi_d = (0..n_s).map(|_| dirichlet(n_a, &mut rng)).collect();
    Ok(BoundInstance {
        mdp,
        hat_p,
        pi,
        pi_d,
        mix,
    })
}
