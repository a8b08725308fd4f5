#![allow(dead_code)]

use p2p_core::autodiff::Tensor;

/// Relative error with a small absolute floor so components that are zero
/// on both sides do not blow up the ratio.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Central finite differences of `loss` w.r.t. every entry of `params`,
/// compared against `analytic`. Returns the worst relative error.
pub fn fd_max_rel_err(
    params: &mut [Tensor],
    analytic: &[Tensor],
    h: f64,
    mut loss: impl FnMut(&[Tensor]) -> f64,
) -> f64 {
    assert_eq!(params.len(), analytic.len());
    let mut worst: f64 = 0.0;
    for p in 0..params.len() {
        for i in 0..params[p].len() {
            let orig = params[p].values()[i];
            params[p] = with_value(&params[p], i, orig + h);
            let up = loss(params);
            params[p] = with_value(&params[p], i, orig - h);
            let down = loss(params);
            params[p] = with_value(&params[p], i, orig);
            let fd = (up - down) / (2.0 * h);
            worst = worst.max(rel_err(fd, analytic[p].values()[i]));
        }
    }
    worst
}

fn with_value(t: &Tensor, i: usize, v: f64) -> Tensor {
    let mut vals = t.values().to_vec();
    vals[i] = v;
    Tensor::new(t.shape().to_vec(), vals).unwrap()
}

/// Prints one acceptance line and returns whether it passed.
pub fn report(id: &str, pass: bool, detail: impl std::fmt::Display) -> bool {
    println!("[{}] criterion {id}: {detail}", if pass { "PASS" } else { "FAIL" });
    pass
}

use p2p_core::env::{DatasetBuffer, Transition};
use p2p_core::rng::rng_from;
use rand::Rng;

/// `s' = 0.9 s + 0.1 a`, `r = -|s|^2` in two dimensions, as contiguous
/// episodes of `episode_len` steps from uniform starts.
pub fn linear_system(n: usize, episode_len: usize, seed: u64) -> DatasetBuffer {
    let mut rng = rng_from(seed);
    let mut out = Vec::with_capacity(n);
    let mut s: Vec<f64> = vec![0.0; 2];
    for i in 0..n {
        if i % episode_len == 0 {
            s = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
        }
        let a: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
        let s_next: Vec<f64> = s.iter().zip(&a).map(|(x, u)| 0.9 * x + 0.1 * u).collect();
        out.push(Transition {
            r: -s.iter().map(|x| x * x).sum::<f64>(),
            s: s.clone(),
            a,
            s_next: s_next.clone(),
            done: false,
        });
        s = s_next;
    }
    DatasetBuffer::from_transitions(out).unwrap()
}

use p2p_core::env::TabularMdp;
use p2p_core::rng::SimRng;
use rand_distr::{Distribution, Exp1};

pub fn dirichlet(n: usize, rng: &mut SimRng) -> Vec<f64> {
    let e: Vec<f64> = (0..n).map(|_| Exp1.sample(rng)).collect();
    let t: f64 = e.iter().sum();
    e.into_iter().map(|x| x / t).collect()
}

pub fn random_policy(n_s: usize, n_a: usize, rng: &mut SimRng) -> Vec<Vec<f64>> {
    (0..n_s).map(|_| dirichlet(n_a, rng)).collect()
}

/// `(1 - mix) P + mix D` with fresh Dirichlet rows `D`.
pub fn blended_kernel(mdp: &TabularMdp, mix: f64, rng: &mut SimRng) -> Vec<f64> {
    let n = mdp.n_states;
    let mut out = Vec::with_capacity(mdp.kernel().len());
    for row in mdp.kernel().chunks(n) {
        let d = dirichlet(n, rng);
        let mut r: Vec<f64> = row.iter().zip(&d).map(|(p, q)| (1.0 - mix) * p + mix * q).collect();
        let t: f64 = r.iter().sum();
        r.iter_mut().for_each(|x| *x /= t);
        out.extend(r);
    }
    out
}

use p2p_core::dynamics::{DynamicsModel, MemberGaussian};
use p2p_core::error::Result as CoreResult;

type MemberFn = dyn Fn(usize, &[f64], &[f64]) -> (Vec<f64>, Vec<f64>) + Send + Sync;

/// Hand-written model: `f(member, s, a)` returns the `(delta_s, r)` mean and
/// variance of each member.
pub struct FnModel {
    pub state_dim: usize,
    pub action_dim: usize,
    pub elites: Vec<usize>,
    pub f: Box<MemberFn>,
}

impl FnModel {
    pub fn new(
        state_dim: usize,
        action_dim: usize,
        members: usize,
        f: impl Fn(usize, &[f64], &[f64]) -> (Vec<f64>, Vec<f64>) + Send + Sync + 'static,
    ) -> Self {
        Self {
            state_dim,
            action_dim,
            elites: (0..members).collect(),
            f: Box::new(f),
        }
    }
}

impl DynamicsModel for FnModel {
    fn state_dim(&self) -> usize {
        self.state_dim
    }

    fn action_dim(&self) -> usize {
        self.action_dim
    }

    fn elites(&self) -> CoreResult<&[usize]> {
        Ok(&self.elites)
    }

    fn member_gaussian(&self, member: usize, s: &[f64], a: &[f64]) -> CoreResult<MemberGaussian> {
        let (mean, var) = (self.f)(member, s, a);
        Ok(MemberGaussian { mean, var })
    }
}

/// Exact zero-variance model of [`linear_system`], shifted by `bias` on the
/// first state coordinate.
pub fn linear_model(bias: f64) -> FnModel {
    FnModel::new(2, 2, 1, move |_, s, a| {
        let mut m: Vec<f64> = s.iter().zip(a).map(|(x, u)| -0.1 * x + 0.1 * u).collect();
        m[0] += bias * s[0];
        m.push(-s.iter().map(|x| x * x).sum::<f64>());
        (m, vec![0.0; 3])
    })
}

use p2p_core::learners::{DiceConfig, DiceSamples};

pub fn one_hot(n: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[i] = 1.0;
    v
}

/// Largest-remainder split of `total` items in proportion to `probs`.
pub fn allocate(total: usize, probs: &[f64]) -> Vec<usize> {
    let raw: Vec<f64> = probs.iter().map(|p| p * total as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| (raw[b] - raw[b].floor()).total_cmp(&(raw[a] - raw[a].floor())));
    let short = total.saturating_sub(counts.iter().sum::<usize>());
    for &i in order.iter().take(short) {
        counts[i] += 1;
    }
    counts
}

/// Discounted state-action occupancy of `pi` by fixed-point iteration.
pub fn occupancy(mdp: &TabularMdp, pi: &[Vec<f64>]) -> Vec<f64> {
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    let start: Vec<f64> = (0..ns * na).map(|i| mdp.rho0[i / na] * pi[i / na][i % na]).collect();
    let mut d = start.clone();
    for _ in 0..2000 {
        let mut next_s = vec![0.0; ns];
        for i in 0..ns * na {
            for (s2, p) in mdp.p_row(i / na, i % na).iter().enumerate() {
                next_s[s2] += d[i] * p;
            }
        }
        d = (0..ns * na)
            .map(|i| (1.0 - mdp.gamma) * start[i] + mdp.gamma * next_s[i / na] * pi[i / na][i % na])
            .collect();
    }
    d
}

/// One-hot `(s, a)` rows whose counts follow `data_dist`, successors
/// `(s', a' ~ pi)` and initial pairs split by exact proportions rather than
/// drawn, so the sample set carries no Monte Carlo noise beyond rounding.
pub fn stratified_dice_samples(mdp: &TabularMdp, pi: &[Vec<f64>], data_dist: &[f64], n: usize) -> DiceSamples {
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    let k = ns * na;
    let (mut x, mut x_next) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for (i, &c) in allocate(n, data_dist).iter().enumerate() {
        let succ: Vec<f64> = (0..k)
            .map(|j| mdp.p_row(i / na, i % na)[j / na] * pi[j / na][j % na])
            .collect();
        for (j, &cj) in allocate(c, &succ).iter().enumerate() {
            for _ in 0..cj {
                x.push(one_hot(k, i));
                x_next.push(one_hot(k, j));
            }
        }
    }
    let init: Vec<f64> = (0..k).map(|j| mdp.rho0[j / na] * pi[j / na][j % na]).collect();
    let mut x_init = Vec::with_capacity(n);
    for (j, &c) in allocate(n, &init).iter().enumerate() {
        x_init.extend((0..c).map(|_| one_hot(k, j)));
    }
    DiceSamples { x, x_next, x_init }
}

/// Linear ratio and value networks on one-hot inputs, full-batch, with the
/// dual player on the faster timescale.
pub fn tabular_dice_config(gamma: f64, n: usize) -> DiceConfig {
    DiceConfig {
        hidden: vec![],
        nu_lr: 5e-3,
        zeta_lr: 5e-2,
        gamma,
        batch_size: n,
        ..DiceConfig::default()
    }
}

/// Worst per-cell relative error of the fitted ratios against the clipped
/// occupancy-ratio oracle on one random `n_states x 2` instance.
pub fn dice_ratio_error(n_states: usize, seed: u64, iterations: usize) -> f64 {
    use p2p_core::learners::{dualdice_fit, DiceState};
    let na = 2;
    let k = n_states * na;
    let mut rng = rng_from(500 + seed);
    let mdp = TabularMdp::random(n_states, na, seed).unwrap().with_gamma(0.8).unwrap();
    let pi = random_policy(n_states, na, &mut rng);
    let mix = dirichlet(k, &mut rng);
    let data_dist: Vec<f64> = mix.iter().map(|m| 0.5 / k as f64 + 0.5 * m).collect();
    let cfg = tabular_dice_config(0.8, 2000);
    let (lo, hi) = (cfg.w_min, cfg.w_max);
    let target: Vec<f64> = occupancy(&mdp, &pi)
        .iter()
        .zip(&data_dist)
        .map(|(a, b)| (a / b).clamp(lo, hi))
        .collect();
    let samples = stratified_dice_samples(&mdp, &pi, &data_dist, 2000);
    let mut dice = DiceState::new(k, cfg, seed).unwrap();
    dualdice_fit(&mut dice, &samples, iterations, &mut rng).unwrap();
    let est = dice.ratio(&(0..k).map(|i| one_hot(k, i)).collect::<Vec<_>>()).unwrap();
    est.iter()
        .zip(&target)
        .map(|(e, t)| (e - t).abs() / t)
        .fold(0.0, f64::max)
}
