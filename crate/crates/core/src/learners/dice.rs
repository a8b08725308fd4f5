//! Stationary distribution correction by the DualDICE saddle point.
//!
//! With `x` drawn from the data, `x'` from the target chain after `x`, and
//! `x0` from the target's initial distribution, the game
//!
//! `min_nu max_zeta E[(nu(x) - gamma nu(x')) zeta(x) - zeta(x)^2 / 2] - (1 - gamma) E[nu(x0)]`
//!
//! is solved by `zeta = d_target / d_data`.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Activation, AdamState, Graph, MlpParams, Tensor};
use crate::dynamics::{DynamicsModel, EnsembleModel, STD_FLOOR};
use crate::env::{DatasetBuffer, Transition};
use crate::error::{Error, Result};
use crate::model_mdp::{relabel_next_model_state, ActionMode};
use crate::rng::{rng_from, substream, SimRng};
use crate::sac::Policy;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiceConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub nu_lr: f64,
    pub zeta_lr: f64,
    pub gamma: f64,
    pub batch_size: usize,
    pub w_min: f64,
    pub w_max: f64,
    /// Absolute objective value treated as divergence.
    pub divergence: f64,
}

impl Default for DiceConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            activation: Activation::Relu,
            nu_lr: 1e-3,
            zeta_lr: 1e-3,
            gamma: 0.99,
            batch_size: 256,
            w_min: 0.1,
            w_max: 10.0,
            divergence: 1e6,
        }
    }
}

impl DiceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Config("dice gamma must lie in [0, 1)".into()));
        }
        if !(self.w_min > 0.0 && self.w_min <= self.w_max) {
            return Err(Error::Config("dice weight bounds need 0 < w_min <= w_max".into()));
        }
        if !(self.nu_lr > 0.0 && self.zeta_lr > 0.0) || self.batch_size == 0 {
            return Err(Error::Config(
                "dice learning rates and batch size must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Feature rows for one fit: data points, their successors under the target
/// chain, and draws from the target's initial distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct DiceSamples {
    pub x: Vec<Vec<f64>>,
    pub x_next: Vec<Vec<f64>>,
    pub x_init: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiceReport {
    pub final_objective: f64,
    pub mean_weight: f64,
    pub clipped_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiceState {
    pub config: DiceConfig,
    nu: MlpParams,
    zeta: MlpParams,
    nu_opt: AdamState,
    zeta_opt: AdamState,
    in_mean: Vec<f64>,
    in_std: Vec<f64>,
    /// Clipped correction weight per data row of the last fit.
    pub weights: Vec<f64>,
    pub steps: u64,
}

impl DiceState {
    pub fn new(input_dim: usize, config: DiceConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng_from(seed);
        let nu = MlpParams::new(input_dim, &config.hidden, 1, config.activation, &mut rng);
        let zeta = MlpParams::new(input_dim, &config.hidden, 1, config.activation, &mut rng);
        Ok(Self {
            nu_opt: AdamState::new(&nu.params(), config.nu_lr),
            zeta_opt: AdamState::new(&zeta.params(), config.zeta_lr),
            nu,
            zeta,
            in_mean: vec![0.0; input_dim],
            in_std: vec![1.0; input_dim],
            weights: Vec::new(),
            steps: 0,
            config,
        })
    }

    pub fn nets_mut(&mut self) -> (&mut MlpParams, &mut MlpParams) {
        (&mut self.nu, &mut self.zeta)
    }

    fn features(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.in_mean.iter().zip(&self.in_std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    /// Clipped ratio estimate at arbitrary points.
    pub fn ratio(&self, xs: &[Vec<f64>]) -> Result<Vec<f64>> {
        let feats: Vec<Vec<f64>> = xs.iter().map(|x| self.features(x)).collect();
        let p = self.zeta.predict(&Tensor::from_rows(&feats)?)?;
        let (lo, hi) = (self.config.w_min, self.config.w_max);
        Ok(p.out.values().iter().map(|&z| clip(z, lo, hi)).collect())
    }
}

fn clip(z: f64, lo: f64, hi: f64) -> f64 {
    if z.is_nan() {
        lo
    } else {
        z.clamp(lo, hi)
    }
}

/// Runs `iterations` simultaneous descent (nu) / ascent (zeta) steps and
/// stores the clipped weights of every data row.
pub fn dualdice_fit(
    dice: &mut DiceState,
    samples: &DiceSamples,
    iterations: usize,
    rng: &mut SimRng,
) -> Result<DiceReport> {
    let n = samples.x.len();
    if n == 0 || samples.x_next.len() != n || samples.x_init.is_empty() {
        return Err(Error::Dataset(
            "dice needs matching data/successor rows and initial rows".into(),
        ));
    }
    // normalization over everything the networks will see
    let d = samples.x[0].len();
    let all: Vec<&Vec<f64>> = samples.x.iter().chain(&samples.x_next).chain(&samples.x_init).collect();
    for j in 0..d {
        let m = all.iter().map(|r| r[j]).sum::<f64>() / all.len() as f64;
        let v = all.iter().map(|r| (r[j] - m).powi(2)).sum::<f64>() / all.len() as f64;
        dice.in_mean[j] = m;
        dice.in_std[j] = v.sqrt().max(STD_FLOOR);
    }
    let x: Vec<Vec<f64>> = samples.x.iter().map(|r| dice.features(r)).collect();
    let xn: Vec<Vec<f64>> = samples.x_next.iter().map(|r| dice.features(r)).collect();
    let x0: Vec<Vec<f64>> = samples.x_init.iter().map(|r| dice.features(r)).collect();

    let seed: u64 = rng.random();
    let mut srng = substream(seed, 0);
    let gamma = dice.config.gamma;
    let bs = dice.config.batch_size;
    let mut order: Vec<usize> = (0..n).collect();
    let mut init_order: Vec<usize> = (0..x0.len()).collect();
    let mut objective = 0.0;
    let mut cursor = n;
    let mut init_cursor = x0.len();
    for it in 0..iterations {
        if cursor + bs.min(n) > n {
            order.shuffle(&mut srng);
            cursor = 0;
        }
        let rows = &order[cursor..cursor + bs.min(n)];
        cursor += rows.len();
        let m0 = bs.min(x0.len());
        if init_cursor + m0 > x0.len() {
            init_order.shuffle(&mut srng);
            init_cursor = 0;
        }
        let init_rows = &init_order[init_cursor..init_cursor + m0];
        init_cursor += m0;

        let bx = Tensor::from_rows(&rows.iter().map(|&i| &x[i]).collect::<Vec<_>>())?;
        let bxn = Tensor::from_rows(&rows.iter().map(|&i| &xn[i]).collect::<Vec<_>>())?;
        let bx0 = Tensor::from_rows(&init_rows.iter().map(|&i| &x0[i]).collect::<Vec<_>>())?;
        let mut g = Graph::new();
        let nu = dice.nu.bind(&mut g);
        let zeta = dice.zeta.bind(&mut g);
        let (ix, ixn, ix0) = (g.input(bx)?, g.input(bxn)?, g.input(bx0)?);
        let nu_x = nu.forward(&mut g, ix)?.out;
        let nu_xn = nu.forward(&mut g, ixn)?.out;
        let nu_x0 = nu.forward(&mut g, ix0)?.out;
        let z = zeta.forward(&mut g, ix)?.out;
        let bellman = g.scale(nu_xn, -gamma);
        let bellman = g.add(nu_x, bellman)?;
        let cross = g.mul(bellman, z)?;
        let z2 = g.square(z);
        let z2 = g.scale(z2, -0.5);
        let inner = g.add(cross, z2)?;
        let inner = g.mean(inner);
        let init = g.mean(nu_x0);
        let init = g.scale(init, -(1.0 - gamma));
        let obj = g.add(inner, init)?;
        objective = g.value(obj).item()?;
        if !objective.is_finite() || objective.abs() > dice.config.divergence {
            return Err(Error::Divergence(format!(
                "dice objective {objective:.3e} at iteration {it}; disable the distribution correction"
            )));
        }
        let grads = g.backward(obj)?;
        let gnu = grads.collect(&nu.params)?;
        let gz: Vec<Tensor> = grads.collect(&zeta.params)?.iter().map(|t| t.map(|v| -v)).collect();
        dice.nu.apply_adam(&mut dice.nu_opt, &gnu)?;
        dice.zeta.apply_adam(&mut dice.zeta_opt, &gz)?;
        dice.steps += 1;
    }
    let raw = dice.zeta.predict(&Tensor::from_rows(&x)?)?;
    let (lo, hi) = (dice.config.w_min, dice.config.w_max);
    let mut clipped = 0usize;
    dice.weights = raw
        .out
        .values()
        .iter()
        .map(|&z| {
            let w = clip(z, lo, hi);
            if w != z {
                clipped += 1;
            }
            w
        })
        .collect();
    Ok(DiceReport {
        final_objective: objective,
        mean_weight: dice.weights.iter().sum::<f64>() / n as f64,
        clipped_fraction: clipped as f64 / n as f64,
    })
}

/// Correction weights for every dataset row, treating model states `(s, a)`
/// as the chain. Successors come from the model actor followed by the
/// policy's mean action; initial rows pair `init_states` with the policy.
#[allow(clippy::too_many_arguments)]
pub fn dualdice_correction(
    dice: &mut DiceState,
    dataset: &DatasetBuffer,
    model: &EnsembleModel,
    actor_member: usize,
    policy: &dyn Policy,
    init_states: &[Vec<f64>],
    iterations: usize,
    rng: &mut SimRng,
) -> Result<Vec<f64>> {
    if dataset.is_empty() {
        return Err(Error::Dataset("empty dataset for distribution correction".into()));
    }
    let seed: u64 = rng.random();
    let mut mrng = substream(seed, 0);
    let join = |s: &[f64], a: &[f64]| s.iter().chain(a).copied().collect::<Vec<f64>>();
    let mut x = Vec::with_capacity(dataset.len());
    let mut x_next = Vec::with_capacity(dataset.len());
    for t in dataset.iter() {
        x.push(join(&t.s, &t.a));
        let p = model.sample_member(actor_member, &t.s, &t.a, &mut mrng)?;
        let moved = Transition {
            s_next: p.s_next,
            ..t.clone()
        };
        let sm = relabel_next_model_state(&moved, policy, ActionMode::Mean, &mut mrng);
        x_next.push(join(&sm.s, &sm.a));
    }
    let x_init = init_states.iter().map(|s| join(s, &policy.act_mean(s))).collect();
    let samples = DiceSamples { x, x_next, x_init };
    dualdice_fit(dice, &samples, iterations, &mut substream(seed, 1))?;
    Ok(dice.weights.clone())
}
