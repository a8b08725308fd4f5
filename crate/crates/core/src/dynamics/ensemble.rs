use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::normalizer::{model_input, model_target, Normalizer};
use super::{DynamicsModel, MemberGaussian};
use crate::autodiff::{
    gaussian_nll, gaussian_nll_value, Activation, AdamState, BoundMlp, Graph, MlpParams, NodeId, Tensor,
};
use crate::env::{DatasetBuffer, Transition};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from, substream, SimRng};

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleConfig {
    pub members: usize,
    /// Elite count; `None` keeps the better half, rounded up.
    pub elites: Option<usize>,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub lr: f64,
    pub batch_size: usize,
    pub logvar_min: f64,
    pub logvar_max: f64,
    pub holdout_frac: f64,
    /// Passes over each member's bootstrap sample per training call.
    pub train_epochs: usize,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            members: 7,
            elites: None,
            hidden: vec![64, 64, 64],
            activation: Activation::Relu,
            lr: 1e-3,
            batch_size: 256,
            logvar_min: -10.0,
            logvar_max: 4.0,
            holdout_frac: 0.1,
            train_epochs: 5,
        }
    }
}

impl EnsembleConfig {
    pub fn n_elites(&self) -> usize {
        self.elites.unwrap_or(self.members.div_ceil(2))
    }

    pub fn validate(&self) -> Result<()> {
        if self.members == 0 {
            return Err(Error::Config("ensemble needs at least one member".into()));
        }
        let k = self.n_elites();
        if k == 0 || k > self.members {
            return Err(Error::Config(format!("{k} elites for {} members", self.members)));
        }
        if !(self.lr > 0.0) || self.batch_size == 0 {
            return Err(Error::Config("ensemble lr and batch size must be positive".into()));
        }
        if !(self.logvar_min < self.logvar_max) {
            return Err(Error::Config("logvar_min must be below logvar_max".into()));
        }
        if !(0.0..1.0).contains(&self.holdout_frac) {
            return Err(Error::Config("holdout_frac must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean holdout NLL over members before this call's updates.
    pub initial_holdout_nll: f64,
    pub holdout_nll: Vec<f64>,
    pub elites: Vec<usize>,
    /// Mean training loss over the last epoch, averaged over members.
    pub final_train_loss: f64,
    /// Next-state RMSE of the elite mean on the holdout split, raw units.
    pub holdout_state_rmse: f64,
    pub n_train: usize,
    pub n_holdout: usize,
}

/// `E` Gaussian-head networks over `(s, a) -> (delta_s, r)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleModel {
    format_version: u32,
    config: EnsembleConfig,
    state_dim: usize,
    action_dim: usize,
    members: Vec<MlpParams>,
    optimizers: Vec<AdamState>,
    normalizer: Option<Normalizer>,
    elites: Vec<usize>,
    seed: u64,
}

/// Normalized inputs and targets for a set of transitions.
pub(crate) struct Prepared {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
}

impl EnsembleModel {
    pub fn new(state_dim: usize, action_dim: usize, config: EnsembleConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let out = state_dim + 1;
        let members: Vec<MlpParams> = (0..config.members)
            .map(|i| {
                let mut rng = substream(seed, i as u64);
                MlpParams::gaussian(
                    state_dim + action_dim,
                    &config.hidden,
                    out,
                    config.activation,
                    (config.logvar_min, config.logvar_max),
                    &mut rng,
                )
            })
            .collect();
        let optimizers = members.iter().map(|m| AdamState::new(&m.params(), config.lr)).collect();
        Ok(Self {
            format_version: CHECKPOINT_VERSION,
            config,
            state_dim,
            action_dim,
            members,
            optimizers,
            normalizer: None,
            elites: Vec::new(),
            seed,
        })
    }

    pub fn config(&self) -> &EnsembleConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n_members(&self) -> usize {
        self.members.len()
    }

    pub fn members(&self) -> &[MlpParams] {
        &self.members
    }

    pub fn member_mut(&mut self, i: usize) -> &mut MlpParams {
        &mut self.members[i]
    }

    pub fn normalizer(&self) -> Option<&Normalizer> {
        self.normalizer.as_ref()
    }

    pub fn set_normalizer(&mut self, n: Normalizer) {
        self.normalizer = Some(n);
        if self.elites.is_empty() {
            self.elites = (0..self.config.n_elites()).collect();
        }
    }

    pub fn is_trained(&self) -> bool {
        self.normalizer.is_some()
    }

    pub fn set_elites(&mut self, mut elites: Vec<usize>) -> Result<()> {
        elites.sort_unstable();
        elites.dedup();
        if elites.is_empty() || elites.iter().any(|&e| e >= self.members.len()) {
            return Err(Error::InvalidArgument(format!("bad elite set {elites:?}")));
        }
        self.elites = elites;
        Ok(())
    }

    fn require_normalizer(&self) -> Result<&Normalizer> {
        self.normalizer.as_ref().ok_or(Error::Untrained("dynamics model"))
    }

    pub(crate) fn prepare<'a>(&self, ts: impl IntoIterator<Item = &'a Transition>) -> Result<Prepared> {
        let norm = self.require_normalizer()?;
        let (mut x, mut y) = (Vec::new(), Vec::new());
        for t in ts {
            if t.s.len() != self.state_dim || t.a.len() != self.action_dim {
                return Err(Error::shape(
                    "ensemble",
                    format!(
                        "transition dims ({}, {}) but model expects ({}, {})",
                        t.s.len(),
                        t.a.len(),
                        self.state_dim,
                        self.action_dim
                    ),
                ));
            }
            x.push(norm.normalize_input(&model_input(&t.s, &t.a)));
            y.push(norm.normalize_target(&model_target(t)));
        }
        Ok(Prepared { x, y })
    }

    /// Mean one-step NLL of `member` on normalized rows, with its gradients
    /// in parameter order.
    pub fn one_step_gradients(&self, member: usize, batch: &[&Transition]) -> Result<(f64, Vec<Tensor>)> {
        let p = self.prepare(batch.iter().copied())?;
        let x = Tensor::from_rows(&p.x)?;
        let y = Tensor::from_rows(&p.y)?;
        self.batch_gradients(member, &x, &y)
    }

    fn batch_gradients(&self, member: usize, x: &Tensor, y: &Tensor) -> Result<(f64, Vec<Tensor>)> {
        let mut g = Graph::new();
        let xi = g.input(x.clone())?;
        let (bound, out) = self.members[member].forward(&mut g, xi)?;
        let yi = g.constant(y.clone());
        let lv = out.logvar.expect("ensemble members have a variance head");
        let loss = gaussian_nll(&mut g, out.out, lv, yi)?;
        let value = g.value(loss).item()?;
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("member {member} training loss")));
        }
        let grads = g.backward(loss)?.collect(&bound.params)?;
        Ok((value, grads))
    }

    pub fn apply_gradients(&mut self, member: usize, grads: &[Tensor]) -> Result<()> {
        let (m, opt) = (&mut self.members[member], &mut self.optimizers[member]);
        m.apply_adam(opt, grads)
    }

    /// Graph forward pass of a bound member from raw state and action nodes,
    /// returning the normalized mean and log-variance.
    pub(crate) fn forward_raw(
        &self,
        bound: &BoundMlp,
        g: &mut Graph,
        s: NodeId,
        a: NodeId,
    ) -> Result<(NodeId, NodeId)> {
        let norm = self.require_normalizer()?;
        let x = g.concat_cols(s, a)?;
        let shift = g.constant(Tensor::row(&norm.in_mean.iter().map(|m| -m).collect::<Vec<_>>())?);
        let inv = g.constant(Tensor::row(&norm.in_std.iter().map(|s| 1.0 / s).collect::<Vec<_>>())?);
        let x = g.add_row(x, shift)?;
        let x = g.mul_row(x, inv)?;
        let out = bound.forward(g, x)?;
        Ok((out.out, out.logvar.expect("variance head")))
    }

    fn nll_on(&self, member: usize, x: &Tensor, y: &Tensor) -> Result<f64> {
        let p = self.members[member].predict(x)?;
        gaussian_nll_value(&p.out, p.logvar.as_ref().expect("variance head"), y)
    }

    /// Holdout NLL of every member on the given transitions.
    pub fn evaluate_nll(&self, ts: &[&Transition]) -> Result<Vec<f64>> {
        let p = self.prepare(ts.iter().copied())?;
        let x = Tensor::from_rows(&p.x)?;
        let y = Tensor::from_rows(&p.y)?;
        (0..self.members.len()).map(|m| self.nll_on(m, &x, &y)).collect()
    }

    /// Next-state RMSE of the elite-mean prediction.
    pub fn state_rmse(&self, ts: &[&Transition]) -> Result<f64> {
        if ts.is_empty() {
            return Ok(0.0);
        }
        let mut se = 0.0;
        for t in ts {
            let m = self.predict_mean(&t.s, &t.a)?;
            se += t.s_next.iter().zip(&m.mean).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        }
        Ok((se / (ts.len() * self.state_dim) as f64).sqrt())
    }

    /// Refits the normalizer, then trains each member on its own bootstrap
    /// resample and reselects elites by holdout NLL.
    pub fn train_one_step(
        &mut self,
        dataset: &DatasetBuffer,
        epochs: usize,
        holdout_frac: f64,
        rng: &mut SimRng,
    ) -> Result<TrainReport> {
        let members: Vec<usize> = (0..self.members.len()).collect();
        self.train_members(dataset, epochs, holdout_frac, &members, rng)
    }

    /// As [`EnsembleModel::train_one_step`], but only `train` members are
    /// updated. Elite selection still ranks every member.
    pub fn train_members(
        &mut self,
        dataset: &DatasetBuffer,
        epochs: usize,
        holdout_frac: f64,
        train: &[usize],
        rng: &mut SimRng,
    ) -> Result<TrainReport> {
        let e = self.members.len();
        let n = dataset.len();
        if n < 2 * e {
            return Err(Error::Dataset(format!(
                "{n} transitions is too few for {e} members (need {})",
                2 * e
            )));
        }
        if !(0.0..1.0).contains(&holdout_frac) {
            return Err(Error::InvalidArgument("holdout_frac must lie in [0, 1)".into()));
        }
        let all: Vec<&Transition> = dataset.iter().collect();
        self.normalizer = Some(Normalizer::fit(all.iter().copied())?);
        let call_seed: u64 = rng.random();

        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut substream(call_seed, u64::MAX));
        let n_hold = if holdout_frac > 0.0 {
            ((n as f64 * holdout_frac).round() as usize).clamp(1, n - e)
        } else {
            0
        };
        let (hold_idx, train_idx) = order.split_at(n_hold);
        let prepared = self.prepare(all.iter().copied())?;
        let eval_idx: &[usize] = if n_hold > 0 { hold_idx } else { train_idx };
        let hx = Tensor::from_rows(&eval_idx.iter().map(|&i| &prepared.x[i]).collect::<Vec<_>>())?;
        let hy = Tensor::from_rows(&eval_idx.iter().map(|&i| &prepared.y[i]).collect::<Vec<_>>())?;

        let initial: Vec<f64> = (0..e).map(|m| self.nll_on(m, &hx, &hy)).collect::<Result<_>>()?;
        let mut last_losses = Vec::new();
        for &m in train {
            let mut mrng = substream(call_seed, m as u64);
            let nt = train_idx.len();
            let mut boot: Vec<usize> = (0..nt).map(|_| train_idx[mrng.random_range(0..nt)]).collect();
            let mut epoch_loss = 0.0;
            for _ in 0..epochs {
                boot.shuffle(&mut mrng);
                let (mut total, mut batches) = (0.0, 0usize);
                for chunk in boot.chunks(self.config.batch_size) {
                    let x = Tensor::from_rows(&chunk.iter().map(|&i| &prepared.x[i]).collect::<Vec<_>>())?;
                    let y = Tensor::from_rows(&chunk.iter().map(|&i| &prepared.y[i]).collect::<Vec<_>>())?;
                    let (loss, grads) = self.batch_gradients(m, &x, &y)?;
                    self.apply_gradients(m, &grads)?;
                    total += loss;
                    batches += 1;
                }
                epoch_loss = total / batches.max(1) as f64;
            }
            last_losses.push(epoch_loss);
        }
        let holdout_nll: Vec<f64> = (0..e).map(|m| self.nll_on(m, &hx, &hy)).collect::<Result<_>>()?;
        self.elites = select_elites(&holdout_nll, self.config.n_elites());
        let hold_ts: Vec<&Transition> = eval_idx.iter().map(|&i| all[i]).collect();
        Ok(TrainReport {
            initial_holdout_nll: initial.iter().sum::<f64>() / e as f64,
            holdout_state_rmse: self.state_rmse(&hold_ts)?,
            holdout_nll,
            elites: self.elites.clone(),
            final_train_loss: if last_losses.is_empty() {
                f64::NAN
            } else {
                last_losses.iter().sum::<f64>() / last_losses.len() as f64
            },
            n_train: train_idx.len(),
            n_holdout: n_hold,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(s)?;
        if m.format_version != CHECKPOINT_VERSION {
            return Err(Error::Serde(format!(
                "unsupported ensemble checkpoint version {}",
                m.format_version
            )));
        }
        m.config.validate()?;
        if m.members.len() != m.config.members || m.optimizers.len() != m.members.len() {
            return Err(Error::Serde("member count disagrees with config".into()));
        }
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    /// Deterministic generator for draws tied to this model's seed.
    pub fn stream(&self, tag: u64) -> SimRng {
        rng_from(derive_seed(self.seed, tag))
    }
}

/// The `k` best members by `(nll, index)`, returned in ascending index order.
pub fn select_elites(nll: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..nll.len()).collect();
    idx.sort_by(|&a, &b| nll[a].total_cmp(&nll[b]).then(a.cmp(&b)));
    let mut best: Vec<usize> = idx.into_iter().take(k.max(1)).collect();
    best.sort_unstable();
    best
}

impl DynamicsModel for EnsembleModel {
    fn state_dim(&self) -> usize {
        self.state_dim
    }

    fn action_dim(&self) -> usize {
        self.action_dim
    }

    fn elites(&self) -> Result<&[usize]> {
        self.require_normalizer()?;
        Ok(&self.elites)
    }

    fn member_gaussian(&self, member: usize, s: &[f64], a: &[f64]) -> Result<MemberGaussian> {
        let norm = self.require_normalizer()?;
        if s.len() != self.state_dim || a.len() != self.action_dim {
            return Err(Error::shape(
                "predict",
                format!(
                    "got ({}, {}) for model ({}, {})",
                    s.len(),
                    a.len(),
                    self.state_dim,
                    self.action_dim
                ),
            ));
        }
        let x = norm.normalize_input(&model_input(s, a));
        let (mu, lv) = self.members[member].predict_row(&x)?;
        let lv = lv.expect("variance head");
        let mean = norm.denormalize_target(&mu);
        let var = lv
            .iter()
            .zip(&norm.out_std)
            .map(|(&l, &sd)| sd * sd * l.exp())
            .collect();
        Ok(MemberGaussian { mean, var })
    }
}
