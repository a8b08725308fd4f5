use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Policy;
use crate::autodiff::{mse, softplus, Activation, AdamState, Graph, MlpParams, NodeId, Tensor, LN_2PI};
use crate::env::{EnvSpec, Transition};
use crate::error::{Error, Result};
use crate::rng::{normal_vec, substream, SimRng};

const CHECKPOINT_VERSION: u32 = 1;
const LOG_ALPHA_FLOOR: f64 = -30.0;
/// Keeps squashed actions strictly inside the box once `tanh` saturates.
const TANH_LIMIT: f64 = 1.0 - 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SacConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub lr: f64,
    pub gamma: f64,
    pub tau: f64,
    pub batch_size: usize,
    pub init_alpha: f64,
    /// `None` uses minus the action dimension.
    pub target_entropy: Option<f64>,
    pub log_std_min: f64,
    pub log_std_max: f64,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            activation: Activation::Relu,
            lr: 3e-4,
            gamma: 0.99,
            tau: 0.005,
            batch_size: 256,
            init_alpha: 0.2,
            target_entropy: None,
            log_std_min: -10.0,
            log_std_max: 2.0,
        }
    }
}

impl SacConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("sac gamma {} not in [0, 1)", self.gamma)));
        }
        if !(0.0..=1.0).contains(&self.tau) || !(self.lr > 0.0) || self.batch_size == 0 {
            return Err(Error::Config("sac tau, lr or batch size out of range".into()));
        }
        if !(self.init_alpha > 0.0) || !(self.log_std_min < self.log_std_max) {
            return Err(Error::Config("sac alpha or log-std bounds invalid".into()));
        }
        Ok(())
    }
}

/// Column-stacked transitions for one update.
#[derive(Debug, Clone)]
pub struct SacBatch {
    pub s: Tensor,
    pub a: Tensor,
    pub r: Tensor,
    pub s_next: Tensor,
    pub done: Tensor,
    /// Share of rows that came from real environment data.
    pub real_fraction: f64,
}

impl SacBatch {
    pub fn from_transitions(ts: &[&Transition], real_rows: usize) -> Result<Self> {
        if ts.is_empty() {
            return Err(Error::InvalidArgument("empty SAC batch".into()));
        }
        let col = |f: &dyn Fn(&Transition) -> f64| -> Result<Tensor> {
            Tensor::matrix(ts.len(), 1, ts.iter().map(|t| f(t)).collect())
        };
        Ok(Self {
            s: Tensor::from_rows(&ts.iter().map(|t| t.s.as_slice()).collect::<Vec<_>>())?,
            a: Tensor::from_rows(&ts.iter().map(|t| t.a.as_slice()).collect::<Vec<_>>())?,
            r: col(&|t| t.r)?,
            s_next: Tensor::from_rows(&ts.iter().map(|t| t.s_next.as_slice()).collect::<Vec<_>>())?,
            done: col(&|t| if t.done { 1.0 } else { 0.0 })?,
            real_fraction: real_rows as f64 / ts.len() as f64,
        })
    }

    pub fn len(&self) -> usize {
        self.s.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SacReport {
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub alpha_loss: f64,
    pub alpha: f64,
    pub mean_q: f64,
    pub mean_log_prob: f64,
}

/// Actor, twin critics with Polyak targets, and a log-parameterized
/// temperature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyBundle {
    format_version: u32,
    pub config: SacConfig,
    state_dim: usize,
    action_dim: usize,
    action_scale: Vec<f64>,
    action_bias: Vec<f64>,
    pub actor: MlpParams,
    pub critics: [MlpParams; 2],
    pub targets: [MlpParams; 2],
    log_alpha: f64,
    actor_opt: AdamState,
    critic_opts: [AdamState; 2],
    alpha_opt: AdamState,
    updates: u64,
    /// Epoch at which this copy was frozen as the data-collecting policy.
    pub snapshot_epoch: Option<usize>,
}

/// Squashes `u = mean + exp(log_std) * eps` through `tanh` and the action
/// box, returning the action and its log-density (with the Jacobian of both
/// maps).
pub fn squashed_sample(mean: &[f64], log_std: &[f64], eps: &[f64], scale: &[f64], bias: &[f64]) -> (Vec<f64>, f64) {
    let mut action = Vec::with_capacity(mean.len());
    let mut lp = 0.0;
    for j in 0..mean.len() {
        let u = mean[j] + log_std[j].exp() * eps[j];
        action.push(u.tanh().clamp(-TANH_LIMIT, TANH_LIMIT) * scale[j] + bias[j]);
        let log_jac = 2.0 * (std::f64::consts::LN_2 - u - softplus(-2.0 * u));
        lp += -0.5 * eps[j] * eps[j] - log_std[j] - 0.5 * LN_2PI - log_jac - scale[j].ln();
    }
    (action, lp)
}

struct ActorNodes {
    params: Vec<NodeId>,
    action: NodeId,
    log_prob: NodeId,
    mean_action: NodeId,
}

impl PolicyBundle {
    pub fn new(spec: &EnvSpec, config: SacConfig, seed: u64) -> Result<Self> {
        spec.validate()?;
        config.validate()?;
        let (sd, ad) = (spec.state_dim, spec.action_dim);
        let mut rng = substream(seed, 0x5ac);
        let actor = MlpParams::new(sd, &config.hidden, 2 * ad, config.activation, &mut rng);
        let critic = |rng: &mut SimRng| MlpParams::new(sd + ad, &config.hidden, 1, config.activation, rng);
        let critics = [critic(&mut rng), critic(&mut rng)];
        let targets = critics.clone();
        let lr = config.lr;
        let log_alpha = config.init_alpha.ln();
        Ok(Self {
            format_version: CHECKPOINT_VERSION,
            state_dim: sd,
            action_dim: ad,
            action_scale: spec
                .action_low
                .iter()
                .zip(&spec.action_high)
                .map(|(l, h)| 0.5 * (h - l))
                .collect(),
            action_bias: spec
                .action_low
                .iter()
                .zip(&spec.action_high)
                .map(|(l, h)| 0.5 * (h + l))
                .collect(),
            actor_opt: AdamState::new(&actor.params(), lr),
            critic_opts: [
                AdamState::new(&critics[0].params(), lr),
                AdamState::new(&critics[1].params(), lr),
            ],
            alpha_opt: AdamState::new(&[&Tensor::full(1, 1, 0.0)], lr),
            actor,
            critics,
            targets,
            log_alpha,
            updates: 0,
            snapshot_epoch: None,
            config,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    pub fn log_alpha(&self) -> f64 {
        self.log_alpha
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn target_entropy(&self) -> f64 {
        self.config.target_entropy.unwrap_or(-(self.action_dim as f64))
    }

    /// A frozen copy tagged as the data-collecting policy of `epoch`.
    pub fn snapshot(&self, epoch: usize) -> Self {
        let mut c = self.clone();
        c.snapshot_epoch = Some(epoch);
        c
    }

    fn bound_log_std(&self, raw: f64) -> f64 {
        let (lo, hi) = (self.config.log_std_min, self.config.log_std_max);
        0.5 * (hi - lo) * raw.tanh() + (lo + 0.5 * (hi - lo))
    }

    /// Pre-squash mean and log-std at `s`.
    pub fn actor_distribution(&self, s: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (out, _) = self.actor.predict_row(s).expect("state width checked by caller");
        let d = self.action_dim;
        let log_std = out[d..].iter().map(|&r| self.bound_log_std(r)).collect();
        (out[..d].to_vec(), log_std)
    }

    /// `(action, log_prob)` with `u ~ N(mean, std)`.
    pub fn actor_sample(&self, s: &[f64], rng: &mut SimRng) -> (Vec<f64>, f64) {
        let (mean, log_std) = self.actor_distribution(s);
        let eps = normal_vec(rng, self.action_dim);
        squashed_sample(&mean, &log_std, &eps, &self.action_scale, &self.action_bias)
    }

    pub fn mean_action(&self, s: &[f64]) -> Vec<f64> {
        let (mean, _) = self.actor_distribution(s);
        mean.iter()
            .zip(self.action_scale.iter().zip(&self.action_bias))
            .map(|(m, (sc, b))| m.tanh().clamp(-TANH_LIMIT, TANH_LIMIT) * sc + b)
            .collect()
    }

    pub fn q_values(&self, s: &[f64], a: &[f64]) -> Result<[f64; 2]> {
        let mut x = s.to_vec();
        x.extend_from_slice(a);
        Ok([
            self.critics[0].predict_row(&x)?.0[0],
            self.critics[1].predict_row(&x)?.0[0],
        ])
    }

    fn actor_graph(&self, g: &mut Graph, s: NodeId, eps: &Tensor, trainable: bool) -> Result<ActorNodes> {
        let d = self.action_dim;
        let bound = if trainable {
            self.actor.bind(g)
        } else {
            self.actor.bind_frozen(g)
        };
        let out = bound.forward(g, s)?.out;
        let mean = g.slice_cols(out, 0, d)?;
        let raw = g.slice_cols(out, d, 2 * d)?;
        let (lo, hi) = (self.config.log_std_min, self.config.log_std_max);
        let t = g.tanh(raw);
        let t = g.scale(t, 0.5 * (hi - lo));
        let log_std = g.add_scalar(t, lo + 0.5 * (hi - lo));
        let std = g.exp(log_std);
        let eps_node = g.constant(eps.clone());
        let noise = g.mul(std, eps_node)?;
        let u = g.add(mean, noise)?;
        let scale = g.constant(Tensor::row(&self.action_scale)?);
        let bias = g.constant(Tensor::row(&self.action_bias)?);
        let squashed = g.tanh(u);
        let action = g.mul_row(squashed, scale)?;
        let action = g.add_row(action, bias)?;
        let tm = g.tanh(mean);
        let mean_action = g.mul_row(tm, scale)?;
        let mean_action = g.add_row(mean_action, bias)?;

        // -0.5 eps^2 - 0.5 ln 2pi - 2 ln 2, per element
        let base = eps.map(|e| -0.5 * e * e - 0.5 * LN_2PI - 2.0 * std::f64::consts::LN_2);
        let base = g.constant(base);
        let m2u = g.scale(u, -2.0);
        let sp = g.softplus(m2u);
        let sp2 = g.scale(sp, 2.0);
        let u2 = g.scale(u, 2.0);
        let jac = g.add(u2, sp2)?;
        let lp = g.add(base, jac)?;
        let lp = g.sub(lp, log_std)?;
        let lp = g.sum_cols(lp);
        let log_scale: f64 = self.action_scale.iter().map(|s| s.ln()).sum();
        let log_prob = g.add_scalar(lp, -log_scale);
        Ok(ActorNodes {
            params: bound.params,
            action,
            log_prob,
            mean_action,
        })
    }

    fn min_q_graph(&self, g: &mut Graph, nets: &[MlpParams; 2], s: NodeId, a: NodeId) -> Result<NodeId> {
        let x = g.concat_cols(s, a)?;
        let q1 = nets[0].bind_frozen(g).forward(g, x)?.out;
        let q2 = nets[1].bind_frozen(g).forward(g, x)?.out;
        g.min(q1, q2)
    }

    /// Soft Bellman targets `r + gamma (1 - done) (min Q_targ(s', a') - alpha log pi(a'|s'))`.
    pub fn critic_targets(&self, batch: &SacBatch, rng: &mut SimRng) -> Result<Tensor> {
        let n = batch.len();
        let eps = Tensor::matrix(n, self.action_dim, normal_vec(rng, n * self.action_dim))?;
        let mut g = Graph::new();
        let sn = g.input(batch.s_next.clone())?;
        let next = self.actor_graph(&mut g, sn, &eps, false)?;
        let qn = self.min_q_graph(&mut g, &self.targets, sn, next.action)?;
        let (qn, lp) = (g.value(qn), g.value(next.log_prob));
        let alpha = self.alpha();
        let gamma = self.config.gamma;
        let vals = (0..n)
            .map(|i| {
                let soft = qn.get(i, 0) - alpha * lp.get(i, 0);
                batch.r.get(i, 0) + gamma * (1.0 - batch.done.get(i, 0)) * soft
            })
            .collect();
        Tensor::matrix(n, 1, vals)
    }

    /// Actor objective `mean(alpha log pi - min Q)` plus an optional
    /// behaviour-cloning term `bc_weight * scale * mse(mean action, target)`
    /// where `scale` is the detached batch mean of `|Q|` when `normalize`.
    pub fn bc_regularized_actor_loss(
        &self,
        states: &Tensor,
        eps: &Tensor,
        bc: Option<(&Tensor, f64, bool)>,
    ) -> Result<(f64, Vec<Tensor>, f64)> {
        let mut g = Graph::new();
        let s = g.input(states.clone())?;
        let nodes = self.actor_graph(&mut g, s, eps, true)?;
        let q = self.min_q_graph(&mut g, &self.critics, s, nodes.action)?;
        let alpha = self.alpha();
        let alp = g.scale(nodes.log_prob, alpha);
        let diff = g.sub(alp, q)?;
        let mut loss = g.mean(diff);
        let mut bc_value = 0.0;
        if let Some((target, weight, normalize)) = bc {
            if weight > 0.0 {
                let t = g.constant(target.clone());
                let err = mse(&mut g, nodes.mean_action, t)?;
                bc_value = g.value(err).item()?;
                let scale = if normalize {
                    let qv = g.value(q).values();
                    qv.iter().map(|x| x.abs()).sum::<f64>() / qv.len() as f64
                } else {
                    1.0
                };
                let term = g.scale(err, weight * scale);
                loss = g.add(loss, term)?;
            }
        }
        let value = g.value(loss).item()?;
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("actor loss (alpha {alpha}, bc {bc_value})")));
        }
        let grads = g.backward(loss)?.collect(&nodes.params)?;
        Ok((value, grads, bc_value))
    }

    /// One critic, actor and temperature step followed by a Polyak update.
    pub fn sac_update(&mut self, batch: &SacBatch, rng: &mut SimRng) -> Result<SacReport> {
        self.update_with_bc(batch, None, rng)
    }

    /// [`PolicyBundle::sac_update`] with the actor loss regularized towards
    /// the actions of the batch's real rows with weight `bc_weight`. Model
    /// rows are targeted at the actor's own mean action, so they add nothing
    /// to the gradient.
    pub fn update_with_bc(&mut self, batch: &SacBatch, bc: Option<(f64, bool)>, rng: &mut SimRng) -> Result<SacReport> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty SAC batch".into()));
        }
        let n = batch.len();
        let y = self.critic_targets(batch, rng)?;

        let mut g = Graph::new();
        let s = g.input(batch.s.clone())?;
        let a = g.input(batch.a.clone())?;
        let x = g.concat_cols(s, a)?;
        let b1 = self.critics[0].bind(&mut g);
        let q1 = b1.forward(&mut g, x)?.out;
        let b2 = self.critics[1].bind(&mut g);
        let q2 = b2.forward(&mut g, x)?.out;
        let yn = g.constant(y);
        let l1 = mse(&mut g, q1, yn)?;
        let l2 = mse(&mut g, q2, yn)?;
        let critic_loss = g.add(l1, l2)?;
        let critic_value = g.value(critic_loss).item()?;
        if !critic_value.is_finite() {
            return Err(Error::NonFinite(format!("critic loss over {n} rows")));
        }
        let mean_q = g.value(q1).values().iter().sum::<f64>() / n as f64;
        let grads = g.backward(critic_loss)?;
        let g1 = grads.collect(&b1.params)?;
        let g2 = grads.collect(&b2.params)?;
        self.critics[0].apply_adam(&mut self.critic_opts[0], &g1)?;
        self.critics[1].apply_adam(&mut self.critic_opts[1], &g2)?;

        let eps = Tensor::matrix(n, self.action_dim, normal_vec(rng, n * self.action_dim))?;
        let bc_target = match bc {
            Some(_) => Some(self.bc_targets(batch)?),
            None => None,
        };
        let bc_arg = bc.map(|(w, norm)| (bc_target.as_ref().unwrap_or(&batch.a), w, norm));
        let (actor_value, actor_grads, _) = self.bc_regularized_actor_loss(&batch.s, &eps, bc_arg)?;
        // log-probabilities of the pre-update actor on the same noise
        let mut g = Graph::new();
        let s = g.input(batch.s.clone())?;
        let lp = self.actor_graph(&mut g, s, &eps, false)?.log_prob;
        let mean_lp = g.value(lp).values().iter().sum::<f64>() / n as f64;
        self.actor.apply_adam(&mut self.actor_opt, &actor_grads)?;

        let gap = mean_lp + self.target_entropy();
        let alpha_loss = -self.log_alpha * gap;
        let mut la = [Tensor::full(1, 1, self.log_alpha)];
        {
            let mut refs: Vec<&mut Tensor> = la.iter_mut().collect();
            self.alpha_opt.step(&mut refs, &[Tensor::full(1, 1, -gap)])?;
        }
        self.log_alpha = la[0].values()[0].max(LOG_ALPHA_FLOOR);

        self.polyak_targets();
        self.updates += 1;
        Ok(SacReport {
            critic_loss: critic_value,
            actor_loss: actor_value,
            alpha_loss,
            alpha: self.alpha(),
            mean_q,
            mean_log_prob: mean_lp,
        })
    }

    fn bc_targets(&self, batch: &SacBatch) -> Result<Tensor> {
        let n = batch.len();
        let real = ((batch.real_fraction * n as f64).round() as usize).min(n);
        if real == n {
            return Ok(batch.a.clone());
        }
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                if i < real {
                    batch.a.values()[i * self.action_dim..(i + 1) * self.action_dim].to_vec()
                } else {
                    self.mean_action(&batch.s.values()[i * self.state_dim..(i + 1) * self.state_dim])
                }
            })
            .collect();
        Tensor::from_rows(&rows)
    }

    /// `target <- (1 - tau) target + tau critic` for both critics.
    pub fn polyak_targets(&mut self) {
        let tau = self.config.tau;
        for i in 0..2 {
            self.targets[i].polyak_from(&self.critics[i], tau);
        }
    }

    /// Monte-Carlo total-variation distance between the action
    /// distributions of two policies, averaged over `states`.
    ///
    /// Squashing is a bijection, so the pre-squash Gaussians give the same
    /// value.
    pub fn tv_to(&self, other: &PolicyBundle, states: &[Vec<f64>], samples: usize, rng: &mut SimRng) -> f64 {
        if states.is_empty() || samples == 0 {
            return 0.0;
        }
        let log_density = |mean: &[f64], ls: &[f64], u: &[f64]| -> f64 {
            (0..u.len())
                .map(|j| {
                    let z = (u[j] - mean[j]) / ls[j].exp();
                    -0.5 * z * z - ls[j] - 0.5 * LN_2PI
                })
                .sum()
        };
        let mut total = 0.0;
        for s in states {
            let (mp, lp) = self.actor_distribution(s);
            let (mq, lq) = other.actor_distribution(s);
            let mut acc = 0.0;
            for _ in 0..samples {
                let eps = normal_vec(rng, self.action_dim);
                let u: Vec<f64> = (0..eps.len()).map(|j| mp[j] + lp[j].exp() * eps[j]).collect();
                let ratio = (log_density(&mq, &lq, &u) - log_density(&mp, &lp, &u)).exp();
                acc += (1.0 - ratio).max(0.0);
            }
            total += acc / samples as f64;
        }
        total / states.len() as f64
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let p: Self = serde_json::from_str(s)?;
        if p.format_version != CHECKPOINT_VERSION {
            return Err(Error::Serde(format!(
                "unsupported policy checkpoint version {}",
                p.format_version
            )));
        }
        Ok(p)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

impl Policy for PolicyBundle {
    fn act_mean(&self, s: &[f64]) -> Vec<f64> {
        self.mean_action(s)
    }

    fn act_sample(&self, s: &[f64], rng: &mut SimRng) -> Vec<f64> {
        self.actor_sample(s, rng).0
    }
}
