//! Offline actor-critic over the model MDP.
//!
//! One ensemble member acts as the decision maker: its Gaussian head proposes
//! the next state. Twin critics score `(s, a, s_next)` triples, the reward is
//! the model's own prediction error on real transitions, and a likelihood term
//! on the true next state keeps the member close to the data.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dice::{DiceConfig, DiceState};
use crate::autodiff::{
    gaussian_nll_rows, mse, Activation, AdamState, BoundMlp, Graph, MlpParams, NodeId, Tensor, LN_2PI,
};
use crate::dynamics::EnsembleModel;
use crate::env::{DatasetBuffer, Transition};
use crate::error::{Error, Result};
use crate::model_mdp::{model_reward_exact, relabel_next_model_state, ActionMode};
use crate::rng::{normal_vec, rng_from, SimRng};
use crate::sac::Policy;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct P2pRlConfig {
    /// Ensemble member trained as the model-MDP actor.
    pub actor_member: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub lr: f64,
    pub gamma: f64,
    pub tau: f64,
    /// Fixed entropy weight on the member's log-density.
    pub alpha: f64,
    pub bc_weight: f64,
    /// Scale the likelihood term by the batch mean `|Q|`.
    pub normalize_q: bool,
    pub batch_size: usize,
    pub relabel: ActionMode,
    /// Distribution correction; off unless a config is given.
    pub dice: Option<DiceConfig>,
    pub dice_iterations: usize,
}

impl Default for P2pRlConfig {
    fn default() -> Self {
        Self {
            actor_member: 0,
            hidden: vec![64, 64],
            activation: Activation::Relu,
            lr: 3e-4,
            gamma: 0.99,
            tau: 0.005,
            alpha: 0.01,
            bc_weight: 0.4,
            normalize_q: true,
            batch_size: 256,
            relabel: ActionMode::Mean,
            dice: None,
            dice_iterations: 200,
        }
    }
}

impl P2pRlConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::Config(
                "p2p_rl gamma must lie in [0, 1) and tau in [0, 1]".into(),
            ));
        }
        if !(self.lr > 0.0) || self.batch_size == 0 || !(self.alpha >= 0.0) || !(self.bc_weight >= 0.0) {
            return Err(Error::Config(
                "p2p_rl lr, batch size, alpha and bc_weight out of range".into(),
            ));
        }
        if let Some(d) = &self.dice {
            d.validate()?;
        }
        Ok(())
    }
}

/// One minibatch of relabeled model-MDP transitions.
#[derive(Debug, Clone, PartialEq)]
pub struct RlBatch {
    pub s: Tensor,
    pub a: Tensor,
    /// True next state: the action the data's decision maker took.
    pub s_next: Tensor,
    pub r: Tensor,
    pub done: Tensor,
    pub rm: Tensor,
    /// Policy action at the true next state.
    pub next_a: Tensor,
    pub weights: Tensor,
}

impl RlBatch {
    pub fn len(&self) -> usize {
        self.s.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.s.rows() == 0
    }
}

/// Relabels `ts` with the current policy and scores them with the current
/// model.
pub fn build_rl_batch(
    model: &EnsembleModel,
    ts: &[&Transition],
    weights: Option<&[f64]>,
    policy: &dyn Policy,
    mode: ActionMode,
    rng: &mut SimRng,
) -> Result<RlBatch> {
    if ts.is_empty() {
        return Err(Error::Dataset("empty model-MDP batch".into()));
    }
    let n = ts.len();
    let mut rm = Vec::with_capacity(n);
    let mut next_a = Vec::with_capacity(n);
    for t in ts {
        rm.push(vec![model_reward_exact(t, model, rng)?]);
        next_a.push(relabel_next_model_state(t, policy, mode, rng).a);
    }
    let rows = |f: &dyn Fn(&Transition) -> Vec<f64>| Tensor::from_rows(&ts.iter().map(|t| f(t)).collect::<Vec<_>>());
    Ok(RlBatch {
        s: rows(&|t| t.s.clone())?,
        a: rows(&|t| t.a.clone())?,
        s_next: rows(&|t| t.s_next.clone())?,
        r: rows(&|t| vec![t.r])?,
        done: rows(&|t| vec![if t.done { 1.0 } else { 0.0 }])?,
        rm: Tensor::from_rows(&rm)?,
        next_a: Tensor::from_rows(&next_a)?,
        weights: match weights {
            Some(w) if w.len() == n => Tensor::matrix(n, 1, w.to_vec())?,
            Some(w) => {
                return Err(Error::shape("p2p_rl", format!("{} weights for {n} rows", w.len())));
            }
            None => Tensor::full(n, 1, 1.0),
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct P2pRlReport {
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub bc_nll: f64,
    pub mean_rm: f64,
    pub mean_q: f64,
    pub mean_weight: f64,
}

/// Twin critics over `(s, a, s_next)` plus their targets and optimizers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCritic {
    pub config: P2pRlConfig,
    pub critics: [MlpParams; 2],
    pub targets: [MlpParams; 2],
    opts: [AdamState; 2],
    pub dice: Option<DiceState>,
    pub updates: u64,
}

struct ActorNodes {
    action: NodeId,
    log_prob: NodeId,
    mean: NodeId,
    logvar: NodeId,
}

impl ModelCritic {
    pub fn new(state_dim: usize, action_dim: usize, config: P2pRlConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng_from(seed);
        let d = 2 * state_dim + action_dim;
        let mk = |rng: &mut SimRng| MlpParams::new(d, &config.hidden, 1, config.activation, rng);
        let critics = [mk(&mut rng), mk(&mut rng)];
        let targets = critics.clone();
        let opts = [
            AdamState::new(&critics[0].params(), config.lr),
            AdamState::new(&critics[1].params(), config.lr),
        ];
        let dice = match &config.dice {
            Some(dc) => Some(DiceState::new(state_dim + action_dim, dc.clone(), rng.random())?),
            None => None,
        };
        Ok(Self {
            config,
            critics,
            targets,
            opts,
            dice,
            updates: 0,
        })
    }

    /// Reparameterized draw of the actor member's next state at `(s, a)`.
    fn actor_graph(
        &self,
        model: &EnsembleModel,
        bound: &BoundMlp,
        g: &mut Graph,
        s: NodeId,
        a: NodeId,
        eps: &Tensor,
    ) -> Result<ActorNodes> {
        let norm = model.normalizer().ok_or(Error::Untrained("dynamics model"))?;
        let sd = eps.cols();
        let (mean, logvar) = model.forward_raw(bound, g, s, a)?;
        let mu = g.slice_cols(mean, 0, sd)?;
        let lv = g.slice_cols(logvar, 0, sd)?;
        let half = g.scale(lv, 0.5);
        let std = g.exp(half);
        let e = g.constant(eps.clone());
        let noise = g.mul(std, e)?;
        let z = g.add(mu, noise)?;
        let scale = g.constant(Tensor::row(&norm.out_std[..sd])?);
        let shift = g.constant(Tensor::row(&norm.out_mean[..sd])?);
        let delta = g.mul_row(z, scale)?;
        let delta = g.add_row(delta, shift)?;
        let action = g.add(s, delta)?;
        let log_jac: f64 = norm.out_std[..sd].iter().map(|s| s.ln()).sum();
        let consts: Vec<f64> = (0..eps.rows())
            .map(|i| {
                let sq: f64 = eps.row_slice(i).iter().map(|x| x * x).sum();
                -0.5 * (sq + sd as f64 * LN_2PI) - log_jac
            })
            .collect();
        let c = g.constant(Tensor::matrix(eps.rows(), 1, consts)?);
        let lvsum = g.sum_cols(lv);
        let lvsum = g.scale(lvsum, -0.5);
        let log_prob = g.add(lvsum, c)?;
        Ok(ActorNodes {
            action,
            log_prob,
            mean,
            logvar,
        })
    }

    fn min_q(&self, g: &mut Graph, nets: &[MlpParams; 2], s: NodeId, a: NodeId, sn: NodeId) -> Result<NodeId> {
        let x = g.concat_cols(s, a)?;
        let x = g.concat_cols(x, sn)?;
        let q1 = nets[0].bind_frozen(g).forward(g, x)?.out;
        let q2 = nets[1].bind_frozen(g).forward(g, x)?.out;
        g.min(q1, q2)
    }

    /// `rm + gamma (1 - done) (min Q_target(s', pi(s'), s'') - alpha log p)`
    /// with `s''` drawn from the actor member at the relabeled state.
    pub fn critic_targets(&self, model: &EnsembleModel, batch: &RlBatch, rng: &mut SimRng) -> Result<Tensor> {
        let n = batch.len();
        let sd = batch.s.cols();
        let eps = Tensor::matrix(n, sd, normal_vec(rng, n * sd))?;
        let mut g = Graph::new();
        let bound = model.members()[self.config.actor_member].bind_frozen(&mut g);
        let sn = g.input(batch.s_next.clone())?;
        let an = g.input(batch.next_a.clone())?;
        let next = self.actor_graph(model, &bound, &mut g, sn, an, &eps)?;
        let q = self.min_q(&mut g, &self.targets, sn, an, next.action)?;
        let (q, lp) = (g.value(q), g.value(next.log_prob));
        let (gamma, alpha) = (self.config.gamma, self.config.alpha);
        let vals = (0..n)
            .map(|i| batch.rm.get(i, 0) + gamma * (1.0 - batch.done.get(i, 0)) * (q.get(i, 0) - alpha * lp.get(i, 0)))
            .collect();
        Tensor::matrix(n, 1, vals)
    }

    /// Actor objective for the designated member with gradients in its
    /// parameter order: `mean w (alpha log p - min Q) + bc (mean w NLL)`.
    pub fn actor_loss(&self, model: &EnsembleModel, batch: &RlBatch, eps: &Tensor) -> Result<(f64, Vec<Tensor>, f64)> {
        let norm = model.normalizer().ok_or(Error::Untrained("dynamics model"))?;
        let mut g = Graph::new();
        let bound = model.members()[self.config.actor_member].bind(&mut g);
        let s = g.input(batch.s.clone())?;
        let a = g.input(batch.a.clone())?;
        let nodes = self.actor_graph(model, &bound, &mut g, s, a, eps)?;
        let q = self.min_q(&mut g, &self.critics, s, a, nodes.action)?;
        let w = g.constant(batch.weights.clone());
        let alp = g.scale(nodes.log_prob, self.config.alpha);
        let per = g.sub(alp, q)?;
        let per = g.mul(per, w)?;
        let mut loss = g.mean(per);
        let targets: Vec<Vec<f64>> = (0..batch.len())
            .map(|i| {
                let mut t: Vec<f64> = batch
                    .s_next
                    .row_slice(i)
                    .iter()
                    .zip(batch.s.row_slice(i))
                    .map(|(n, o)| n - o)
                    .collect();
                t.push(batch.r.get(i, 0));
                norm.normalize_target(&t)
            })
            .collect();
        let y = g.constant(Tensor::from_rows(&targets)?);
        let nll = gaussian_nll_rows(&mut g, nodes.mean, nodes.logvar, y)?;
        let nll = g.mul(nll, w)?;
        let nll = g.mean(nll);
        let bc_value = g.value(nll).item()?;
        if self.config.bc_weight > 0.0 {
            let scale = if self.config.normalize_q {
                let qv = g.value(q).values();
                qv.iter().map(|x| x.abs()).sum::<f64>() / qv.len() as f64
            } else {
                1.0
            };
            let term = g.scale(nll, self.config.bc_weight * scale);
            loss = g.add(loss, term)?;
        }
        let value = g.value(loss).item()?;
        if !value.is_finite() {
            return Err(Error::NonFinite(format!(
                "model actor loss over {} rows (likelihood {bc_value}, mean rm {})",
                batch.len(),
                batch.rm.values().iter().sum::<f64>() / batch.len() as f64
            )));
        }
        let grads = g.backward(loss)?.collect(&bound.params)?;
        Ok((value, grads, bc_value))
    }

    /// Critic step, actor step on the designated member, then Polyak.
    pub fn update(&mut self, model: &mut EnsembleModel, batch: &RlBatch, rng: &mut SimRng) -> Result<P2pRlReport> {
        let n = batch.len();
        let y = self.critic_targets(model, batch, rng)?;
        let mut g = Graph::new();
        let s = g.input(batch.s.clone())?;
        let a = g.input(batch.a.clone())?;
        let sn = g.input(batch.s_next.clone())?;
        let x = g.concat_cols(s, a)?;
        let x = g.concat_cols(x, sn)?;
        let w = g.constant(batch.weights.clone());
        let yn = g.constant(y);
        let b1 = self.critics[0].bind(&mut g);
        let b2 = self.critics[1].bind(&mut g);
        let q1 = b1.forward(&mut g, x)?.out;
        let q2 = b2.forward(&mut g, x)?.out;
        let mut losses = Vec::new();
        for q in [q1, q2] {
            let d = g.sub(q, yn)?;
            let d2 = g.square(d);
            let d2 = g.mul(d2, w)?;
            losses.push(g.mean(d2));
        }
        let critic_loss = g.add(losses[0], losses[1])?;
        let critic_value = g.value(critic_loss).item()?;
        if !critic_value.is_finite() {
            return Err(Error::NonFinite(format!(
                "model critic loss over {n} rows (mean rm {})",
                batch.rm.values().iter().sum::<f64>() / n as f64
            )));
        }
        let mean_q = g.value(q1).values().iter().sum::<f64>() / n as f64;
        let grads = g.backward(critic_loss)?;
        let g1 = grads.collect(&b1.params)?;
        let g2 = grads.collect(&b2.params)?;
        self.critics[0].apply_adam(&mut self.opts[0], &g1)?;
        self.critics[1].apply_adam(&mut self.opts[1], &g2)?;

        let sd = batch.s.cols();
        let eps = Tensor::matrix(n, sd, normal_vec(rng, n * sd))?;
        let (actor_value, actor_grads, bc) = self.actor_loss(model, batch, &eps)?;
        model.apply_gradients(self.config.actor_member, &actor_grads)?;

        let tau = self.config.tau;
        for k in 0..2 {
            self.targets[k].polyak_from(&self.critics[k], tau);
        }
        self.updates += 1;
        Ok(P2pRlReport {
            critic_loss: critic_value,
            actor_loss: actor_value,
            bc_nll: bc,
            mean_rm: batch.rm.values().iter().sum::<f64>() / n as f64,
            mean_q,
            mean_weight: batch.weights.values().iter().sum::<f64>() / n as f64,
        })
    }

    /// Critic-only regression check used by tests: plain MSE of critic 0.
    pub fn critic_mse(&self, batch: &RlBatch, y: &Tensor) -> Result<f64> {
        let mut g = Graph::new();
        let s = g.input(batch.s.clone())?;
        let a = g.input(batch.a.clone())?;
        let sn = g.input(batch.s_next.clone())?;
        let x = g.concat_cols(s, a)?;
        let x = g.concat_cols(x, sn)?;
        let q = self.critics[0].bind_frozen(&mut g).forward(&mut g, x)?.out;
        let yn = g.constant(y.clone());
        let l = mse(&mut g, q, yn)?;
        g.value(l).item()
    }
}

/// Samples a minibatch from `dataset`, relabels it, and performs one
/// model-MDP actor-critic update. Correction weights from the critic's
/// distribution-correction state are applied when present.
pub fn p2p_rl_update(
    model: &mut EnsembleModel,
    critic: &mut ModelCritic,
    dataset: &DatasetBuffer,
    policy: &dyn Policy,
    rng: &mut SimRng,
) -> Result<P2pRlReport> {
    if dataset.is_empty() {
        return Err(Error::Dataset("empty dataset for model actor-critic".into()));
    }
    if critic.config.actor_member >= model.n_members() {
        return Err(Error::Config(format!(
            "actor member {} but the ensemble has {}",
            critic.config.actor_member,
            model.n_members()
        )));
    }
    let n = critic.config.batch_size.min(dataset.len());
    let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..dataset.len())).collect();
    let ts: Vec<&Transition> = idx.iter().map(|&i| dataset.get(i)).collect();
    let weights: Option<Vec<f64>> = critic
        .dice
        .as_ref()
        .filter(|d| d.weights.len() == dataset.len())
        .map(|d| idx.iter().map(|&i| d.weights[i]).collect());
    let batch = build_rl_batch(model, &ts, weights.as_deref(), policy, critic.config.relabel, rng)?;
    critic.update(model, &batch, rng)
}
