//! Model learning strategies and the rollout generators they drive.
//!
//! Four ways of fitting the dynamics model are available: plain one-step
//! likelihood training, planning-based rollout generation scored by a learned
//! model-reward network, offline actor-critic training of one ensemble member
//! over the model MDP, and a multi-step likelihood unrolled along stored
//! trajectories.

mod dice;
mod multistep;
mod p2p_rl;
mod planner;

pub use dice::{dualdice_correction, dualdice_fit, DiceConfig, DiceReport, DiceSamples, DiceState};
pub use multistep::{contiguous_starts, dataset_multistep_update, multistep_gradients};
pub use p2p_rl::{build_rl_batch, p2p_rl_update, ModelCritic, P2pRlConfig, P2pRlReport, RlBatch};
pub use planner::{p2p_mpc_generate_rollout, p2p_mpc_plan, P2pMpcRollouts, Plan, PlannerConfig};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{DynamicsModel, EnsembleModel};
use crate::env::Transition;
use crate::error::{Error, Result};
use crate::rng::{substream, SimRng};
use crate::sac::Policy;

/// Strategy used to fit the dynamics model. `None` skips the model entirely
/// and leaves plain model-free SAC.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    None,
    #[default]
    OneStep,
    P2pMpc,
    P2pRl,
    DatasetMultistep,
}

impl LearnerKind {
    pub fn name(self) -> &'static str {
        match self {
            LearnerKind::None => "none",
            LearnerKind::OneStep => "one_step",
            LearnerKind::P2pMpc => "p2p_mpc",
            LearnerKind::P2pRl => "p2p_rl",
            LearnerKind::DatasetMultistep => "dataset_multistep",
        }
    }
}

impl std::str::FromStr for LearnerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "none" => LearnerKind::None,
            "one_step" => LearnerKind::OneStep,
            "p2p_mpc" => LearnerKind::P2pMpc,
            "p2p_rl" => LearnerKind::P2pRl,
            "dataset_multistep" => LearnerKind::DatasetMultistep,
            other => return Err(Error::Config(format!("unknown model learner {other:?}"))),
        })
    }
}

/// Where a branch starts: a dataset index and the state stored there.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchStart {
    pub index: usize,
    pub s: Vec<f64>,
}

/// Which branch, dataset start and rollout step produced a transition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RolloutOrigin {
    pub branch: usize,
    pub start: usize,
    pub step: usize,
}

/// Model-generated transitions and where each one came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutBatch {
    pub strategy: String,
    pub epoch: usize,
    pub transitions: Vec<Transition>,
    pub origins: Vec<RolloutOrigin>,
}

impl RolloutBatch {
    pub fn new(strategy: &str, epoch: usize) -> Self {
        Self {
            strategy: strategy.to_string(),
            epoch,
            transitions: Vec::new(),
            origins: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn push(&mut self, t: Transition, origin: RolloutOrigin) -> Result<()> {
        if !t.r.is_finite() || t.s_next.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!(
                "{} rollout at branch {} step {}",
                self.strategy, origin.branch, origin.step
            )));
        }
        self.transitions.push(t);
        self.origins.push(origin);
        Ok(())
    }

    /// Transitions grouped per branch, in step order.
    pub fn trajectories(&self) -> Vec<Vec<&Transition>> {
        let n = self.origins.iter().map(|o| o.branch + 1).max().unwrap_or(0);
        let mut out = vec![Vec::new(); n];
        for (t, o) in self.transitions.iter().zip(&self.origins) {
            out[o.branch].push(t);
        }
        out
    }
}

/// Termination test applied to model-predicted states.
pub type TerminalFn<'a> = &'a (dyn Fn(&[f64]) -> bool + Sync);

/// Produces branched rollouts from dataset states under a fixed policy.
pub trait RolloutGenerator {
    fn strategy(&self) -> &str;

    /// Rolls out one branch. `rng` is private to the branch.
    fn branch(
        &self,
        start: &BranchStart,
        policy: &dyn Policy,
        rollout_len: usize,
        terminal: TerminalFn<'_>,
        rng: &mut SimRng,
    ) -> Result<Vec<Transition>>;

    /// Every start gets its own stream derived from one draw of `rng`, so
    /// branches are independent of each other and of evaluation order.
    fn generate(
        &self,
        starts: &[BranchStart],
        policy: &dyn Policy,
        rollout_len: usize,
        terminal: TerminalFn<'_>,
        epoch: usize,
        rng: &mut SimRng,
    ) -> Result<RolloutBatch> {
        if starts.is_empty() {
            return Err(Error::InvalidArgument("no branch start states".into()));
        }
        if rollout_len == 0 {
            return Err(Error::InvalidArgument("rollout length must be at least 1".into()));
        }
        let seed: u64 = rng.random();
        let mut batch = RolloutBatch::new(self.strategy(), epoch);
        for (b, start) in starts.iter().enumerate() {
            let steps = self.branch(start, policy, rollout_len, terminal, &mut substream(seed, b as u64))?;
            for (k, t) in steps.into_iter().enumerate() {
                batch.push(
                    t,
                    RolloutOrigin {
                        branch: b,
                        start: start.index,
                        step: k,
                    },
                )?;
            }
        }
        Ok(batch)
    }
}

/// Plain model rollouts: sampled policy actions, one model draw per step.
/// With `member` set, every draw comes from that network instead of a
/// random elite.
pub struct SampledRollouts<'a> {
    pub model: &'a dyn DynamicsModel,
    pub member: Option<usize>,
    pub strategy: &'a str,
}

impl<'a> SampledRollouts<'a> {
    pub fn new(model: &'a dyn DynamicsModel, strategy: &'a str) -> Self {
        Self {
            model,
            member: None,
            strategy,
        }
    }
}

impl RolloutGenerator for SampledRollouts<'_> {
    fn strategy(&self) -> &str {
        self.strategy
    }

    fn branch(
        &self,
        start: &BranchStart,
        policy: &dyn Policy,
        rollout_len: usize,
        terminal: TerminalFn<'_>,
        rng: &mut SimRng,
    ) -> Result<Vec<Transition>> {
        let mut out = Vec::with_capacity(rollout_len);
        let mut s = start.s.clone();
        for _ in 0..rollout_len {
            let a = policy.act_sample(&s, rng);
            let p = match self.member {
                Some(m) => self.model.sample_member(m, &s, &a, rng)?,
                None => self.model.predict_sample(&s, &a, rng)?,
            };
            let done = terminal(&p.s_next);
            out.push(Transition {
                s,
                a,
                r: p.r,
                s_next: p.s_next.clone(),
                done,
            });
            if done {
                break;
            }
            s = p.s_next;
        }
        Ok(out)
    }
}

/// Convenience: plain one-step-model rollouts from an ensemble.
pub fn one_step_rollouts(model: &EnsembleModel) -> SampledRollouts<'_> {
    SampledRollouts::new(model, LearnerKind::OneStep.name())
}
