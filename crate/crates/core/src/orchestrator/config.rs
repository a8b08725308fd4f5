use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dynamics::EnsembleConfig;
use crate::error::{Error, Result};
use crate::learners::{LearnerKind, P2pRlConfig, PlannerConfig};
use crate::model_mdp::RmConfig;
use crate::sac::SacConfig;

/// Model rollout length as a function of the epoch: a linear ramp from
/// `start` to `end` over `ramp_epochs` epochs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RolloutSchedule {
    pub start: usize,
    pub end: usize,
    /// `None` ramps over the first 40% of the run.
    pub ramp_epochs: Option<usize>,
}

impl Default for RolloutSchedule {
    fn default() -> Self {
        Self {
            start: 1,
            end: 5,
            ramp_epochs: None,
        }
    }
}

impl RolloutSchedule {
    /// A constant length.
    pub fn fixed(len: usize) -> Self {
        Self {
            start: len,
            end: len,
            ramp_epochs: Some(0),
        }
    }

    pub fn len_at(&self, epoch: usize, total_epochs: usize) -> usize {
        let ramp = self.ramp_epochs.unwrap_or((total_epochs * 2).div_ceil(5));
        if ramp == 0 || epoch >= ramp {
            return self.end;
        }
        let frac = epoch as f64 / ramp as f64;
        let len = self.start as f64 + frac * (self.end as f64 - self.start as f64);
        (len.floor() as usize).max(1)
    }

    pub fn max_len(&self) -> usize {
        self.start.max(self.end)
    }
}

/// Everything a training run needs. Unknown keys are rejected so that typos
/// in config files surface immediately.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// `point_reach` or `point_maze`.
    pub env: String,
    pub seeds: Vec<u64>,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    /// Uniformly random actions for this many initial env steps.
    pub init_random_steps: usize,
    pub model_learner: LearnerKind,
    pub rollout_schedule: RolloutSchedule,
    /// Branches started from real states each epoch.
    pub rollouts_per_epoch: usize,
    /// `None` keeps two epochs' worth of rollouts.
    pub model_buffer_capacity: Option<usize>,
    /// Share of real transitions in every SAC batch.
    pub real_ratio: f64,
    pub sac_updates_per_step: usize,
    /// SAC updates per epoch in offline mode.
    pub offline_updates_per_epoch: usize,
    /// Behaviour-cloning weight for the policy in offline mode; 0 disables.
    pub policy_bc_weight: f64,
    /// Scale the cloning term by the batch mean `|Q|`.
    pub policy_bc_normalize: bool,
    pub real_buffer_capacity: usize,
    /// Passes over the data per model-reward refresh.
    pub rm_epochs: usize,
    /// Model actor-critic updates per epoch for `p2p_rl`.
    pub p2p_rl_updates: usize,
    /// Unroll length for `dataset_multistep`.
    pub multistep_horizon: usize,
    /// Offline mode: epochs between model-reward label refreshes.
    pub refresh_every: usize,
    pub eval_episodes: usize,
    /// Branches used for the per-epoch accumulated-error probe; 0 skips it.
    pub error_probe_branches: usize,
    pub error_probe_len: usize,
    pub offline: bool,
    pub dataset: Option<PathBuf>,
    pub sac: SacConfig,
    pub ensemble: EnsembleConfig,
    pub planner: PlannerConfig,
    pub rm: RmConfig,
    pub p2p_rl: P2pRlConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            env: "point_reach".into(),
            seeds: vec![0],
            epochs: 20,
            steps_per_epoch: 1000,
            init_random_steps: 1000,
            model_learner: LearnerKind::OneStep,
            rollout_schedule: RolloutSchedule::default(),
            rollouts_per_epoch: 400,
            model_buffer_capacity: None,
            real_ratio: 0.05,
            sac_updates_per_step: 1,
            offline_updates_per_epoch: 1000,
            policy_bc_weight: 0.0,
            policy_bc_normalize: true,
            real_buffer_capacity: 1_000_000,
            rm_epochs: 5,
            p2p_rl_updates: 200,
            multistep_horizon: 3,
            refresh_every: 1,
            eval_episodes: 10,
            error_probe_branches: 0,
            error_probe_len: 10,
            offline: false,
            dataset: None,
            sac: SacConfig::default(),
            ensemble: EnsembleConfig::default(),
            planner: PlannerConfig::default(),
            rm: RmConfig::default(),
            p2p_rl: P2pRlConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        crate::env::make_env(&self.env)?;
        let s = &self.rollout_schedule;
        if s.start == 0 || s.end == 0 {
            return Err(Error::Config("rollout length must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.real_ratio) {
            return Err(Error::Config(format!("real_ratio {} not in [0, 1]", self.real_ratio)));
        }
        if self.eval_episodes == 0 {
            return Err(Error::Config("eval_episodes must be at least 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("no seeds given".into()));
        }
        if self.multistep_horizon == 0 || self.refresh_every == 0 {
            return Err(Error::Config(
                "multistep_horizon and refresh_every must be positive".into(),
            ));
        }
        if !(self.policy_bc_weight >= 0.0) {
            return Err(Error::Config("policy_bc_weight must be non-negative".into()));
        }
        if self.error_probe_branches > 0 && self.error_probe_len == 0 {
            return Err(Error::Config("error_probe_len must be positive".into()));
        }
        if self.model_buffer_capacity == Some(0) {
            return Err(Error::Config("model buffer capacity must be positive".into()));
        }
        if self.offline && self.dataset.is_none() {
            return Err(Error::Config("offline runs need a dataset path".into()));
        }
        if self.model_learner == LearnerKind::P2pRl && self.p2p_rl.actor_member >= self.ensemble.members {
            return Err(Error::Config(format!(
                "actor member {} but the ensemble has {}",
                self.p2p_rl.actor_member, self.ensemble.members
            )));
        }
        self.sac.validate()?;
        self.ensemble.validate()?;
        self.planner.validate()?;
        self.rm.validate()?;
        self.p2p_rl.validate()
    }

    pub fn model_buffer_capacity(&self) -> usize {
        self.model_buffer_capacity
            .unwrap_or(2 * self.rollouts_per_epoch * self.rollout_schedule.max_len())
            .max(1)
    }
}
