use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{BranchStart, RolloutBatch, RolloutGenerator, TerminalFn};
use crate::dynamics::DynamicsModel;
use crate::env::Transition;
use crate::error::{Error, Result};
use crate::model_mdp::{model_mdp_step, ActionMode, ModelAction, ModelRewardFn, ModelState};
use crate::rng::{normal, substream, SimRng};
use crate::sac::Policy;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerConfig {
    /// Lookahead length, counting the current model state.
    pub horizon: usize,
    /// Perturbed-mean candidates on top of one sample per elite.
    pub candidates: usize,
    /// Perturbation scale in units of the predicted standard deviation.
    pub noise_scale: f64,
    /// Per-step weight on the score inside the window.
    pub discount: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            horizon: 6,
            candidates: 10,
            noise_scale: 1.0,
            discount: 1.0,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Config("planning horizon must be at least 1".into()));
        }
        if !(self.noise_scale >= 0.0) || !(self.discount > 0.0) {
            return Err(Error::Config("planner noise must be >= 0 and discount > 0".into()));
        }
        Ok(())
    }
}

/// Outcome of one planning call.
#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub action: ModelAction,
    pub chosen: usize,
    /// Score of every candidate, in candidate order.
    pub scores: Vec<f64>,
    /// Every candidate next state with its reward, in candidate order.
    pub candidates: Vec<ModelAction>,
}

/// Random-shooting choice of the next model state.
///
/// Candidates are one draw per elite member followed by `candidates`
/// perturbations of the mixture mean. Each candidate is followed by
/// `horizon - 1` model states in total: the candidate itself, then single
/// model draws, with the policy's mean action at each. The score sums the
/// estimated model reward over every visited model state including the
/// current one, so with `horizon == 1` all candidates tie and the first one
/// wins. Ties always go to the lowest index.
pub fn p2p_mpc_plan(
    sm: &ModelState,
    model: &dyn DynamicsModel,
    rm: &dyn ModelRewardFn,
    policy: &dyn Policy,
    cfg: &PlannerConfig,
    rng: &mut SimRng,
) -> Result<Plan> {
    cfg.validate()?;
    let plan_seed: u64 = rng.random();
    let mut cand_rng = substream(plan_seed, 0);
    let mut candidates: Vec<ModelAction> = model
        .predict_per_member(&sm.s, &sm.a, &mut cand_rng)?
        .into_iter()
        .map(|p| ModelAction {
            s_next: p.s_next,
            r_pred: p.r,
        })
        .collect();
    if cfg.candidates > 0 {
        let mix = model.predict_mean(&sm.s, &sm.a)?;
        let n = sm.s.len();
        for _ in 0..cfg.candidates {
            let v: Vec<f64> = mix
                .mean
                .iter()
                .zip(&mix.var)
                .map(|(m, var)| m + cfg.noise_scale * var.sqrt() * normal(&mut cand_rng))
                .collect();
            candidates.push(ModelAction {
                s_next: v[..n].to_vec(),
                r_pred: v[n],
            });
        }
    }

    let here = rm.model_reward(&sm.s, &sm.a)?;
    let mut scores = Vec::with_capacity(candidates.len());
    for (i, c) in candidates.iter().enumerate() {
        let mut look = substream(plan_seed, 1 + i as u64);
        let mut score = here;
        let mut weight = 1.0;
        let mut state = ModelState {
            s: sm.s.clone(),
            a: sm.a.clone(),
        };
        let mut next = c.clone();
        for k in 1..cfg.horizon {
            state = model_mdp_step(&state, &next, policy, ActionMode::Mean, &mut look);
            weight *= cfg.discount;
            score += weight * rm.model_reward(&state.s, &state.a)?;
            if k + 1 < cfg.horizon {
                let p = model.predict_sample(&state.s, &state.a, &mut look)?;
                next = ModelAction {
                    s_next: p.s_next,
                    r_pred: p.r,
                };
            }
        }
        if !score.is_finite() {
            return Err(Error::NonFinite(format!("planner score of candidate {i}")));
        }
        scores.push(score);
    }
    let mut chosen = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[chosen] {
            chosen = i;
        }
    }
    Ok(Plan {
        action: candidates[chosen].clone(),
        chosen,
        scores,
        candidates,
    })
}

/// Rollouts whose every step is chosen by the planner.
pub struct P2pMpcRollouts<'a> {
    pub model: &'a dyn DynamicsModel,
    pub rm: &'a dyn ModelRewardFn,
    pub config: PlannerConfig,
}

impl RolloutGenerator for P2pMpcRollouts<'_> {
    fn strategy(&self) -> &str {
        "p2p_mpc"
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
        let mut sm = ModelState {
            s: start.s.clone(),
            a: policy.act_sample(&start.s, rng),
        };
        for step in 0..rollout_len {
            let cfg = PlannerConfig {
                horizon: self.config.horizon.min(rollout_len - step),
                ..self.config.clone()
            };
            let plan = p2p_mpc_plan(&sm, self.model, self.rm, policy, &cfg, rng)?;
            let done = terminal(&plan.action.s_next);
            out.push(Transition {
                s: sm.s.clone(),
                a: sm.a.clone(),
                r: plan.action.r_pred,
                s_next: plan.action.s_next.clone(),
                done,
            });
            if done {
                break;
            }
            sm = model_mdp_step(&sm, &plan.action, policy, ActionMode::Sample, rng);
        }
        Ok(out)
    }
}

/// Branched planner rollouts from the given dataset states.
#[allow(clippy::too_many_arguments)]
pub fn p2p_mpc_generate_rollout(
    starts: &[BranchStart],
    model: &dyn DynamicsModel,
    rm: &dyn ModelRewardFn,
    policy: &dyn Policy,
    cfg: &PlannerConfig,
    rollout_len: usize,
    terminal: TerminalFn<'_>,
    epoch: usize,
    rng: &mut SimRng,
) -> Result<RolloutBatch> {
    let generator = P2pMpcRollouts {
        model,
        rm,
        config: cfg.clone(),
    };
    generator.generate(starts, policy, rollout_len, terminal, epoch, rng)
}
