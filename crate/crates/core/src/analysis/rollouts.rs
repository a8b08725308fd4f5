use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Env, PointMaze};
use crate::error::{Error, Result};
use crate::learners::{BranchStart, RolloutGenerator};
use crate::model_mdp::ModelRewardFn;
use crate::rng::{substream, SimRng};
use crate::sac::Policy;

/// Mean per-step and accumulated prediction error along model rollouts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorCurve {
    pub strategy: String,
    pub per_step: Vec<f64>,
    pub accumulated: Vec<f64>,
    pub n_branches: usize,
}

impl ErrorCurve {
    /// `step,per_step_error,accumulated_error` rows, steps counted from 1.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,per_step_error,accumulated_error\n");
        for (i, (e, a)) in self.per_step.iter().zip(&self.accumulated).enumerate() {
            out.push_str(&format!("{},{e},{a}\n", i + 1));
        }
        out
    }
}

/// How per-step errors are measured.
#[derive(Clone, Copy)]
pub enum ErrorMode<'a> {
    /// Re-simulate every model step with the true environment.
    Exact,
    /// Trust a learned model-reward estimate instead.
    Learned(&'a dyn ModelRewardFn),
}

/// Rolls out the generator from every start and measures, at each step, the
/// distance between the model's next state and the true step from the
/// model's own current state. Branches that terminated early contribute zero
/// error from then on.
pub fn accumulated_error_curve(
    env: &dyn Env,
    generator: &dyn RolloutGenerator,
    policy: &dyn Policy,
    starts: &[BranchStart],
    rollout_len: usize,
    mode: ErrorMode<'_>,
    rng: &mut SimRng,
) -> Result<ErrorCurve> {
    if !env.supports_state_setting() {
        return Err(Error::InvalidArgument(
            "environment cannot be set to model states".into(),
        ));
    }
    let terminal = |s: &[f64]| env.is_terminal(s);
    let batch = generator.generate(starts, policy, rollout_len, &terminal, 0, rng)?;
    let mut env_rng = substream(rng.random(), 0);
    let mut per_step = vec![0.0; rollout_len];
    for (t, o) in batch.transitions.iter().zip(&batch.origins) {
        let e = match mode {
            ErrorMode::Exact => {
                let truth = env.step(&t.s, &t.a, &mut env_rng).state;
                t.s_next
                    .iter()
                    .zip(&truth)
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt()
            }
            ErrorMode::Learned(rm) => (-rm.model_reward(&t.s, &t.a)?).max(0.0),
        };
        per_step[o.step] += e;
    }
    let n = starts.len() as f64;
    let mut acc = 0.0;
    let mut accumulated = Vec::with_capacity(rollout_len);
    for e in per_step.iter_mut() {
        *e /= n;
        acc += *e;
        accumulated.push(acc);
    }
    Ok(ErrorCurve {
        strategy: generator.strategy().to_string(),
        per_step,
        accumulated,
        n_branches: starts.len(),
    })
}

/// A group of rollouts that visit the same sequence of maze cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryCluster {
    pub rank: usize,
    pub frequency: usize,
    pub cells: Vec<usize>,
    /// Positions of the first rollout in the group, clamped to the maze.
    pub positions: Vec<(f64, f64)>,
    pub enters_uncertain: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryDump {
    pub strategy: String,
    pub start: Vec<f64>,
    pub n_rollouts: usize,
    pub clusters: Vec<TrajectoryCluster>,
}

impl TrajectoryDump {
    /// One JSON object per cluster.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for c in &self.clusters {
            let rec = serde_json::json!({
                "strategy": self.strategy,
                "rank": c.rank,
                "frequency": c.frequency,
                "enters_uncertain": c.enters_uncertain,
                "xy": c.positions,
            });
            out.push_str(&serde_json::to_string(&rec)?);
            out.push('\n');
        }
        Ok(out)
    }
}

/// Runs `n_rollouts` model rollouts from one start state, groups them by the
/// sequence of cells they pass through (repeats collapsed) and keeps the
/// `top_k` most frequent groups. Ties in frequency go to the group seen first.
#[allow(clippy::too_many_arguments)]
pub fn export_rollout_trajectories(
    generator: &dyn RolloutGenerator,
    policy: &dyn Policy,
    maze: &PointMaze,
    start: &[f64],
    n_rollouts: usize,
    rollout_len: usize,
    top_k: usize,
    rng: &mut SimRng,
) -> Result<TrajectoryDump> {
    if start.len() < 2 {
        return Err(Error::InvalidArgument("start state has no planar position".into()));
    }
    let starts: Vec<BranchStart> = (0..n_rollouts)
        .map(|i| BranchStart {
            index: i,
            s: start.to_vec(),
        })
        .collect();
    let terminal = |s: &[f64]| maze.is_terminal(s);
    let batch = generator.generate(&starts, policy, rollout_len, &terminal, 0, rng)?;
    let clamp = |s: &[f64]| (s[0].clamp(0.0, 1.0), s[1].clamp(0.0, 1.0));
    let mut groups: Vec<TrajectoryCluster> = Vec::new();
    let mut index: HashMap<Vec<usize>, usize> = HashMap::new();
    for traj in batch.trajectories() {
        let mut positions = vec![clamp(start)];
        positions.extend(traj.iter().map(|t| clamp(&t.s_next)));
        let mut cells: Vec<usize> = Vec::new();
        let mut uncertain = false;
        for &(x, y) in &positions {
            let c = maze.cell_index(&[x, y]);
            uncertain |= maze.in_uncertain_region(&[x, y]);
            if cells.last() != Some(&c) {
                cells.push(c);
            }
        }
        match index.get(&cells) {
            Some(&g) => groups[g].frequency += 1,
            None => {
                index.insert(cells.clone(), groups.len());
                groups.push(TrajectoryCluster {
                    rank: 0,
                    frequency: 1,
                    cells,
                    positions,
                    enters_uncertain: uncertain,
                });
            }
        }
    }
    // stable sort keeps first-seen order among equal frequencies
    groups.sort_by_key(|g| std::cmp::Reverse(g.frequency));
    groups.truncate(top_k);
    for (i, g) in groups.iter_mut().enumerate() {
        g.rank = i + 1;
    }
    Ok(TrajectoryDump {
        strategy: generator.strategy().to_string(),
        start: start.to_vec(),
        n_rollouts,
        clusters: groups,
    })
}

/// Frequency-weighted share of the exported rollouts that enter an
/// uncertain cell.
pub fn uncertain_fraction(dump: &TrajectoryDump) -> f64 {
    let total: usize = dump.clusters.iter().map(|c| c.frequency).sum();
    if total == 0 {
        return 0.0;
    }
    let hit: usize = dump
        .clusters
        .iter()
        .filter(|c| c.enters_uncertain)
        .map(|c| c.frequency)
        .sum();
    hit as f64 / total as f64
}
