use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::trainer::Trainer;
use crate::analysis::{accumulated_error_curve, ErrorMode};
use crate::env::DatasetBuffer;
use crate::error::{Error, Result};
use crate::learners::{BranchStart, LearnerKind};
use crate::rng::named_stream;

/// Branches used to measure the final accumulated error of each run.
const PROBE_BRANCHES: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub horizon: usize,
    pub seed: u64,
    pub eval_return_mean: f64,
    pub eval_return_std: f64,
    pub accumulated_error: f64,
}

impl AblationRow {
    pub fn csv_header() -> &'static str {
        "horizon,seed,eval_return_mean,eval_return_std,accumulated_error\n"
    }

    pub fn to_csv(rows: &[AblationRow]) -> String {
        let mut out = String::from(Self::csv_header());
        for r in rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.horizon, r.seed, r.eval_return_mean, r.eval_return_std, r.accumulated_error
            ));
        }
        out
    }
}

/// Trains one planner run per (horizon, seed) and reports the final
/// evaluation return and the accumulated model error after
/// `config.error_probe_len` rollout steps. Offline configs use `dataset`.
pub fn horizon_ablation(
    config: &RunConfig,
    dataset: Option<&DatasetBuffer>,
    horizons: &[usize],
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    for &h in horizons {
        let mut cfg = config.clone();
        cfg.model_learner = LearnerKind::P2pMpc;
        cfg.planner.horizon = h;
        for &seed in &config.seeds {
            let mut t = match dataset {
                Some(d) => Trainer::with_dataset(cfg.clone(), seed, d.clone())?,
                None => Trainer::new(cfg.clone(), seed)?,
            };
            t.train(None)?;
            let eval = t.evaluate()?;
            let gen = t.generator().ok_or(Error::Untrained("planner model after training"))?;
            let mut rng = named_stream(seed, "ablation/probe");
            let data = t.dataset();
            let starts: Vec<BranchStart> = data
                .sample_indices(PROBE_BRANCHES, &mut rng)
                .into_iter()
                .map(|i| BranchStart {
                    index: i,
                    s: data.get(i).s.clone(),
                })
                .collect();
            let curve = accumulated_error_curve(
                t.env(),
                gen.as_ref(),
                t.policy(),
                &starts,
                config.error_probe_len.max(1),
                ErrorMode::Exact,
                &mut rng,
            )?;
            rows.push(AblationRow {
                horizon: h,
                seed,
                eval_return_mean: eval.mean,
                eval_return_std: eval.std,
                accumulated_error: curve.accumulated.last().copied().unwrap_or(0.0),
            });
        }
    }
    Ok(rows)
}
