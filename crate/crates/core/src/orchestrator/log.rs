use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One epoch's worth of measurements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Training env steps so far; stays 0 offline.
    pub env_steps: u64,
    pub eval_return_mean: f64,
    pub eval_return_std: f64,
    pub eval_success_rate: f64,
    pub strategy: String,
    pub rollout_len: usize,
    pub rollouts_added: usize,
    pub model_buffer_len: usize,
    pub model_holdout_nll: Option<f64>,
    pub model_state_rmse: Option<f64>,
    /// Mean accumulated error at the last probed rollout step.
    pub accumulated_error: Option<f64>,
    /// Total variation between the data-collecting and the updated policy.
    pub policy_shift_tv: f64,
    pub sac_critic_loss: Option<f64>,
    pub sac_alpha: f64,
    /// Learner-specific numbers (model-reward fit, actor-critic losses, ...).
    pub diagnostics: Vec<(String, f64)>,
}

/// Append-only list of epoch records with strictly increasing epochs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    records: Vec<EpochRecord>,
}

impl RunLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, rec: EpochRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            if rec.epoch <= last.epoch {
                return Err(Error::InvalidArgument(format!(
                    "epoch {} logged after epoch {}",
                    rec.epoch, last.epoch
                )));
            }
        }
        self.records.push(rec);
        Ok(())
    }

    pub fn records(&self) -> &[EpochRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    /// One JSON object per epoch.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut log = Self::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            log.push(serde_json::from_str(line)?)?;
        }
        Ok(log)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,env_steps,eval_return_mean,eval_return_std\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.epoch, r.env_steps, r.eval_return_mean, r.eval_return_std
            ));
        }
        out
    }

    /// Writes `log.jsonl` and `log.csv` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_file(&dir.join("log.jsonl"), &self.to_jsonl()?)?;
        write_file(&dir.join("log.csv"), &self.to_csv())
    }
}

/// Per-epoch wall-clock seconds, kept apart from the log so that logs of
/// identical runs compare equal.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub epoch_seconds: Vec<(usize, f64)>,
}

impl Timings {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,seconds\n");
        for (e, s) in &self.epoch_seconds {
            out.push_str(&format!("{e},{s:.3}\n"));
        }
        out
    }
}

pub(crate) fn write_file(path: &Path, text: &str) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}
