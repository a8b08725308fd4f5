//! The model rollout process viewed as a decision problem.
//!
//! A model state is a `(state, action)` pair, a model action is the next state
//! the dynamics model commits to, and the policy closes the loop by choosing
//! the next action. The model reward is the negative prediction error of the
//! model on real transitions, either computed directly or learned by a small
//! regression network for use at planning time.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{mse, softplus, Activation, AdamState, Graph, MlpParams, Tensor};
use crate::dynamics::DynamicsModel;
use crate::env::{DatasetBuffer, Transition};
use crate::error::{Error, Result};
use crate::rng::{rng_from, substream, SimRng};
use crate::sac::Policy;
use rand::Rng;

/// `(s, a)`: where the model currently is and what the policy did there.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub s: Vec<f64>,
    pub a: Vec<f64>,
}

/// The model's decision: the next state, plus the reward it predicts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelAction {
    pub s_next: Vec<f64>,
    pub r_pred: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelTransition {
    pub sm: ModelState,
    pub am: ModelAction,
    pub rm: f64,
    pub sm_next: ModelState,
    pub done: bool,
}

impl ModelTransition {
    pub fn new(sm: ModelState, am: ModelAction, rm: f64, sm_next: ModelState, done: bool) -> Result<Self> {
        if sm_next.s != am.s_next {
            return Err(Error::InvalidArgument(
                "next model state must start from the chosen next state".into(),
            ));
        }
        if !(rm <= 0.0) {
            return Err(Error::InvalidArgument(format!("model reward {rm} is positive or NaN")));
        }
        if am.s_next.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("model action".into()));
        }
        Ok(Self {
            sm,
            am,
            rm,
            sm_next,
            done,
        })
    }

    /// The environment-style view: `(s, a, r_pred, s_next, done)`.
    pub fn to_transition(&self) -> Transition {
        Transition {
            s: self.sm.s.clone(),
            a: self.sm.a.clone(),
            r: self.am.r_pred,
            s_next: self.am.s_next.clone(),
            done: self.done,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ModelRecord {
    #[serde(flatten)]
    t: Transition,
    rm: f64,
}

/// One JSON object per line, same fields as a dataset line plus `rm`.
pub fn save_model_transitions(path: impl AsRef<Path>, items: &[ModelTransition]) -> Result<()> {
    let path = path.as_ref();
    let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    for m in items {
        let rec = ModelRecord {
            t: m.to_transition(),
            rm: m.rm,
        };
        writeln!(out, "{}", serde_json::to_string(&rec)?).map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Reads records written by [`save_model_transitions`] back as
/// `(transition, rm)` pairs.
pub fn load_model_records(path: impl AsRef<Path>) -> Result<Vec<(Transition, f64)>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let r: ModelRecord = serde_json::from_str(l)?;
            Ok((r.t, r.rm))
        })
        .collect()
}

/// How the policy acts when it plays the environment of the model MDP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionMode {
    #[default]
    Mean,
    Sample,
}

fn policy_action(policy: &dyn Policy, s: &[f64], mode: ActionMode, rng: &mut SimRng) -> Vec<f64> {
    match mode {
        ActionMode::Mean => policy.act_mean(s),
        ActionMode::Sample => policy.act_sample(s, rng),
    }
}

/// Negative prediction error of `(s_next, r)` against a real transition.
pub fn prediction_error_reward(s_next: &[f64], r: f64, t: &Transition) -> f64 {
    let d2: f64 = s_next.iter().zip(&t.s_next).map(|(a, b)| (a - b).powi(2)).sum();
    -(d2.sqrt() + (r - t.r).abs())
}

/// `-(||s_hat' - s'|| + |r_hat - r|)` for one draw of the model at `(s, a)`.
pub fn model_reward_exact(t: &Transition, model: &dyn DynamicsModel, rng: &mut SimRng) -> Result<f64> {
    let p = model.predict_sample(&t.s, &t.a, rng)?;
    Ok(prediction_error_reward(&p.s_next, p.r, t))
}

/// Same reward using the mixture mean instead of a sample.
pub fn model_reward_mean(t: &Transition, model: &dyn DynamicsModel) -> Result<f64> {
    let m = model.predict_mean(&t.s, &t.a)?;
    let n = t.s_next.len();
    Ok(prediction_error_reward(&m.mean[..n], m.mean[n], t))
}

/// `(s', pi(s'))` for a stored transition under the current policy.
pub fn relabel_next_model_state(t: &Transition, policy: &dyn Policy, mode: ActionMode, rng: &mut SimRng) -> ModelState {
    ModelState {
        s: t.s_next.clone(),
        a: policy_action(policy, &t.s_next, mode, rng),
    }
}

/// The policy half of the model MDP's transition: the model has chosen
/// `am.s_next`, the policy answers with an action there.
pub fn model_mdp_step(
    _sm: &ModelState,
    am: &ModelAction,
    policy: &dyn Policy,
    mode: ActionMode,
    rng: &mut SimRng,
) -> ModelState {
    ModelState {
        s: am.s_next.clone(),
        a: policy_action(policy, &am.s_next, mode, rng),
    }
}

/// Anything that scores a model state with an estimate of the model reward.
pub trait ModelRewardFn: Send + Sync {
    fn model_reward(&self, s: &[f64], a: &[f64]) -> Result<f64>;
}

impl<F> ModelRewardFn for F
where
    F: Fn(&[f64], &[f64]) -> f64 + Send + Sync,
{
    fn model_reward(&self, s: &[f64], a: &[f64]) -> Result<f64> {
        Ok(self(s, a))
    }
}

/// Which model output provides the regression labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    #[default]
    Sample,
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RmConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub lr: f64,
    pub batch_size: usize,
    pub holdout_frac: f64,
    pub label_mode: LabelMode,
}

impl Default for RmConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            activation: Activation::Relu,
            lr: 1e-3,
            batch_size: 256,
            holdout_frac: 0.1,
            label_mode: LabelMode::Sample,
        }
    }
}

impl RmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || self.batch_size == 0 {
            return Err(Error::Config("rm lr and batch size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.holdout_frac) {
            return Err(Error::Config("rm holdout_frac must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmReport {
    pub holdout_mse_before: f64,
    pub holdout_mse_after: f64,
    pub mean_label: f64,
    pub n_train: usize,
    pub n_holdout: usize,
}

/// Regression network for the model reward. The output is `-softplus(net)`,
/// so it can never be positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmEstimator {
    pub config: RmConfig,
    net: MlpParams,
    opt: AdamState,
    in_mean: Vec<f64>,
    in_std: Vec<f64>,
    trained: bool,
    pub calls: usize,
    pub last_report: Option<RmReport>,
}

impl RmEstimator {
    pub fn new(state_dim: usize, action_dim: usize, config: RmConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let d = state_dim + action_dim;
        let net = MlpParams::new(d, &config.hidden, 1, config.activation, &mut rng_from(seed));
        let opt = AdamState::new(&net.params(), config.lr);
        Ok(Self {
            config,
            net,
            opt,
            in_mean: vec![0.0; d],
            in_std: vec![1.0; d],
            trained: false,
            calls: 0,
            last_report: None,
        })
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    pub fn network(&self) -> &MlpParams {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut MlpParams {
        &mut self.net
    }

    fn features(&self, s: &[f64], a: &[f64]) -> Vec<f64> {
        s.iter()
            .chain(a)
            .zip(self.in_mean.iter().zip(&self.in_std))
            .map(|(x, (m, sd))| (x - m) / sd)
            .collect()
    }

    /// Estimate for any input, trained or not.
    pub fn predict(&self, s: &[f64], a: &[f64]) -> Result<f64> {
        let (out, _) = self.net.predict_row(&self.features(s, a))?;
        Ok(-softplus(out[0]))
    }

    fn predict_rows(&self, x: &Tensor) -> Result<Vec<f64>> {
        let p = self.net.predict(x)?;
        Ok(p.out.values().iter().map(|&v| -softplus(v)).collect())
    }
}

impl ModelRewardFn for RmEstimator {
    fn model_reward(&self, s: &[f64], a: &[f64]) -> Result<f64> {
        if !self.trained {
            return Err(Error::Untrained("model reward estimator"));
        }
        self.predict(s, a)
    }
}

fn mse_of(pred: &[f64], y: &[f64]) -> f64 {
    if pred.is_empty() {
        return 0.0;
    }
    pred.iter().zip(y).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / pred.len() as f64
}

/// Refreshes the labels from the current model and regresses the estimator
/// onto them for `epochs` passes.
pub fn train_rm_network(
    est: &mut RmEstimator,
    dataset: &DatasetBuffer,
    model: &dyn DynamicsModel,
    epochs: usize,
    rng: &mut SimRng,
) -> Result<RmReport> {
    if dataset.is_empty() {
        return Err(Error::Dataset("empty dataset for model reward labels".into()));
    }
    let call_seed: u64 = rng.random();
    let mut label_rng = substream(call_seed, 0);
    let ts: Vec<&Transition> = dataset.iter().collect();
    let labels = ts
        .iter()
        .map(|t| match est.config.label_mode {
            LabelMode::Sample => model_reward_exact(t, model, &mut label_rng),
            LabelMode::Mean => model_reward_mean(t, model),
        })
        .collect::<Result<Vec<f64>>>()?;

    let d = est.in_mean.len();
    let n = ts.len();
    let raw: Vec<Vec<f64>> = ts.iter().map(|t| t.s.iter().chain(&t.a).copied().collect()).collect();
    if raw[0].len() != d {
        return Err(Error::shape(
            "rm estimator",
            format!("input width {} vs {d}", raw[0].len()),
        ));
    }
    for j in 0..d {
        let m = raw.iter().map(|r| r[j]).sum::<f64>() / n as f64;
        let v = raw.iter().map(|r| (r[j] - m).powi(2)).sum::<f64>() / n as f64;
        est.in_mean[j] = m;
        est.in_std[j] = v.sqrt().max(crate::dynamics::STD_FLOOR);
    }
    let x: Vec<Vec<f64>> = raw.iter().map(|r| est.features(&r[..], &[])).collect();

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut substream(call_seed, 1));
    let n_hold = if est.config.holdout_frac > 0.0 && n > 1 {
        ((n as f64 * est.config.holdout_frac).round() as usize).clamp(1, n - 1)
    } else {
        0
    };
    let (hold, train) = order.split_at(n_hold);
    let eval: &[usize] = if n_hold > 0 { hold } else { train };
    let hx = Tensor::from_rows(&eval.iter().map(|&i| &x[i]).collect::<Vec<_>>())?;
    let hy: Vec<f64> = eval.iter().map(|&i| labels[i]).collect();
    let before = mse_of(&est.predict_rows(&hx)?, &hy);

    let mut train = train.to_vec();
    let mut srng = substream(call_seed, 2);
    for _ in 0..epochs {
        train.shuffle(&mut srng);
        for chunk in train.chunks(est.config.batch_size) {
            let xb = Tensor::from_rows(&chunk.iter().map(|&i| &x[i]).collect::<Vec<_>>())?;
            let yb = Tensor::matrix(chunk.len(), 1, chunk.iter().map(|&i| labels[i]).collect())?;
            let mut g = Graph::new();
            let xi = g.input(xb)?;
            let (bound, out) = est.net.forward(&mut g, xi)?;
            let sp = g.softplus(out.out);
            let pred = g.scale(sp, -1.0);
            let yi = g.constant(yb);
            let loss = mse(&mut g, pred, yi)?;
            if !g.value(loss).item()?.is_finite() {
                return Err(Error::NonFinite("model reward regression loss".into()));
            }
            let grads = g.backward(loss)?.collect(&bound.params)?;
            est.net.apply_adam(&mut est.opt, &grads)?;
        }
    }
    est.trained = true;
    est.calls += 1;
    let report = RmReport {
        holdout_mse_before: before,
        holdout_mse_after: mse_of(&est.predict_rows(&hx)?, &hy),
        mean_label: labels.iter().sum::<f64>() / n as f64,
        n_train: train.len(),
        n_holdout: n_hold,
    };
    est.last_report = Some(report.clone());
    Ok(report)
}
