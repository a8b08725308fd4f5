use std::collections::VecDeque;
use std::path::Path;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::eval::{evaluate_detailed, EvalSummary};
use super::log::{write_file, EpochRecord, RunLog, Timings};
use crate::analysis::{accumulated_error_curve, ErrorMode};
use crate::dynamics::{EnsembleModel, TrainReport};
use crate::env::{make_env, DatasetBuffer, Env, Transition};
use crate::error::{Error, Result};
use crate::learners::{
    dataset_multistep_update, dualdice_correction, p2p_rl_update, BranchStart, LearnerKind, ModelCritic,
    P2pMpcRollouts, RolloutGenerator, SampledRollouts, TerminalFn,
};
use crate::model_mdp::{train_rm_network, RmEstimator};
use crate::rng::{derive_seed, named_stream, tag, SimRng};
use crate::sac::{Policy, PolicyBundle, SacBatch};

/// States used to measure the policy shift each epoch.
const SHIFT_STATES: usize = 64;
const SHIFT_SAMPLES: usize = 16;
/// Reset states handed to the distribution correction as its initial rows.
const DICE_INIT_STATES: usize = 32;

/// FIFO buffer of model transitions tagged with the epoch that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBuffer {
    items: DatasetBuffer,
    epochs: VecDeque<usize>,
}

impl ModelBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            items: DatasetBuffer::new(capacity),
            epochs: VecDeque::new(),
        }
    }

    pub fn push(&mut self, t: Transition, epoch: usize) -> Result<()> {
        if self.newest_epoch().is_some_and(|e| epoch < e) {
            return Err(Error::InvalidArgument(format!(
                "rollout from epoch {epoch} added after epoch {}",
                self.newest_epoch().unwrap_or(0)
            )));
        }
        self.items.push(t)?;
        if self.epochs.len() == self.items.capacity() {
            self.epochs.pop_front();
        }
        self.epochs.push_back(epoch);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.items.capacity()
    }

    pub fn transitions(&self) -> &DatasetBuffer {
        &self.items
    }

    pub fn epochs(&self) -> impl Iterator<Item = usize> + '_ {
        self.epochs.iter().copied()
    }

    pub fn newest_epoch(&self) -> Option<usize> {
        self.epochs.back().copied()
    }
}

/// Starts `n_branches` rollouts from states drawn uniformly from `dataset`
/// and appends everything the generator returns to `buffer`.
#[allow(clippy::too_many_arguments)]
pub fn branched_rollout(
    buffer: &mut ModelBuffer,
    generator: &dyn RolloutGenerator,
    dataset: &DatasetBuffer,
    policy: &dyn Policy,
    rollout_len: usize,
    n_branches: usize,
    terminal: TerminalFn<'_>,
    epoch: usize,
    rng: &mut SimRng,
) -> Result<usize> {
    if n_branches == 0 {
        return Ok(0);
    }
    if dataset.is_empty() {
        return Err(Error::Dataset("cannot branch rollouts from an empty dataset".into()));
    }
    let starts: Vec<BranchStart> = dataset
        .sample_indices(n_branches, rng)
        .into_iter()
        .map(|i| BranchStart {
            index: i,
            s: dataset.get(i).s.clone(),
        })
        .collect();
    let batch = generator.generate(&starts, policy, rollout_len, terminal, epoch, rng)?;
    let added = batch.len();
    for t in batch.transitions {
        buffer.push(t, epoch)?;
    }
    Ok(added)
}

/// Where the online episode currently stands between epochs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Cursor {
    s: Vec<f64>,
    t: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Streams {
    env: SimRng,
    act: SimRng,
    model: SimRng,
    rollout: SimRng,
    sac: SimRng,
    probe: SimRng,
}

impl Streams {
    fn new(seed: u64) -> Self {
        Self {
            env: named_stream(seed, "train/env"),
            act: named_stream(seed, "train/act"),
            model: named_stream(seed, "train/model"),
            rollout: named_stream(seed, "train/rollout"),
            sac: named_stream(seed, "train/sac"),
            probe: named_stream(seed, "train/probe"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Progress {
    seed: u64,
    epoch: usize,
    env_steps: u64,
    log: RunLog,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Buffers {
    dataset: DatasetBuffer,
    model_buffer: ModelBuffer,
    cursor: Option<Cursor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LearnerState {
    rm: Option<RmEstimator>,
    critic: Option<ModelCritic>,
    data_policy: Option<PolicyBundle>,
}

#[derive(Debug, Clone, PartialEq)]
struct State {
    progress: Progress,
    policy: PolicyBundle,
    model: Option<EnsembleModel>,
    learner: LearnerState,
    buffers: Buffers,
    rng: Streams,
}

#[derive(Default)]
struct ModelOutcome {
    report: Option<TrainReport>,
    diagnostics: Vec<(String, f64)>,
}

/// The epoch loop: collect, snapshot the data-collecting policy, fit the
/// model, branch rollouts, update SAC on the real/model mixture, evaluate.
pub struct Trainer {
    config: RunConfig,
    env: Box<dyn Env>,
    state: State,
    timings: Timings,
}

impl Trainer {
    /// A fresh run. Offline configs load their dataset from `config.dataset`.
    pub fn new(config: RunConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let dataset = if config.offline {
            let path = config.dataset.as_ref().expect("validated offline config has a dataset");
            Some(DatasetBuffer::load_jsonl(path)?)
        } else {
            None
        };
        Self::build(config, seed, dataset)
    }

    /// An offline run on an in-memory dataset.
    pub fn with_dataset(mut config: RunConfig, seed: u64, dataset: DatasetBuffer) -> Result<Self> {
        config.offline = true;
        if config.dataset.is_none() {
            config.dataset = Some("<memory>".into());
        }
        config.validate()?;
        Self::build(config, seed, Some(dataset))
    }

    fn build(config: RunConfig, seed: u64, offline_data: Option<DatasetBuffer>) -> Result<Self> {
        let env = make_env(&config.env)?;
        let spec = env.spec().clone();
        let (sd, ad) = (spec.state_dim, spec.action_dim);
        if let Some(d) = &offline_data {
            if d.is_empty() {
                return Err(Error::Dataset("offline dataset is empty".into()));
            }
            if d.state_dim() != Some(sd) || d.action_dim() != Some(ad) {
                return Err(Error::Dataset(format!(
                    "dataset dimensions do not match {} ({sd} states, {ad} actions)",
                    spec.name
                )));
            }
        }
        let policy = PolicyBundle::new(&spec, config.sac.clone(), derive_seed(seed, tag("init/policy")))?;
        let kind = config.model_learner;
        let model = match kind {
            LearnerKind::None => None,
            _ => Some(EnsembleModel::new(
                sd,
                ad,
                config.ensemble.clone(),
                derive_seed(seed, tag("init/model")),
            )?),
        };
        let rm = match kind {
            LearnerKind::P2pMpc => Some(RmEstimator::new(
                sd,
                ad,
                config.rm.clone(),
                derive_seed(seed, tag("init/rm")),
            )?),
            _ => None,
        };
        let critic = match kind {
            LearnerKind::P2pRl => Some(ModelCritic::new(
                sd,
                ad,
                config.p2p_rl.clone(),
                derive_seed(seed, tag("init/critic")),
            )?),
            _ => None,
        };
        let dataset = offline_data.unwrap_or_else(|| DatasetBuffer::new(config.real_buffer_capacity));
        let state = State {
            progress: Progress {
                seed,
                epoch: 0,
                env_steps: 0,
                log: RunLog::new(),
            },
            policy,
            model,
            learner: LearnerState {
                rm,
                critic,
                data_policy: None,
            },
            buffers: Buffers {
                dataset,
                model_buffer: ModelBuffer::new(config.model_buffer_capacity()),
                cursor: None,
            },
            rng: Streams::new(seed),
        };
        Ok(Self {
            config,
            env,
            state,
            timings: Timings::default(),
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn env(&self) -> &dyn Env {
        self.env.as_ref()
    }

    pub fn seed(&self) -> u64 {
        self.state.progress.seed
    }

    /// Epochs completed so far.
    pub fn epoch(&self) -> usize {
        self.state.progress.epoch
    }

    pub fn env_steps(&self) -> u64 {
        self.state.progress.env_steps
    }

    pub fn log(&self) -> &RunLog {
        &self.state.progress.log
    }

    pub fn timings(&self) -> &Timings {
        &self.timings
    }

    pub fn policy(&self) -> &PolicyBundle {
        &self.state.policy
    }

    pub fn model(&self) -> Option<&EnsembleModel> {
        self.state.model.as_ref()
    }

    pub fn rm_estimator(&self) -> Option<&RmEstimator> {
        self.state.learner.rm.as_ref()
    }

    pub fn model_critic(&self) -> Option<&ModelCritic> {
        self.state.learner.critic.as_ref()
    }

    /// The copy of the policy frozen at the start of the last epoch.
    pub fn data_policy(&self) -> Option<&PolicyBundle> {
        self.state.learner.data_policy.as_ref()
    }

    pub fn dataset(&self) -> &DatasetBuffer {
        &self.state.buffers.dataset
    }

    pub fn model_buffer(&self) -> &ModelBuffer {
        &self.state.buffers.model_buffer
    }

    /// Fixed evaluation seed, disjoint from every training stream.
    pub fn eval_seed(&self) -> u64 {
        derive_seed(self.seed(), tag("eval"))
    }

    pub fn is_finished(&self) -> bool {
        self.epoch() >= self.config.epochs
    }

    /// The rollout generator of the configured learner, if it has a model.
    pub fn generator(&self) -> Option<Box<dyn RolloutGenerator + '_>> {
        generator_for(&self.config, &self.state)
    }

    pub fn evaluate(&self) -> Result<EvalSummary> {
        evaluate_detailed(
            &self.state.policy,
            self.env.as_ref(),
            self.config.eval_episodes,
            self.eval_seed(),
        )
    }

    /// Runs the remaining epochs, checkpointing after each one when `dir` is
    /// given. On error the trainer keeps the last completed epoch.
    pub fn train(&mut self, dir: Option<&Path>) -> Result<&RunLog> {
        while !self.is_finished() {
            self.run_epoch()?;
            if let Some(d) = dir {
                self.save_checkpoint(d)?;
            }
        }
        Ok(self.log())
    }

    /// One epoch. Works on a copy of the state so a failing sub-step leaves
    /// the trainer at the last good epoch.
    pub fn run_epoch(&mut self) -> Result<&EpochRecord> {
        if self.is_finished() {
            return Err(Error::InvalidArgument(format!(
                "all {} epochs already ran",
                self.config.epochs
            )));
        }
        let started = Instant::now();
        let mut next = self.state.clone();
        let rec = epoch_step(&self.config, self.env.as_ref(), &mut next)?;
        next.progress.log.push(rec)?;
        next.progress.epoch += 1;
        self.state = next;
        self.timings
            .epoch_seconds
            .push((self.epoch() - 1, started.elapsed().as_secs_f64()));
        Ok(self.log().last().expect("record just pushed"))
    }

    /// Writes the full run state into `dir`: config, policy, model, learner
    /// state, buffers, RNG streams and the log so far.
    pub fn save_checkpoint(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let s = &self.state;
        write_file(&dir.join("config.toml"), &self.config.to_toml()?)?;
        write_file(&dir.join("progress.json"), &serde_json::to_string(&s.progress)?)?;
        s.policy.save(dir.join("policy.json"))?;
        match &s.model {
            Some(m) => m.save(dir.join("model.json"))?,
            None => remove_if_present(&dir.join("model.json"))?,
        }
        write_file(&dir.join("learner.json"), &serde_json::to_string(&s.learner)?)?;
        write_file(&dir.join("buffers.json"), &serde_json::to_string(&s.buffers)?)?;
        write_file(&dir.join("rng.json"), &serde_json::to_string(&s.rng)?)?;
        s.progress.log.write(dir)?;
        write_file(&dir.join("timing.csv"), &self.timings.to_csv())
    }

    pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let config = RunConfig::load(dir.join("config.toml"))?;
        let read = |name: &str| {
            let p = dir.join(name);
            std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))
        };
        let progress: Progress = serde_json::from_str(&read("progress.json")?)?;
        let policy = PolicyBundle::load(dir.join("policy.json"))?;
        let model = match config.model_learner {
            LearnerKind::None => None,
            _ => Some(EnsembleModel::load(dir.join("model.json"))?),
        };
        let learner: LearnerState = serde_json::from_str(&read("learner.json")?)?;
        let buffers: Buffers = serde_json::from_str(&read("buffers.json")?)?;
        let rng: Streams = serde_json::from_str(&read("rng.json")?)?;
        let env = make_env(&config.env)?;
        Ok(Self {
            config,
            env,
            state: State {
                progress,
                policy,
                model,
                learner,
                buffers,
                rng,
            },
            timings: Timings::default(),
        })
    }
}

fn remove_if_present(path: &Path) -> Result<()> {
    match std::fs::remove_file(path) {
        Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(Error::io(path, e)),
        _ => Ok(()),
    }
}

fn generator_for<'a>(config: &'a RunConfig, state: &'a State) -> Option<Box<dyn RolloutGenerator + 'a>> {
    let model = state.model.as_ref()?;
    if !model.is_trained() {
        return None;
    }
    Some(match config.model_learner {
        LearnerKind::None => return None,
        LearnerKind::OneStep | LearnerKind::DatasetMultistep => {
            Box::new(SampledRollouts::new(model, config.model_learner.name()))
        }
        LearnerKind::P2pRl => Box::new(SampledRollouts {
            model,
            member: Some(config.p2p_rl.actor_member),
            strategy: LearnerKind::P2pRl.name(),
        }),
        LearnerKind::P2pMpc => {
            let rm = state.learner.rm.as_ref().filter(|r| r.is_trained())?;
            Box::new(P2pMpcRollouts {
                model,
                rm,
                config: config.planner.clone(),
            })
        }
    })
}

fn epoch_step(config: &RunConfig, env: &dyn Env, st: &mut State) -> Result<EpochRecord> {
    let epoch = st.progress.epoch;
    if !config.offline {
        collect(config, env, st)?;
    }
    // the data-collecting policy is frozen before any model learning
    st.learner.data_policy = Some(st.policy.snapshot(epoch));
    let outcome = fit_model(config, env, st)?;

    let rollout_len = config.rollout_schedule.len_at(epoch, config.epochs);
    let terminal = |s: &[f64]| env.is_terminal(s);
    let mut added = 0;
    if config.rollouts_per_epoch > 0 && !st.buffers.dataset.is_empty() {
        let mut buffer = st.buffers.model_buffer.clone();
        let mut rng = st.rng.rollout.clone();
        let ran = match generator_for(config, st) {
            Some(gen) => {
                added = branched_rollout(
                    &mut buffer,
                    gen.as_ref(),
                    &st.buffers.dataset,
                    &st.policy,
                    rollout_len,
                    config.rollouts_per_epoch,
                    &terminal,
                    epoch,
                    &mut rng,
                )?;
                true
            }
            None => false,
        };
        if ran {
            st.buffers.model_buffer = buffer;
            st.rng.rollout = rng;
        }
    }

    let sac = policy_updates(config, st)?;

    let data_policy = st.learner.data_policy.as_ref().expect("snapshot taken above");
    let shift = if st.buffers.dataset.is_empty() {
        0.0
    } else {
        let states: Vec<Vec<f64>> = st
            .buffers
            .dataset
            .sample_indices(SHIFT_STATES, &mut st.rng.probe)
            .into_iter()
            .map(|i| st.buffers.dataset.get(i).s.clone())
            .collect();
        data_policy.tv_to(&st.policy, &states, SHIFT_SAMPLES, &mut st.rng.probe)
    };

    let accumulated_error = error_probe(config, env, st)?;
    let eval = evaluate_detailed(
        &st.policy,
        env,
        config.eval_episodes,
        derive_seed(st.progress.seed, tag("eval")),
    )?;
    let report = outcome.report.as_ref();
    Ok(EpochRecord {
        epoch,
        env_steps: st.progress.env_steps,
        eval_return_mean: eval.mean,
        eval_return_std: eval.std,
        eval_success_rate: eval.success_rate,
        strategy: config.model_learner.name().to_string(),
        rollout_len,
        rollouts_added: added,
        model_buffer_len: st.buffers.model_buffer.len(),
        model_holdout_nll: report.map(|r| mean(&r.holdout_nll)),
        model_state_rmse: report.map(|r| r.holdout_state_rmse),
        accumulated_error,
        policy_shift_tv: shift,
        sac_critic_loss: sac.map(|(c, _)| c),
        sac_alpha: st.policy.alpha(),
        diagnostics: outcome.diagnostics,
    })
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Steps the environment `steps_per_epoch` times, continuing the episode
/// left open by the previous epoch.
fn collect(config: &RunConfig, env: &dyn Env, st: &mut State) -> Result<()> {
    let spec = env.spec().clone();
    for _ in 0..config.steps_per_epoch {
        let cursor = match st.buffers.cursor.take() {
            Some(c) => c,
            None => Cursor {
                s: env.reset(&mut st.rng.env),
                t: 0,
            },
        };
        let a = if st.progress.env_steps < config.init_random_steps as u64 {
            spec.action_low
                .iter()
                .zip(&spec.action_high)
                .map(|(&lo, &hi)| st.rng.act.random_range(lo..hi))
                .collect()
        } else {
            spec.clip_action(&st.policy.act_sample(&cursor.s, &mut st.rng.act))
        };
        let step = env.step(&cursor.s, &a, &mut st.rng.env);
        let t = cursor.t + 1;
        st.buffers.dataset.push(Transition {
            s: cursor.s,
            a,
            r: step.reward,
            s_next: step.state.clone(),
            done: step.done,
        })?;
        st.progress.env_steps += 1;
        if !step.done && t < spec.horizon {
            st.buffers.cursor = Some(Cursor { s: step.state, t });
        }
    }
    Ok(())
}

fn fit_model(config: &RunConfig, env: &dyn Env, st: &mut State) -> Result<ModelOutcome> {
    let kind = config.model_learner;
    let Some(model) = st.model.as_mut() else {
        return Ok(ModelOutcome::default());
    };
    let data = &st.buffers.dataset;
    let rng = &mut st.rng.model;
    let ens = &config.ensemble;
    let epoch = st.progress.epoch;
    // offline runs fit the model once and afterwards only refresh what
    // depends on it or on the policy
    let first = !model.is_trained();
    let refit = !config.offline || first;
    let mut out = ModelOutcome::default();
    match kind {
        LearnerKind::None => {}
        LearnerKind::OneStep => {
            if refit {
                out.report = Some(model.train_one_step(data, ens.train_epochs, ens.holdout_frac, rng)?);
            }
        }
        LearnerKind::DatasetMultistep => {
            if refit {
                out.report = Some(dataset_multistep_update(
                    model,
                    data,
                    config.multistep_horizon,
                    ens.train_epochs,
                    rng,
                )?);
            }
        }
        LearnerKind::P2pMpc => {
            if refit {
                out.report = Some(model.train_one_step(data, ens.train_epochs, ens.holdout_frac, rng)?);
            }
            if !config.offline || epoch.is_multiple_of(config.refresh_every) {
                let est = st.learner.rm.as_mut().expect("p2p_mpc runs carry an estimator");
                let rep = train_rm_network(est, data, &*model, config.rm_epochs, rng)?;
                out.diagnostics.push(("rm_holdout_mse".into(), rep.holdout_mse_after));
                out.diagnostics.push(("rm_mean_label".into(), rep.mean_label));
            }
        }
        LearnerKind::P2pRl => {
            if first {
                out.report = Some(model.train_one_step(data, ens.train_epochs, ens.holdout_frac, rng)?);
            } else if !config.offline {
                let others: Vec<usize> = (0..model.n_members())
                    .filter(|&m| m != config.p2p_rl.actor_member)
                    .collect();
                out.report = Some(model.train_members(data, ens.train_epochs, ens.holdout_frac, &others, rng)?);
            }
            let critic = st.learner.critic.as_mut().expect("p2p_rl runs carry a critic");
            if let Some(dice) = critic.dice.as_mut() {
                let init: Vec<Vec<f64>> = (0..DICE_INIT_STATES).map(|_| env.reset(rng)).collect();
                dualdice_correction(
                    dice,
                    data,
                    model,
                    config.p2p_rl.actor_member,
                    &st.policy,
                    &init,
                    config.p2p_rl.dice_iterations,
                    rng,
                )?;
            }
            let mut sums = [0.0; 4];
            for _ in 0..config.p2p_rl_updates {
                let r = p2p_rl_update(model, critic, data, &st.policy, rng)?;
                for (s, v) in sums.iter_mut().zip([r.critic_loss, r.actor_loss, r.bc_nll, r.mean_rm]) {
                    *s += v;
                }
            }
            if config.p2p_rl_updates > 0 {
                let n = config.p2p_rl_updates as f64;
                for (name, s) in [
                    "p2p_rl_critic_loss",
                    "p2p_rl_actor_loss",
                    "p2p_rl_bc_nll",
                    "p2p_rl_mean_rm",
                ]
                .iter()
                .zip(sums)
                {
                    out.diagnostics.push((name.to_string(), s / n));
                }
            }
        }
    }
    Ok(out)
}

/// SAC updates on batches mixing real and model transitions. Returns the
/// mean critic loss and the number of updates.
fn policy_updates(config: &RunConfig, st: &mut State) -> Result<Option<(f64, usize)>> {
    let n_updates = if config.offline {
        config.offline_updates_per_epoch
    } else {
        config.sac_updates_per_step * config.steps_per_epoch
    };
    let real = &st.buffers.dataset;
    let model = st.buffers.model_buffer.transitions();
    if n_updates == 0 || real.is_empty() {
        return Ok(None);
    }
    let bs = config.sac.batch_size;
    let real_rows = if model.is_empty() {
        bs
    } else {
        ((bs as f64 * config.real_ratio).round() as usize).min(bs)
    };
    let bc = (config.offline && config.policy_bc_weight > 0.0)
        .then_some((config.policy_bc_weight, config.policy_bc_normalize));
    let mut total = 0.0;
    for _ in 0..n_updates {
        let mut rows: Vec<&Transition> = real
            .sample_indices(real_rows, &mut st.rng.sac)
            .into_iter()
            .map(|i| real.get(i))
            .collect();
        rows.extend(
            model
                .sample_indices(bs - real_rows, &mut st.rng.sac)
                .into_iter()
                .map(|i| model.get(i)),
        );
        let batch = SacBatch::from_transitions(&rows, real_rows)?;
        total += st.policy.update_with_bc(&batch, bc, &mut st.rng.sac)?.critic_loss;
    }
    Ok(Some((total / n_updates as f64, n_updates)))
}

fn error_probe(config: &RunConfig, env: &dyn Env, st: &mut State) -> Result<Option<f64>> {
    if config.error_probe_branches == 0 || st.buffers.dataset.is_empty() {
        return Ok(None);
    }
    let mut rng = st.rng.probe.clone();
    let curve = {
        let Some(gen) = generator_for(config, st) else {
            return Ok(None);
        };
        let data = &st.buffers.dataset;
        let starts: Vec<BranchStart> = data
            .sample_indices(config.error_probe_branches, &mut rng)
            .into_iter()
            .map(|i| BranchStart {
                index: i,
                s: data.get(i).s.clone(),
            })
            .collect();
        accumulated_error_curve(
            env,
            gen.as_ref(),
            &st.policy,
            &starts,
            config.error_probe_len,
            ErrorMode::Exact,
            &mut rng,
        )?
    };
    st.rng.probe = rng;
    Ok(curve.accumulated.last().copied())
}

/// Online training for the first configured seed.
pub fn train_loop(config: &RunConfig) -> Result<RunLog> {
    let seed = *config
        .seeds
        .first()
        .ok_or_else(|| Error::Config("no seeds given".into()))?;
    let mut t = Trainer::new(config.clone(), seed)?;
    t.train(None)?;
    Ok(t.log().clone())
}

/// Offline training on the dataset at `path`; the environment is only used
/// for evaluation.
pub fn offline_train(config: &RunConfig, path: impl AsRef<Path>, seed: u64) -> Result<RunLog> {
    let mut cfg = config.clone();
    cfg.offline = true;
    cfg.dataset = Some(path.as_ref().to_path_buf());
    let mut t = Trainer::new(cfg, seed)?;
    t.train(None)?;
    Ok(t.log().clone())
}
