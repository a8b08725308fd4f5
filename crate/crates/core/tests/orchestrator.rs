use p2p_core::dynamics::EnvOracle;
use p2p_core::env::{
    collect_offline_dataset, DatasetBuffer, Env, EnvSpec, MazeController, PointMaze, Step, Transition,
};
use p2p_core::learners::{LearnerKind, SampledRollouts};
use p2p_core::orchestrator::{
    branched_rollout, evaluate_detailed, evaluate_policy, horizon_ablation, AblationRow, ModelBuffer, RolloutSchedule,
    RunConfig, RunLog, Trainer,
};
use p2p_core::rng::rng_from;
use p2p_core::sac::LinearPolicy;
use proptest::prelude::*;

/// Reward 1 every step, never terminal.
struct Constant {
    spec: EnvSpec,
}

impl Constant {
    fn new() -> Self {
        Self {
            spec: EnvSpec {
                name: "constant".into(),
                state_dim: 1,
                action_dim: 1,
                action_low: vec![-1.0],
                action_high: vec![1.0],
                horizon: 10,
                gamma: 0.9,
                r_max: 1.0,
            },
        }
    }
}

impl Env for Constant {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&self, _rng: &mut p2p_core::rng::SimRng) -> Vec<f64> {
        vec![0.0]
    }

    fn step(&self, state: &[f64], _action: &[f64], _rng: &mut p2p_core::rng::SimRng) -> Step {
        Step {
            state: vec![state[0] + 1.0],
            reward: 1.0,
            done: false,
        }
    }

    fn is_terminal(&self, _state: &[f64]) -> bool {
        false
    }
}

fn zero_policy(state_dim: usize, action_dim: usize) -> LinearPolicy {
    LinearPolicy {
        weight: vec![vec![0.0; state_dim]; action_dim],
        noise_std: 0.0,
    }
}

fn tiny(learner: LearnerKind) -> RunConfig {
    let mut c = RunConfig::default();
    c.model_learner = learner;
    c.epochs = 2;
    c.steps_per_epoch = 60;
    c.init_random_steps = 60;
    c.rollouts_per_epoch = 8;
    c.rollout_schedule = RolloutSchedule::fixed(2);
    c.eval_episodes = 2;
    c.rm_epochs = 2;
    c.p2p_rl_updates = 3;
    c.sac.hidden = vec![16];
    c.sac.batch_size = 32;
    c.ensemble.members = 3;
    c.ensemble.hidden = vec![16];
    c.ensemble.train_epochs = 2;
    c.ensemble.batch_size = 32;
    c.rm.hidden = vec![16];
    c.planner.horizon = 2;
    c.planner.candidates = 2;
    c.p2p_rl.hidden = vec![16];
    c.p2p_rl.batch_size = 16;
    c
}

fn maze_data(seed: u64) -> DatasetBuffer {
    let maze = PointMaze::default_maze();
    collect_offline_dataset(&maze, &MazeController::new(&maze, 0.3), 4, 0.9, seed).unwrap()
}

#[test]
fn constant_env_evaluation() {
    let env = Constant::new();
    let pol = zero_policy(1, 1);
    assert_eq!(evaluate_policy(&pol, &env, 5, 0).unwrap(), (10.0, 0.0));
    let one = evaluate_detailed(&pol, &env, 1, 3).unwrap();
    assert_eq!((one.mean, one.std, one.episodes), (10.0, 0.0, 1));
    assert!(evaluate_policy(&pol, &env, 0, 0).is_err());
}

#[test]
fn evaluation_is_repeatable() {
    let maze = PointMaze::default_maze();
    let pol = LinearPolicy {
        weight: vec![vec![0.5, 0.0, 0.0, 0.0], vec![0.0, 0.5, 0.0, 0.0]],
        noise_std: 0.0,
    };
    let a = evaluate_detailed(&pol, &maze, 4, 11).unwrap();
    let b = evaluate_detailed(&pol, &maze, 4, 11).unwrap();
    assert_eq!(a, b);
    assert!((0.0..=1.0).contains(&a.success_rate));
}

#[test]
fn branched_rollout_counts() {
    let maze = PointMaze::default_maze();
    let oracle = EnvOracle::new(&maze).unwrap();
    let gen = SampledRollouts::new(&oracle, "oracle");
    let data = maze_data(1);
    let pol = zero_policy(4, 2);
    // the maze goal is never reached by standing still from these starts
    let terminal = |_: &[f64]| false;
    let mut buf = ModelBuffer::new(1000);
    let mut rng = rng_from(0);
    let n = branched_rollout(&mut buf, &gen, &data, &pol, 1, 100, &terminal, 0, &mut rng).unwrap();
    assert_eq!(n, 100);
    assert_eq!(buf.len(), 100);
    for t in buf.transitions().iter() {
        assert!(data.iter().any(|d| d.s == t.s));
    }
    assert_eq!(
        branched_rollout(&mut buf, &gen, &data, &pol, 3, 0, &terminal, 1, &mut rng).unwrap(),
        0
    );
    assert_eq!(buf.len(), 100);
    let empty = DatasetBuffer::new(10);
    assert!(branched_rollout(&mut buf, &gen, &empty, &pol, 1, 5, &terminal, 1, &mut rng).is_err());
}

#[test]
fn model_buffer_rejects_older_epochs() {
    let t = Transition {
        s: vec![0.0],
        a: vec![0.0],
        r: 0.0,
        s_next: vec![0.0],
        done: false,
    };
    let mut buf = ModelBuffer::new(3);
    buf.push(t.clone(), 0).unwrap();
    buf.push(t.clone(), 2).unwrap();
    assert!(buf.push(t.clone(), 1).is_err());
    buf.push(t.clone(), 2).unwrap();
    buf.push(t, 3).unwrap();
    assert_eq!(buf.len(), 3);
    assert_eq!(buf.epochs().collect::<Vec<_>>(), vec![2, 2, 3]);
    assert_eq!(buf.newest_epoch(), Some(3));
}

#[test]
fn zero_epochs_give_an_empty_log() {
    let mut cfg = tiny(LearnerKind::OneStep);
    cfg.epochs = 0;
    let mut t = Trainer::new(cfg, 0).unwrap();
    assert!(t.train(None).unwrap().is_empty());
    assert!(t.is_finished());
    assert!(t.run_epoch().is_err());
}

#[test]
fn online_epoch_bookkeeping() {
    let mut t = Trainer::new(tiny(LearnerKind::OneStep), 4).unwrap();
    t.train(None).unwrap();
    let log = t.log().records();
    assert_eq!(log.len(), 2);
    assert_eq!(log[0].env_steps, 60);
    assert_eq!(log[1].env_steps, 120);
    assert_eq!(t.dataset().len(), 120);
    assert_eq!(t.data_policy().unwrap().snapshot_epoch, Some(1));
    assert!(t.model_buffer().epochs().all(|e| e < 2));
    assert!(log
        .iter()
        .all(|r| r.rollouts_added > 0 && (0.0..=1.0).contains(&r.policy_shift_tv)));
    assert_eq!(t.timings().epoch_seconds.len(), 2);
}

#[test]
fn every_learner_runs_online() {
    for kind in [
        LearnerKind::None,
        LearnerKind::DatasetMultistep,
        LearnerKind::P2pMpc,
        LearnerKind::P2pRl,
    ] {
        let mut cfg = tiny(kind);
        cfg.epochs = 1;
        let mut t = Trainer::new(cfg, 0).unwrap();
        let rec = t.run_epoch().unwrap().clone();
        assert_eq!(rec.strategy, kind.name());
        assert_eq!(rec.rollouts_added > 0, kind != LearnerKind::None, "{kind:?}");
    }
}

#[test]
fn same_seed_same_log() {
    let run = |seed| {
        let mut t = Trainer::new(tiny(LearnerKind::P2pMpc), seed).unwrap();
        t.train(None).unwrap().clone()
    };
    let a = run(7);
    assert_eq!(a, run(7));
    assert_ne!(a, run(8));
}

#[test]
fn resume_matches_uninterrupted_run() {
    let mut cfg = tiny(LearnerKind::P2pMpc);
    cfg.epochs = 3;
    cfg.error_probe_branches = 4;
    cfg.error_probe_len = 3;
    let mut full = Trainer::new(cfg.clone(), 5).unwrap();
    full.train(None).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let mut first = Trainer::new(cfg, 5).unwrap();
    first.run_epoch().unwrap();
    first.save_checkpoint(dir.path()).unwrap();
    drop(first);
    let mut resumed = Trainer::load_checkpoint(dir.path()).unwrap();
    assert_eq!(resumed.epoch(), 1);
    resumed.train(Some(dir.path())).unwrap();
    assert_eq!(resumed.log(), full.log());
    assert_eq!(resumed.policy(), full.policy());

    let on_disk = RunLog::from_jsonl(&std::fs::read_to_string(dir.path().join("log.jsonl")).unwrap()).unwrap();
    assert_eq!(&on_disk, full.log());
    let csv = std::fs::read_to_string(dir.path().join("log.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn offline_runs_never_step_the_env() {
    let mut cfg = tiny(LearnerKind::OneStep);
    cfg.env = "point_maze".into();
    cfg.offline_updates_per_epoch = 5;
    cfg.policy_bc_weight = 1.0;
    let data = maze_data(2);
    let n = data.len();
    let mut t = Trainer::with_dataset(cfg.clone(), 0, data).unwrap();
    t.train(None).unwrap();
    assert!(t.log().records().iter().all(|r| r.env_steps == 0));
    assert_eq!(t.dataset().len(), n);

    assert!(Trainer::with_dataset(cfg.clone(), 0, DatasetBuffer::new(4)).is_err());
    let mut wrong = cfg;
    wrong.env = "point_reach".into();
    assert!(Trainer::with_dataset(wrong, 0, maze_data(2)).is_err());
}

#[test]
fn offline_dataset_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data.jsonl");
    maze_data(3).save_jsonl(&path).unwrap();
    let mut cfg = tiny(LearnerKind::OneStep);
    cfg.env = "point_maze".into();
    cfg.epochs = 1;
    cfg.offline_updates_per_epoch = 2;
    let log = p2p_core::orchestrator::offline_train(&cfg, &path, 0).unwrap();
    assert_eq!(log.len(), 1);
    assert!(p2p_core::orchestrator::offline_train(&cfg, dir.path().join("missing.jsonl"), 0).is_err());
}

#[test]
fn config_toml_round_trip() {
    let mut cfg = tiny(LearnerKind::P2pRl);
    cfg.seeds = vec![1, 2];
    cfg.rollout_schedule.ramp_epochs = Some(3);
    let text = cfg.to_toml().unwrap();
    assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
    assert!(RunConfig::from_toml("epochs = 3\nepochz = 4\n").is_err());
    assert!(RunConfig::from_toml("real_ratio = 1.5\n").is_err());
    assert!(RunConfig::from_toml("env = \"nowhere\"\n").is_err());
    assert!(RunConfig::from_toml("offline = true\n").is_err());
    let partial = RunConfig::from_toml("epochs = 3\n[sac]\nbatch_size = 8\n").unwrap();
    assert_eq!((partial.epochs, partial.sac.batch_size), (3, 8));
}

#[test]
fn schedule_reference_values() {
    let s = RolloutSchedule {
        start: 1,
        end: 5,
        ramp_epochs: Some(4),
    };
    let lens: Vec<usize> = (0..6).map(|e| s.len_at(e, 10)).collect();
    assert_eq!(lens, vec![1, 2, 3, 4, 5, 5]);
    assert_eq!(RolloutSchedule::fixed(3).len_at(0, 10), 3);
    // default ramp covers 40% of the run
    assert_eq!(RolloutSchedule::default().len_at(4, 10), 5);
    assert_eq!(RolloutSchedule::default().len_at(2, 10), 3);
}

proptest! {
    #[test]
    fn schedule_stays_between_endpoints(start in 1usize..10, end in 1usize..10, ramp in 0usize..8, epoch in 0usize..20) {
        let s = RolloutSchedule { start, end, ramp_epochs: Some(ramp) };
        let len = s.len_at(epoch, 20);
        prop_assert!(len >= start.min(end) && len <= start.max(end));
        prop_assert!(len <= s.max_len());
    }
}

#[test]
fn ablation_csv_has_one_row_per_run() {
    let mut cfg = tiny(LearnerKind::OneStep);
    cfg.env = "point_maze".into();
    cfg.epochs = 1;
    cfg.offline_updates_per_epoch = 2;
    cfg.error_probe_len = 3;
    cfg.seeds = vec![0, 1];
    let data = maze_data(4);
    let rows = horizon_ablation(&cfg, Some(&data), &[2, 3]).unwrap();
    assert_eq!(rows.len(), 4);
    assert_eq!(rows.iter().map(|r| r.horizon).collect::<Vec<_>>(), vec![2, 2, 3, 3]);
    assert!(rows
        .iter()
        .all(|r| r.accumulated_error.is_finite() && r.accumulated_error >= 0.0));
    let csv = AblationRow::to_csv(&rows);
    assert_eq!(csv.lines().count(), 5);
    assert!(csv.starts_with("horizon,seed,"));
}

#[test]
fn shipped_configs_parse() {
    let reach = RunConfig::from_toml(include_str!("../../../configs/point_reach.toml")).unwrap();
    assert_eq!(reach.model_learner, LearnerKind::OneStep);
    let maze = RunConfig::from_toml(include_str!("../../../configs/maze_offline.toml")).unwrap();
    assert_eq!(maze.model_learner, LearnerKind::P2pMpc);
    assert_eq!(maze.rollout_schedule.len_at(0, maze.epochs), 5);
}
