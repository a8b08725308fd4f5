mod common;

use common::{linear_system, FnModel};
use p2p_core::autodiff::{Activation, Tensor};
use p2p_core::dynamics::{EnsembleConfig, EnsembleModel, Normalizer};
use p2p_core::env::{DatasetBuffer, TabularMdp, Transition};
use p2p_core::learners::{
    build_rl_batch, contiguous_starts, dataset_multistep_update, dualdice_fit, multistep_gradients,
    p2p_mpc_generate_rollout, p2p_mpc_plan, p2p_rl_update, BranchStart, DiceConfig, DiceSamples, DiceState,
    LearnerKind, ModelCritic, P2pRlConfig, PlannerConfig, RolloutGenerator, SampledRollouts,
};
use p2p_core::model_mdp::{ActionMode, ModelState};
use p2p_core::rng::rng_from;
use p2p_core::sac::LinearPolicy;
use p2p_core::Error;
use proptest::prelude::*;
use rand::Rng;

fn zero_policy(state_dim: usize, action_dim: usize) -> LinearPolicy {
    LinearPolicy {
        weight: vec![vec![0.0; state_dim]; action_dim],
        noise_std: 0.0,
    }
}

fn planner(horizon: usize, candidates: usize) -> PlannerConfig {
    PlannerConfig {
        horizon,
        candidates,
        ..PlannerConfig::default()
    }
}

#[test]
fn learner_names_round_trip() {
    for k in [
        LearnerKind::None,
        LearnerKind::OneStep,
        LearnerKind::P2pMpc,
        LearnerKind::P2pRl,
        LearnerKind::DatasetMultistep,
    ] {
        assert_eq!(k.name().parse::<LearnerKind>().unwrap(), k);
    }
    assert!("dyna".parse::<LearnerKind>().is_err());
}

#[test]
fn single_step_horizon_keeps_first_candidate() {
    let model = FnModel::new(1, 1, 3, |m, _, _| (vec![m as f64, 0.0], vec![0.1, 0.0]));
    let rm = |s: &[f64], _: &[f64]| -(s[0] - 2.0).abs();
    let sm = ModelState {
        s: vec![0.0],
        a: vec![0.0],
    };
    let plan = p2p_mpc_plan(&sm, &model, &rm, &zero_policy(1, 1), &planner(1, 4), &mut rng_from(0)).unwrap();
    assert_eq!(plan.chosen, 0);
    assert_eq!(plan.candidates.len(), 7);
    assert!(plan.scores.iter().all(|&s| s == plan.scores[0]));
}

#[test]
fn two_step_horizon_picks_best_next_state() {
    let model = FnModel::new(2, 1, 3, |m, _, _| {
        (vec![[-0.3, 0.4, 0.1][m], 0.0, 0.0], vec![0.01, 0.01, 0.0])
    });
    let rm = |s: &[f64], _: &[f64]| s[0];
    let sm = ModelState {
        s: vec![0.0, 0.0],
        a: vec![0.0],
    };
    for seed in 0..20 {
        let plan = p2p_mpc_plan(
            &sm,
            &model,
            &rm,
            &zero_policy(2, 1),
            &planner(2, 5),
            &mut rng_from(seed),
        )
        .unwrap();
        let mut best = 0;
        for (i, c) in plan.candidates.iter().enumerate() {
            if c.s_next[0] > plan.candidates[best].s_next[0] {
                best = i;
            }
        }
        assert_eq!(plan.chosen, best);
        assert_eq!(plan.action, plan.candidates[best]);
    }
}

// Replays the planner's documented streams: candidate draws on substream 0,
// lookahead of candidate i on substream 1 + i.
#[test]
fn one_dimensional_plans_match_enumeration() {
    use p2p_core::rng::substream;
    let mut gen = rng_from(77);
    for inst in 0..100 {
        let deltas: Vec<f64> = (0..5).map(|_| gen.random_range(-1.0..1.0)).collect();
        let goal: f64 = gen.random_range(-2.0..2.0);
        let start: f64 = gen.random_range(-1.0..1.0);
        let d = deltas.clone();
        let model = FnModel::new(1, 1, 5, move |m, _, _| (vec![d[m], 0.0], vec![0.0, 0.0]));
        let rm = move |s: &[f64], _: &[f64]| -(s[0] - goal).abs();
        let sm = ModelState {
            s: vec![start],
            a: vec![0.0],
        };
        let mut rng = rng_from(inst);
        let plan_seed: u64 = rng.clone().random();
        let plan = p2p_mpc_plan(&sm, &model, &rm, &zero_policy(1, 1), &planner(3, 0), &mut rng).unwrap();

        let score = |x: f64| -(x - goal).abs();
        let expect: Vec<f64> = (0..5)
            .map(|i| {
                let mut look = substream(plan_seed, 1 + i as u64);
                let j = look.random_range(0..5);
                let first = start + deltas[i];
                score(start) + score(first) + score(first + deltas[j])
            })
            .collect();
        let mut best = 0;
        for i in 1..5 {
            if expect[i] > expect[best] {
                best = i;
            }
        }
        for (a, b) in plan.scores.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12, "instance {inst}");
        }
        assert_eq!(plan.chosen, best, "instance {inst}");
        assert!((plan.action.s_next[0] - (start + deltas[best])).abs() < 1e-12);
    }
}

#[test]
fn planner_rejects_bad_config() {
    let model = FnModel::new(1, 1, 1, |_, _, _| (vec![0.0, 0.0], vec![0.0, 0.0]));
    let rm = |_: &[f64], _: &[f64]| 0.0;
    let sm = ModelState {
        s: vec![0.0],
        a: vec![0.0],
    };
    let pol = zero_policy(1, 1);
    assert!(p2p_mpc_plan(&sm, &model, &rm, &pol, &planner(0, 1), &mut rng_from(0)).is_err());
    let nan = |_: &[f64], _: &[f64]| f64::NAN;
    assert!(p2p_mpc_plan(&sm, &model, &nan, &pol, &planner(2, 1), &mut rng_from(0)).is_err());
}

fn starts(n: usize) -> Vec<BranchStart> {
    (0..n)
        .map(|i| BranchStart {
            index: 10 * i,
            s: vec![0.1 * i as f64, -0.2],
        })
        .collect()
}

#[test]
fn flat_reward_planner_matches_plain_rollouts() {
    let model = FnModel::new(2, 2, 1, |_, s, a| {
        (vec![0.1 * a[0] - 0.05 * s[0], 0.2 * a[1], s[1]], vec![0.0; 3])
    });
    let pol = LinearPolicy {
        weight: vec![vec![1.0, 0.0], vec![0.5, -1.0]],
        noise_std: 0.0,
    };
    let zero = |_: &[f64], _: &[f64]| 0.0;
    let never = |_: &[f64]| false;
    let planned = p2p_mpc_generate_rollout(
        &starts(4),
        &model,
        &zero,
        &pol,
        &PlannerConfig::default(),
        7,
        &never,
        3,
        &mut rng_from(1),
    )
    .unwrap();
    let plain = SampledRollouts::new(&model, "plain")
        .generate(&starts(4), &pol, 7, &never, 3, &mut rng_from(1))
        .unwrap();
    assert_eq!(planned.strategy, "p2p_mpc");
    assert_eq!(planned.epoch, 3);
    assert_eq!(planned.transitions, plain.transitions);
    assert_eq!(planned.origins, plain.origins);
    assert_eq!(planned.len(), 28);
    assert_eq!(planned.trajectories().len(), 4);
}

#[test]
fn rollout_length_and_termination() {
    let model = FnModel::new(2, 2, 2, |m, _, _| (vec![0.1, m as f64, 0.0], vec![0.01; 3]));
    let pol = zero_policy(2, 2);
    let rm = |s: &[f64], _: &[f64]| -s[1].abs();
    let never = |_: &[f64]| false;
    let always = |_: &[f64]| true;
    let one = p2p_mpc_generate_rollout(
        &starts(5),
        &model,
        &rm,
        &pol,
        &PlannerConfig::default(),
        1,
        &never,
        0,
        &mut rng_from(2),
    )
    .unwrap();
    assert_eq!(one.len(), 5);
    assert!(one.origins.iter().all(|o| o.step == 0));
    assert_eq!(
        one.origins.iter().map(|o| o.start).collect::<Vec<_>>(),
        vec![0, 10, 20, 30, 40]
    );

    let stop = p2p_mpc_generate_rollout(
        &starts(3),
        &model,
        &rm,
        &pol,
        &PlannerConfig::default(),
        10,
        &always,
        0,
        &mut rng_from(2),
    )
    .unwrap();
    assert_eq!(stop.len(), 3);
    assert!(stop.transitions.iter().all(|t| t.done));

    assert!(p2p_mpc_generate_rollout(
        &[],
        &model,
        &rm,
        &pol,
        &PlannerConfig::default(),
        3,
        &never,
        0,
        &mut rng_from(2)
    )
    .is_err());
    assert!(p2p_mpc_generate_rollout(
        &starts(1),
        &model,
        &rm,
        &pol,
        &PlannerConfig::default(),
        0,
        &never,
        0,
        &mut rng_from(2)
    )
    .is_err());
}

#[test]
fn branches_do_not_depend_on_siblings() {
    let model = FnModel::new(2, 2, 3, |m, s, _| {
        (vec![0.1 * m as f64, -0.1 * s[0], 0.0], vec![0.05; 3])
    });
    let pol = LinearPolicy {
        weight: vec![vec![0.3, 0.0], vec![0.0, 0.3]],
        noise_std: 0.2,
    };
    let rm = |s: &[f64], _: &[f64]| -s[0].abs();
    let never = |_: &[f64]| false;
    let cfg = planner(3, 4);
    let both = p2p_mpc_generate_rollout(&starts(3), &model, &rm, &pol, &cfg, 5, &never, 0, &mut rng_from(4)).unwrap();
    let first = p2p_mpc_generate_rollout(&starts(1), &model, &rm, &pol, &cfg, 5, &never, 0, &mut rng_from(4)).unwrap();
    assert_eq!(&both.transitions[..5], &first.transitions[..]);
    let again = p2p_mpc_generate_rollout(&starts(3), &model, &rm, &pol, &cfg, 5, &never, 0, &mut rng_from(4)).unwrap();
    assert_eq!(both, again);
}

fn ensemble(
    members: usize,
    hidden: Vec<usize>,
    activation: Activation,
    seed: u64,
    data: &DatasetBuffer,
) -> EnsembleModel {
    let cfg = EnsembleConfig {
        members,
        hidden,
        activation,
        batch_size: 64,
        ..EnsembleConfig::default()
    };
    let mut m = EnsembleModel::new(2, 2, cfg, seed).unwrap();
    m.set_normalizer(Normalizer::fit(data.iter()).unwrap());
    m
}

#[test]
fn contiguous_segments_respect_episode_breaks() {
    let data = linear_system(100, 20, 1);
    assert_eq!(contiguous_starts(&data, 1).len(), 100);
    assert_eq!(contiguous_starts(&data, 5).len(), 5 * 16);
    assert!(contiguous_starts(&data, 21).is_empty());
    assert!(contiguous_starts(&data, 0).is_empty());
}

#[test]
fn unit_horizon_equals_one_step_loss() {
    let data = linear_system(200, 20, 2);
    let model = ensemble(2, vec![16, 16], Activation::Relu, 3, &data);
    let items: Vec<&Transition> = data.iter().collect();
    let idx: Vec<usize> = (0..200).step_by(3).collect();
    let (lm, gm) = multistep_gradients(&model, 1, &items, &idx, 1).unwrap();
    let batch: Vec<&Transition> = idx.iter().map(|&i| items[i]).collect();
    let (l1, g1) = model.one_step_gradients(1, &batch).unwrap();
    assert!((lm - l1).abs() < 1e-10, "{lm} vs {l1}");
    for (a, b) in gm.iter().zip(&g1) {
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).abs() < 1e-10);
        }
    }
}

#[test]
fn unrolled_gradient_matches_finite_differences() {
    let data = linear_system(60, 20, 3);
    let model = ensemble(1, vec![8], Activation::Tanh, 4, &data);
    let items: Vec<&Transition> = data.iter().collect();
    let idx: Vec<usize> = contiguous_starts(&data, 3).into_iter().step_by(4).collect();
    let (_, grads) = multistep_gradients(&model, 0, &items, &idx, 3).unwrap();
    let mut params: Vec<Tensor> = model.members()[0].params().into_iter().cloned().collect();
    let worst = common::fd_max_rel_err(&mut params, &grads, 1e-6, |p| {
        let mut m = model.clone();
        m.member_mut(0).set_params(p).unwrap();
        multistep_gradients(&m, 0, &items, &idx, 3).unwrap().0
    });
    assert!(worst < 1e-5, "worst relative error {worst}");
}

#[test]
fn multistep_training_needs_segments_and_improves() {
    let data = linear_system(400, 20, 5);
    let mut model = ensemble(3, vec![16, 16], Activation::Relu, 6, &data);
    assert!(matches!(
        dataset_multistep_update(&mut model, &data, 25, 1, &mut rng_from(0)),
        Err(Error::Dataset(_))
    ));
    let rep = dataset_multistep_update(&mut model, &data, 4, 20, &mut rng_from(0)).unwrap();
    let after = rep.holdout_nll.iter().sum::<f64>() / 3.0;
    assert!(
        after < rep.initial_holdout_nll,
        "{after} vs {}",
        rep.initial_holdout_nll
    );
    assert_eq!(rep.elites.len(), 2);
}

#[test]
fn tabular_ratios_are_recovered() {
    for inst in 0..3 {
        let err = common::dice_ratio_error(5, inst, 5000);
        assert!(err < 0.2, "instance {inst}: worst relative error {err}");
    }
}

#[test]
fn on_policy_data_gives_unit_ratios() {
    let (ns, na) = (3, 2);
    let k = ns * na;
    let mut rng = rng_from(9);
    let mdp = TabularMdp::random(ns, na, 9).unwrap().with_gamma(0.8).unwrap();
    let pi = common::random_policy(ns, na, &mut rng);
    let d = common::occupancy(&mdp, &pi);
    let samples = common::stratified_dice_samples(&mdp, &pi, &d, 2000);
    let mut dice = DiceState::new(k, common::tabular_dice_config(0.8, 2000), 9).unwrap();
    let rep = dualdice_fit(&mut dice, &samples, 5000, &mut rng).unwrap();
    let present: Vec<Vec<f64>> = (0..k).filter(|&i| d[i] > 0.02).map(|i| common::one_hot(k, i)).collect();
    for w in dice.ratio(&present).unwrap() {
        assert!((w - 1.0).abs() < 0.1, "ratio {w}");
    }
    assert!((rep.mean_weight - 1.0).abs() < 0.1);
}

#[test]
fn exploding_objective_is_reported() {
    let samples = DiceSamples {
        x: vec![vec![0.0], vec![1.0]],
        x_next: vec![vec![1.0], vec![0.0]],
        x_init: vec![vec![0.0]],
    };
    let cfg = DiceConfig {
        divergence: 1e-12,
        ..common::tabular_dice_config(0.9, 2)
    };
    let mut dice = DiceState::new(1, cfg, 0).unwrap();
    assert!(matches!(
        dualdice_fit(&mut dice, &samples, 5, &mut rng_from(0)),
        Err(Error::Divergence(_))
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn weights_respect_clip_range(seed in 0u64..1000, lo in 0.05f64..0.9, span in 1.1f64..20.0) {
        let mut rng = rng_from(seed);
        let mut row = || (0..3).map(|_| rng.random_range(-5.0..5.0)).collect::<Vec<f64>>();
        let x: Vec<Vec<f64>> = (0..40).map(|_| row()).collect();
        let x_next: Vec<Vec<f64>> = (0..40).map(|_| row()).collect();
        let x_init: Vec<Vec<f64>> = (0..10).map(|_| row()).collect();
        let cfg = DiceConfig { hidden: vec![8], w_min: lo, w_max: lo * span, batch_size: 16, nu_lr: 0.05, zeta_lr: 0.05, ..DiceConfig::default() };
        let mut dice = DiceState::new(3, cfg, seed).unwrap();
        let rep = dualdice_fit(&mut dice, &DiceSamples { x, x_next, x_init }, 30, &mut rng_from(seed)).unwrap();
        prop_assert_eq!(dice.weights.len(), 40);
        for &w in &dice.weights {
            prop_assert!(w >= lo && w <= lo * span);
        }
        prop_assert!((0.0..=1.0).contains(&rep.clipped_fraction));
        let far = dice.ratio(&[vec![1e6, -1e6, 1e6], vec![-1e9, 0.0, 3.0]]).unwrap();
        for w in far {
            prop_assert!(w >= lo && w <= lo * span);
        }
    }
}

fn rl_config(gamma: f64, bc_weight: f64, normalize_q: bool) -> P2pRlConfig {
    P2pRlConfig {
        hidden: vec![16, 16],
        gamma,
        bc_weight,
        normalize_q,
        batch_size: 32,
        ..P2pRlConfig::default()
    }
}

#[test]
fn myopic_targets_are_model_rewards() {
    let data = linear_system(100, 20, 7);
    let model = ensemble(2, vec![16], Activation::Relu, 7, &data);
    let critic = ModelCritic::new(2, 2, rl_config(0.0, 0.4, true), 7).unwrap();
    let ts: Vec<&Transition> = data.iter().take(32).collect();
    let pol = zero_policy(2, 2);
    let batch = build_rl_batch(&model, &ts, None, &pol, ActionMode::Mean, &mut rng_from(7)).unwrap();
    assert!(batch.rm.values().iter().all(|&r| r <= 0.0));
    let y = critic.critic_targets(&model, &batch, &mut rng_from(8)).unwrap();
    assert_eq!(y.values(), batch.rm.values());
    assert!(build_rl_batch(&model, &ts, Some(&[1.0; 3]), &pol, ActionMode::Mean, &mut rng_from(7)).is_err());
}

#[test]
fn dominant_imitation_reduces_to_one_step_gradient() {
    let data = linear_system(100, 20, 8);
    let model = ensemble(2, vec![16], Activation::Relu, 8, &data);
    let bc = 1e7;
    let critic = ModelCritic::new(2, 2, rl_config(0.99, bc, false), 8).unwrap();
    let ts: Vec<&Transition> = data.iter().take(32).collect();
    let batch = build_rl_batch(
        &model,
        &ts,
        None,
        &zero_policy(2, 2),
        ActionMode::Mean,
        &mut rng_from(8),
    )
    .unwrap();
    let eps = Tensor::matrix(32, 2, vec![0.3; 64]).unwrap();
    let (_, grads, nll) = critic.actor_loss(&model, &batch, &eps).unwrap();
    let (l1, g1) = model.one_step_gradients(0, &ts).unwrap();
    assert!((nll - l1).abs() < 1e-10);
    let mut worst: f64 = 0.0;
    for (a, b) in grads.iter().zip(&g1) {
        for (x, y) in a.values().iter().zip(b.values()) {
            worst = worst.max((x / bc - y).abs() / y.abs().max(1e-3));
        }
    }
    assert!(worst < 1e-4, "worst {worst}");
}

#[test]
fn updates_touch_only_the_actor_member_and_replay() {
    let data = linear_system(200, 20, 9);
    let pol = LinearPolicy {
        weight: vec![vec![0.5, 0.0], vec![0.0, -0.5]],
        noise_std: 0.1,
    };
    let run = || {
        let mut model = ensemble(3, vec![16], Activation::Relu, 9, &data);
        let mut critic = ModelCritic::new(2, 2, rl_config(0.9, 0.4, true), 9).unwrap();
        let mut rng = rng_from(10);
        let mut reports = Vec::new();
        for _ in 0..5 {
            reports.push(p2p_rl_update(&mut model, &mut critic, &data, &pol, &mut rng).unwrap());
        }
        (model, critic, reports)
    };
    let (m1, c1, r1) = run();
    let (m2, c2, r2) = run();
    assert_eq!(m1, m2);
    assert_eq!(c1, c2);
    assert_eq!(r1, r2);
    assert_eq!(c1.updates, 5);
    let fresh = ensemble(3, vec![16], Activation::Relu, 9, &data);
    assert_ne!(m1.members()[0], fresh.members()[0]);
    assert_eq!(m1.members()[1], fresh.members()[1]);
    assert_eq!(m1.members()[2], fresh.members()[2]);
    assert!(r1.iter().all(|r| r.mean_rm <= 0.0 && r.mean_weight == 1.0));
}

#[test]
fn out_of_range_actor_member_is_a_config_error() {
    let data = linear_system(50, 10, 1);
    let mut model = ensemble(2, vec![8], Activation::Relu, 1, &data);
    let cfg = P2pRlConfig {
        actor_member: 5,
        ..rl_config(0.9, 0.4, true)
    };
    let mut critic = ModelCritic::new(2, 2, cfg, 1).unwrap();
    assert!(matches!(
        p2p_rl_update(&mut model, &mut critic, &data, &zero_policy(2, 2), &mut rng_from(0)),
        Err(Error::Config(_))
    ));
}
