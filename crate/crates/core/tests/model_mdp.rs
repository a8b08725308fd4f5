mod common;

use common::{linear_model, linear_system, FnModel};
use p2p_core::dynamics::DynamicsModel;
use p2p_core::env::Transition;
use p2p_core::model_mdp::{
    load_model_records, model_mdp_step, model_reward_exact, model_reward_mean, relabel_next_model_state,
    save_model_transitions, train_rm_network, ActionMode, LabelMode, ModelAction, ModelRewardFn, ModelState,
    ModelTransition, RmConfig, RmEstimator,
};
use p2p_core::rng::rng_from;
use p2p_core::sac::LinearPolicy;
use p2p_core::Error;
use proptest::prelude::*;

fn origin_transition() -> Transition {
    Transition {
        s: vec![0.0, 0.0],
        a: vec![0.0, 0.0],
        r: 0.0,
        s_next: vec![0.0, 0.0],
        done: false,
    }
}

fn small_config() -> RmConfig {
    RmConfig {
        hidden: vec![16, 16],
        batch_size: 64,
        lr: 3e-3,
        ..RmConfig::default()
    }
}

#[test]
fn three_four_five_prediction_error() {
    let model = FnModel::new(2, 2, 1, |_, _, _| (vec![3.0, 4.0, 0.0], vec![0.0; 3]));
    let t = origin_transition();
    assert_eq!(model_reward_exact(&t, &model, &mut rng_from(0)).unwrap(), -5.0);
    assert_eq!(model_reward_mean(&t, &model).unwrap(), -5.0);

    let off_reward = FnModel::new(2, 2, 1, |_, _, _| (vec![0.0, 0.0, -2.0], vec![0.0; 3]));
    assert_eq!(model_reward_mean(&t, &off_reward).unwrap(), -2.0);
}

#[test]
fn exact_model_earns_zero() {
    let data = linear_system(200, 20, 1);
    let model = linear_model(0.0);
    let mut rng = rng_from(1);
    for t in data.iter() {
        assert!(model_reward_exact(t, &model, &mut rng).unwrap().abs() < 1e-12);
    }
}

#[test]
fn reward_recomputes_from_the_same_draw() {
    let model = FnModel::new(2, 2, 3, |m, s, _| {
        (vec![0.1 * m as f64, -s[0], 0.5], vec![0.2, 0.3, 0.1])
    });
    let t = Transition {
        s: vec![0.4, -0.2],
        a: vec![1.0, 0.0],
        r: 1.0,
        s_next: vec![0.5, 0.1],
        done: false,
    };
    for seed in 0..20 {
        let rm = model_reward_exact(&t, &model, &mut rng_from(seed)).unwrap();
        let p = model.predict_sample(&t.s, &t.a, &mut rng_from(seed)).unwrap();
        let d = ((p.s_next[0] - 0.5).powi(2) + (p.s_next[1] - 0.1).powi(2)).sqrt();
        assert_eq!(rm, -(d + (p.r - 1.0).abs()));
        assert!(rm <= 0.0);
    }
}

#[test]
fn estimator_learns_zero_labels_from_exact_model() {
    let data = linear_system(400, 20, 2);
    let mut est = RmEstimator::new(2, 2, small_config(), 3).unwrap();
    let rep = train_rm_network(&mut est, &data, &linear_model(0.0), 150, &mut rng_from(3)).unwrap();
    assert!(rep.mean_label.abs() < 1e-12);
    assert!(rep.holdout_mse_after < 1e-4, "mse {}", rep.holdout_mse_after);
    assert!(est.is_trained());
    assert_eq!(est.calls, 1);
}

#[test]
fn training_reduces_holdout_error() {
    let data = linear_system(300, 20, 4);
    let model = linear_model(0.5);
    for seed in 0..20 {
        let mut est = RmEstimator::new(2, 2, small_config(), seed).unwrap();
        let rep = train_rm_network(&mut est, &data, &model, 20, &mut rng_from(seed)).unwrap();
        assert!(
            rep.holdout_mse_after < rep.holdout_mse_before,
            "seed {seed}: {} -> {}",
            rep.holdout_mse_before,
            rep.holdout_mse_after
        );
        assert!(rep.mean_label < 0.0);
        assert_eq!(rep.n_train + rep.n_holdout, 300);
    }
}

#[test]
fn mean_labels_match_sample_labels_for_deterministic_model() {
    let data = linear_system(100, 20, 5);
    let model = linear_model(0.3);
    let mut a = RmEstimator::new(2, 2, small_config(), 0).unwrap();
    let mut b = RmEstimator::new(
        2,
        2,
        RmConfig {
            label_mode: LabelMode::Mean,
            ..small_config()
        },
        0,
    )
    .unwrap();
    let ra = train_rm_network(&mut a, &data, &model, 3, &mut rng_from(0)).unwrap();
    let rb = train_rm_network(&mut b, &data, &model, 3, &mut rng_from(0)).unwrap();
    assert!((ra.mean_label - rb.mean_label).abs() < 1e-12);
}

#[test]
fn untrained_estimator_refuses_to_score() {
    let est = RmEstimator::new(2, 2, small_config(), 0).unwrap();
    assert!(matches!(
        est.model_reward(&[0.0, 0.0], &[0.0, 0.0]),
        Err(Error::Untrained(_))
    ));
    assert!(est.predict(&[0.0, 0.0], &[0.0, 0.0]).unwrap() <= 0.0);
}

#[test]
fn training_is_reproducible() {
    let data = linear_system(200, 20, 6);
    let model = FnModel::new(2, 2, 2, |m, s, a| {
        (vec![0.1 * a[0], -0.1 * s[1], m as f64], vec![0.05, 0.05, 0.05])
    });
    let run = || {
        let mut est = RmEstimator::new(2, 2, small_config(), 9).unwrap();
        train_rm_network(&mut est, &data, &model, 5, &mut rng_from(9)).unwrap();
        est
    };
    assert_eq!(run(), run());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn estimate_is_never_positive(
        s in prop::collection::vec(-1e6f64..1e6, 2),
        a in prop::collection::vec(-1e6f64..1e6, 2),
        seed in 0u64..1000,
    ) {
        let est = RmEstimator::new(2, 2, small_config(), seed).unwrap();
        let v = est.predict(&s, &a).unwrap();
        prop_assert!(v <= 0.0);
    }
}

#[test]
fn relabel_uses_policy_at_next_state() {
    let pol = LinearPolicy {
        weight: vec![vec![2.0, 0.0], vec![0.0, 2.0]],
        noise_std: 0.5,
    };
    let t = Transition {
        s: vec![9.0, 9.0],
        a: vec![9.0, 9.0],
        r: 0.0,
        s_next: vec![0.25, -1.0],
        done: false,
    };
    let sm = relabel_next_model_state(&t, &pol, ActionMode::Mean, &mut rng_from(0));
    assert_eq!(sm.s, vec![0.25, -1.0]);
    assert_eq!(sm.a, vec![0.5, -2.0]);

    let sampled = relabel_next_model_state(&t, &pol, ActionMode::Sample, &mut rng_from(0));
    assert_ne!(sampled.a, sm.a);
    assert_eq!(
        sampled,
        relabel_next_model_state(&t, &pol, ActionMode::Sample, &mut rng_from(0))
    );

    let am = ModelAction {
        s_next: vec![1.0, 2.0],
        r_pred: 0.0,
    };
    let from = ModelState {
        s: t.s.clone(),
        a: t.a.clone(),
    };
    let next = model_mdp_step(&from, &am, &pol, ActionMode::Mean, &mut rng_from(0));
    assert_eq!(
        next,
        ModelState {
            s: vec![1.0, 2.0],
            a: vec![2.0, 4.0]
        }
    );
}

fn sample_model_transition(rm: f64) -> p2p_core::Result<ModelTransition> {
    ModelTransition::new(
        ModelState {
            s: vec![0.0, 1.0],
            a: vec![0.5],
        },
        ModelAction {
            s_next: vec![0.1, 0.9],
            r_pred: -0.3,
        },
        rm,
        ModelState {
            s: vec![0.1, 0.9],
            a: vec![0.2],
        },
        false,
    )
}

#[test]
fn model_transition_invariants() {
    assert!(sample_model_transition(-0.2).is_ok());
    assert!(sample_model_transition(0.0).is_ok());
    assert!(sample_model_transition(0.1).is_err());
    assert!(sample_model_transition(f64::NAN).is_err());
    let mismatched = ModelTransition::new(
        ModelState {
            s: vec![0.0],
            a: vec![0.0],
        },
        ModelAction {
            s_next: vec![1.0],
            r_pred: 0.0,
        },
        -1.0,
        ModelState {
            s: vec![2.0],
            a: vec![0.0],
        },
        false,
    );
    assert!(mismatched.is_err());
    let t = sample_model_transition(-0.2).unwrap().to_transition();
    assert_eq!((t.s_next.clone(), t.r), (vec![0.1, 0.9], -0.3));
}

#[test]
fn exported_records_round_trip() {
    let items = vec![
        sample_model_transition(-0.2).unwrap(),
        sample_model_transition(-1.0 / 3.0).unwrap(),
    ];
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.jsonl");
    save_model_transitions(&path, &items).unwrap();
    let back = load_model_records(&path).unwrap();
    assert_eq!(back.len(), 2);
    for (m, (t, rm)) in items.iter().zip(&back) {
        assert_eq!(&m.to_transition(), t);
        assert_eq!(m.rm, *rm);
    }
}
