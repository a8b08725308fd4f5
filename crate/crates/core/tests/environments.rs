use p2p_core::env::{
    collect_offline_dataset, run_episode, Cell, Controller, Env, MazeController, PointMaze, PointReach, TabularMdp,
};
use p2p_core::rng::{rng_from, SimRng};
use rand::Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

struct RandomActions;

impl Controller for RandomActions {
    fn act(&self, _s: &[f64], rng: &mut SimRng) -> Vec<f64> {
        vec![rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5)]
    }
}

#[test]
fn maze_positions_never_enter_walls() {
    let maze = PointMaze::default_maze();
    let mut rng = rng_from(11);
    let mut s = maze.reset(&mut rng);
    for i in 0..100_000 {
        let a = RandomActions.act(&s, &mut rng);
        let st = maze.step(&s, &a, &mut rng);
        let (x, y) = (st.state[0], st.state[1]);
        assert!(
            (0.0..=1.0).contains(&x) && (0.0..=1.0).contains(&y),
            "step {i}: {x},{y}"
        );
        assert_ne!(maze.cell_kind(x, y), Cell::Wall, "step {i}: {x},{y}");
        assert!(st.state[2].abs() <= 0.5 && st.state[3].abs() <= 0.5);
        s = if st.done || i % 150 == 0 {
            maze.reset(&mut rng)
        } else {
            st.state
        };
    }
}

#[test]
fn episodes_respect_horizon() {
    let maze = PointMaze::default_maze().with_horizon(37);
    let reach = PointReach::default();
    let (mut e, mut p) = (rng_from(1), rng_from(2));
    for _ in 0..50 {
        assert!(run_episode(&maze, &RandomActions, &mut e, &mut p).len() <= 37);
        let ep = run_episode(&reach, &RandomActions, &mut e, &mut p);
        assert!(ep.len() <= 50);
        // only the last transition may be terminal
        assert!(ep[..ep.len() - 1].iter().all(|t| !t.done));
    }
}

#[test]
fn behavior_controller_reaches_goal_without_noise() {
    let maze = PointMaze::default_maze();
    let ctl = MazeController::new(&maze, 0.0);
    let (mut e, mut p) = (rng_from(5), rng_from(6));
    for _ in 0..20 {
        let ep = run_episode(&maze, &ctl, &mut e, &mut p);
        assert!(ep.last().unwrap().done, "episode of {} steps did not finish", ep.len());
    }
}

#[test]
fn tabular_sampling_matches_rows() {
    let mdp = TabularMdp::random(4, 2, 3).unwrap();
    let mut rng = rng_from(99);
    let n = 100_000;
    let crit = ChiSquared::new(3.0).unwrap().inverse_cdf(0.999);
    for s in 0..4 {
        for a in 0..2 {
            let mut counts = [0usize; 4];
            for _ in 0..n {
                counts[mdp.step(s, a, &mut rng).0] += 1;
            }
            let chi2: f64 = counts
                .iter()
                .zip(mdp.p_row(s, a))
                .map(|(&c, &p)| {
                    let e = p * n as f64;
                    (c as f64 - e).powi(2) / e
                })
                .sum();
            assert!(chi2 < crit, "row ({s},{a}): chi2 {chi2} >= {crit}");
        }
    }
}

fn region_count(maze: &PointMaze, ds: &p2p_core::env::DatasetBuffer) -> usize {
    ds.iter().filter(|t| maze.in_uncertain_region(&t.s)).count()
}

#[test]
fn decimation_boundaries() {
    let maze = PointMaze::default_maze();
    let ctl = MazeController::new(&maze, 0.3);
    let full = collect_offline_dataset(&maze, &ctl, 40, 0.0, 8).unwrap();
    let none = collect_offline_dataset(&maze, &ctl, 40, 1.0, 8).unwrap();
    assert!(region_count(&maze, &full) > 0);
    assert_eq!(region_count(&maze, &none), 0);
    // outside the region both datasets are the same episodes
    assert_eq!(full.len() - region_count(&maze, &full), none.len());
    assert!(collect_offline_dataset(&maze, &ctl, 0, 0.0, 8).is_err());
    assert!(collect_offline_dataset(&maze, &ctl, 1, 1.5, 8).is_err());
}

#[test]
fn decimation_is_binomial() {
    let maze = PointMaze::default_maze();
    let ctl = MazeController::new(&maze, 0.3);
    let mut episodes = 200;
    let (full, n_region) = loop {
        let full = collect_offline_dataset(&maze, &ctl, episodes, 0.0, 21).unwrap();
        let n = region_count(&maze, &full);
        if n >= 10_000 {
            break (full, n);
        }
        episodes = episodes * 10_000 / n.max(1) + 50;
    };
    let kept = collect_offline_dataset(&maze, &ctl, episodes, 0.9, 21).unwrap();
    let k = region_count(&maze, &kept) as f64;
    let mean = 0.1 * n_region as f64;
    let sd = (n_region as f64 * 0.1 * 0.9).sqrt();
    assert!((k - mean).abs() < 3.0 * sd, "kept {k}, expected {mean} +- {}", 3.0 * sd);
    assert_eq!(full.len() - n_region, kept.len() - k as usize);
}

#[test]
fn layout_file_loads() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("maze.txt");
    std::fs::write(&path, "S..G\n.#U.\n").unwrap();
    let m = PointMaze::from_file(&path).unwrap();
    assert_eq!((m.width(), m.height()), (4, 2));
    assert_eq!(m.cell(1, 2), Cell::Uncertain);
    assert!(PointMaze::from_file(dir.path().join("missing.txt")).is_err());
}
