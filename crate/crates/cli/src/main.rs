use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use p2p_core::analysis::{
    accumulated_error_curve, compute_bound_terms, export_rollout_trajectories, random_bound_instance,
    uncertain_fraction, ErrorMode,
};
use p2p_core::env::{collect_offline_dataset, DatasetBuffer, MazeController, PointMaze};
use p2p_core::error::{Error, Result};
use p2p_core::learners::BranchStart;
use p2p_core::orchestrator::{horizon_ablation, AblationRow, RunConfig, Trainer};
use p2p_core::rng::{derive_seed, named_stream};

#[derive(Parser)]
#[command(name = "p2p", about = "Model-based RL with a planning dynamics model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Online training, one run per seed in the config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Checkpoint directory; each seed gets `seed_<n>` below it.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run only this seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Continue from existing checkpoints in `out`.
        #[arg(long)]
        resume: bool,
    },
    /// Training on a fixed dataset; the environment is used for evaluation only.
    OfflineTrain {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluates the policy of a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Accumulated model error against the true simulator, as CSV.
    AnalyzeError {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 100)]
        branches: usize,
        #[arg(long, default_value_t = 10)]
        len: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Checks the return-gap bound on random tabular instances.
    VerifyBound {
        #[arg(long, default_value_t = 200)]
        instances: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Most frequent model rollouts from one maze state, as JSON lines.
    ExportTraj {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Comma-separated start state.
        #[arg(long, value_delimiter = ',', default_value = "0.6,0.25,0,0")]
        start: Vec<f64>,
        #[arg(long, default_value_t = 100)]
        rollouts: usize,
        #[arg(long, default_value_t = 15)]
        len: usize,
        #[arg(long, default_value_t = 4)]
        top: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Collects a decimated maze dataset with the scripted controller.
    MakeDataset {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 60)]
        episodes: usize,
        #[arg(long, default_value_t = 0.3)]
        noise: f64,
        #[arg(long, default_value_t = 0.9)]
        decimation: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Maze layout file; the built-in maze otherwise.
        #[arg(long)]
        layout: Option<PathBuf>,
    },
    /// Planner runs over several lookahead horizons, as CSV.
    AblateHorizon {
        #[arg(long)]
        config: PathBuf,
        /// Offline dataset; online training otherwise.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "2,4,6,10")]
        horizons: Vec<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::io(p, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn seeds(config: &RunConfig, only: Option<u64>) -> Vec<u64> {
    only.map_or_else(|| config.seeds.clone(), |s| vec![s])
}

fn train_all(config: RunConfig, seeds: &[u64], out: Option<&Path>, resume: bool) -> Result<()> {
    for &seed in seeds {
        let dir = out.map(|d| d.join(format!("seed_{seed}")));
        let mut t = match &dir {
            Some(d) if resume && d.join("progress.json").exists() => Trainer::load_checkpoint(d)?,
            _ => Trainer::new(config.clone(), seed)?,
        };
        while !t.is_finished() {
            let r = t.run_epoch()?;
            eprintln!(
                "seed {seed} epoch {} steps {} return {:.3} +- {:.3} success {:.2}",
                r.epoch, r.env_steps, r.eval_return_mean, r.eval_return_std, r.eval_success_rate
            );
            if let Some(d) = &dir {
                t.save_checkpoint(d)?;
            }
        }
        if let Some(last) = t.log().last() {
            println!(
                "seed {seed}: final return {:.4} success {:.2}",
                last.eval_return_mean, last.eval_success_rate
            );
        }
    }
    Ok(())
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Train {
            config,
            out,
            seed,
            resume,
        } => {
            let cfg = RunConfig::load(&config)?;
            let s = seeds(&cfg, seed);
            train_all(cfg, &s, out.as_deref(), resume)
        }
        Command::OfflineTrain {
            config,
            dataset,
            out,
            seed,
        } => {
            let mut cfg = RunConfig::load(&config)?;
            cfg.offline = true;
            cfg.dataset = Some(dataset);
            let s = seeds(&cfg, seed);
            train_all(cfg, &s, out.as_deref(), false)
        }
        Command::Eval { checkpoint, episodes } => {
            let t = Trainer::load_checkpoint(&checkpoint)?;
            let n = episodes.unwrap_or(t.config().eval_episodes);
            let e = p2p_core::orchestrator::evaluate_detailed(t.policy(), t.env(), n, t.eval_seed())?;
            println!(
                "return {:.4} +- {:.4} success {:.2} over {} episodes",
                e.mean, e.std, e.success_rate, e.episodes
            );
            Ok(())
        }
        Command::AnalyzeError {
            checkpoint,
            branches,
            len,
            seed,
            out,
        } => {
            let t = Trainer::load_checkpoint(&checkpoint)?;
            let gen = t
                .generator()
                .ok_or(Error::Untrained("checkpoint has no rollout model"))?;
            let mut rng = named_stream(seed, "cli/analyze");
            let data = t.dataset();
            if data.is_empty() {
                return Err(Error::Dataset("checkpoint has no real transitions".into()));
            }
            let starts: Vec<BranchStart> = data
                .sample_indices(branches, &mut rng)
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
                len,
                ErrorMode::Exact,
                &mut rng,
            )?;
            emit(out.as_deref(), &curve.to_csv())
        }
        Command::VerifyBound { instances, seed, out } => {
            let mut csv = String::from("instance,states,actions,gamma,mix,gap,bound,slack,holds\n");
            let mut held = 0;
            let mut worst = f64::INFINITY;
            for i in 0..instances {
                let b = random_bound_instance(derive_seed(seed, i))?;
                let r = compute_bound_terms(&b.mdp, &b.hat_p, &b.pi, &b.pi_d, None)?;
                held += usize::from(r.holds);
                worst = worst.min(r.slack);
                csv.push_str(&format!(
                    "{i},{},{},{},{},{},{},{},{}\n",
                    b.mdp.n_states, b.mdp.n_actions, r.gamma, b.mix, r.gap, r.c, r.slack, r.holds
                ));
            }
            if let Some(p) = &out {
                emit(Some(p), &csv)?;
            }
            println!("bound holds on {held}/{instances} instances, smallest slack {worst:.6}");
            if held as u64 == instances {
                Ok(())
            } else {
                Err(Error::Divergence(format!(
                    "bound violated on {} instances",
                    instances - held as u64
                )))
            }
        }
        Command::ExportTraj {
            checkpoint,
            start,
            rollouts,
            len,
            top,
            seed,
            out,
        } => {
            let t = Trainer::load_checkpoint(&checkpoint)?;
            if t.config().env != "point_maze" {
                return Err(Error::Config("trajectory export needs a point_maze checkpoint".into()));
            }
            let maze = PointMaze::default_maze();
            let gen = t
                .generator()
                .ok_or(Error::Untrained("checkpoint has no rollout model"))?;
            let mut rng = named_stream(seed, "cli/export");
            let dump =
                export_rollout_trajectories(gen.as_ref(), t.policy(), &maze, &start, rollouts, len, top, &mut rng)?;
            eprintln!("uncertain-region fraction {:.3}", uncertain_fraction(&dump));
            emit(out.as_deref(), &dump.to_jsonl()?)
        }
        Command::MakeDataset {
            out,
            episodes,
            noise,
            decimation,
            seed,
            layout,
        } => {
            let maze = match layout {
                Some(p) => PointMaze::from_file(p)?,
                None => PointMaze::default_maze(),
            };
            let data: DatasetBuffer =
                collect_offline_dataset(&maze, &MazeController::new(&maze, noise), episodes, decimation, seed)?;
            data.save_jsonl(&out)?;
            let uncertain = data.iter().filter(|t| maze.in_uncertain_region(&t.s)).count();
            println!("{} transitions, {uncertain} in the uncertain region", data.len());
            Ok(())
        }
        Command::AblateHorizon {
            config,
            dataset,
            horizons,
            out,
        } => {
            let cfg = RunConfig::load(&config)?;
            let data = dataset.map(DatasetBuffer::load_jsonl).transpose()?;
            let rows = horizon_ablation(&cfg, data.as_ref(), &horizons)?;
            emit(out.as_deref(), &AblationRow::to_csv(&rows))
        }
    }
}
