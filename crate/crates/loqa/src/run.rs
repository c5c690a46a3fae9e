//! Run orchestration: drive the trainer to completion or budget, emit
//! metrics/checkpoint/threshold files under the run's output directory.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::agents::checkpoint::{save_agent, AgentSnapshot, CheckpointError, CheckpointMeta};
use crate::config::{config_hash, serialize_config, ConfigError, RunConfig};
use crate::envs::{normalized_return, CoinEnv, Environment, IpdEnv};
use crate::league::{
    eval_self_and_defect, threshold_csv_rows, time_to_threshold, Crossing, EvalPoint, LeagueError,
    ThresholdSpec, THRESHOLD_CSV_HEADER,
};
use crate::trainer::{EnvChoice, TrainError, Trainer, METRICS_HEADER};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    League(#[from] LeagueError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("i/o at {path}: {source}")]
    Io { path: String, source: io::Error },
}

fn io_at(path: &Path) -> impl Fn(io::Error) -> RunError + '_ {
    move |source| RunError::Io { path: path.display().to_string(), source }
}

pub struct TrainOutcome {
    pub metrics_path: PathBuf,
    pub checkpoint_path: PathBuf,
    pub final_snapshot: AgentSnapshot,
    pub completed_iterations: u64,
    /// True when the wall-clock budget stopped the run early.
    pub partial: bool,
}

pub struct BenchOutcome {
    pub crossings: Vec<Crossing>,
    pub eval_points: Vec<EvalPoint>,
    pub threshold_path: PathBuf,
    pub metrics_path: PathBuf,
    pub partial: bool,
}

pub fn checkpoint_meta(cfg: &RunConfig, partial: bool, iteration: u64) -> CheckpointMeta {
    let t = &cfg.train;
    let (env, grid, obs_dim, actions) = match t.env {
        EnvChoice::Ipd => ("ipd".to_string(), 0, IpdEnv.obs_dim(), IpdEnv.num_actions()),
        EnvChoice::Coin { grid } => {
            let env = CoinEnv::new(grid).expect("validated grid");
            ("coin".to_string(), grid, env.obs_dim(), env.num_actions())
        }
    };
    CheckpointMeta {
        env,
        grid,
        obs_dim,
        actions,
        actor_kind: match t.env {
            EnvChoice::Ipd => "logit".into(),
            EnvChoice::Coin { .. } => "gru".into(),
        },
        actor_hidden: t.actor_hidden,
        critic_hidden: t.critic_hidden,
        config_hash: config_hash(cfg),
        partial,
        seed: t.seed,
        iteration,
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), RunError> {
    fs::write(path, text).map_err(io_at(path))
}

/// Train to completion (or budget), writing `metrics.csv`, the resolved
/// `config.toml` and a final checkpoint. Training metrics keep a fixed
/// zero wall-clock column so byte-level reproducibility holds; benchmark
/// runs record real time instead.
pub fn run_train(cfg: &RunConfig) -> Result<TrainOutcome, RunError> {
    run_train_inner(cfg, false).map(|(outcome, _)| outcome)
}

fn run_train_inner(cfg: &RunConfig, record_clock: bool) -> Result<(TrainOutcome, Vec<EvalPoint>), RunError> {
    fs::create_dir_all(&cfg.out_dir).map_err(io_at(&cfg.out_dir))?;
    write_text(&cfg.out_dir.join("config.toml"), &serialize_config(cfg))?;

    let mut trainer = Trainer::new(cfg.train.clone())?;
    let mut metrics = String::from(METRICS_HEADER);
    metrics.push('\n');
    let mut partial = false;
    let mut eval_points: Vec<EvalPoint> = Vec::new();

    while trainer.iteration < cfg.train.iterations {
        if let Some(budget) = cfg.budget_seconds {
            if trainer.elapsed_seconds() >= budget {
                partial = true;
                break;
            }
        }
        let m = trainer.train_iteration()?;
        metrics.push_str(&m.csv_row(!record_clock));
        metrics.push('\n');

        if record_clock && m.iteration % cfg.eval_every == 0 {
            let point = evaluate_point(cfg, &trainer, m.iteration)?;
            eval_points.push(point);
        }
        if cfg.checkpoint_every > 0 && m.iteration > 0 && m.iteration % cfg.checkpoint_every == 0 {
            let path = cfg.out_dir.join(format!("agent_iter{}.ckpt", m.iteration));
            save_agent(&path, &checkpoint_meta(cfg, false, m.iteration), &trainer.live.snapshot())?;
        }
    }

    let metrics_path = cfg.out_dir.join("metrics.csv");
    write_text(&metrics_path, &metrics)?;
    let checkpoint_path = cfg.out_dir.join("agent.ckpt");
    let snapshot = trainer.live.snapshot();
    save_agent(&checkpoint_path, &checkpoint_meta(cfg, partial, trainer.iteration), &snapshot)?;

    Ok((
        TrainOutcome {
            metrics_path,
            checkpoint_path,
            final_snapshot: snapshot,
            completed_iterations: trainer.iteration,
            partial,
        },
        eval_points,
    ))
}

fn evaluate_point(cfg: &RunConfig, trainer: &Trainer, iteration: u64) -> Result<EvalPoint, RunError> {
    let snapshot = trainer.live.snapshot();
    let (vs_self, vs_ad) = eval_self_and_defect(
        &snapshot,
        cfg.train.env,
        cfg.eval_episodes,
        cfg.train.game_length,
        cfg.train.seed,
        iteration,
    )?;
    let (norm_self, norm_ad) = match cfg.train.env {
        EnvChoice::Coin { grid } => (normalized_return(vs_self, grid), normalized_return(vs_ad, grid)),
        EnvChoice::Ipd => (vs_self, vs_ad),
    };
    Ok(EvalPoint {
        iteration,
        wall_clock_s: trainer.elapsed_seconds(),
        norm_vs_self: norm_self,
        norm_vs_always_defect: norm_ad,
    })
}

/// Train with periodic threshold evaluation; emits the first-crossing table.
/// Only defined for the coin game, whose normalized returns the thresholds
/// are stated in.
pub fn run_bench(cfg: &RunConfig, thresholds: &[ThresholdSpec]) -> Result<BenchOutcome, RunError> {
    if !matches!(cfg.train.env, EnvChoice::Coin { .. }) {
        return Err(RunError::Config(ConfigError::Invalid(
            "the time-to-threshold benchmark is defined on the coin game (normalized returns); set env = \"coin\"".into(),
        )));
    }
    let (outcome, eval_points) = run_train_inner(cfg, true)?;
    let crossings = time_to_threshold(&eval_points, thresholds);

    let mut table = String::from(THRESHOLD_CSV_HEADER);
    table.push('\n');
    table.push_str(&threshold_csv_rows(cfg.train.seed, &crossings));
    let threshold_path = cfg.out_dir.join("thresholds.csv");
    write_text(&threshold_path, &table)?;

    let mut evals = String::from("iteration,wall_clock_s,norm_vs_self,norm_vs_always_defect\n");
    for p in &eval_points {
        evals.push_str(&format!(
            "{},{},{},{}\n",
            p.iteration, p.wall_clock_s, p.norm_vs_self, p.norm_vs_always_defect
        ));
    }
    write_text(&cfg.out_dir.join("evals.csv"), &evals)?;

    Ok(BenchOutcome {
        crossings,
        eval_points,
        threshold_path,
        metrics_path: outcome.metrics_path,
        partial: outcome.partial,
    })
}

/// Early-stopping variant used by long-budget validation runs: stops as soon
/// as the given threshold level passes, or on budget/iteration exhaustion.
pub fn run_until_threshold(
    cfg: &RunConfig,
    spec: &ThresholdSpec,
) -> Result<(Option<EvalPoint>, Vec<EvalPoint>), RunError> {
    let mut trainer = Trainer::new(cfg.train.clone())?;
    let mut points = Vec::new();
    while trainer.iteration < cfg.train.iterations {
        if let Some(budget) = cfg.budget_seconds {
            if trainer.elapsed_seconds() >= budget {
                break;
            }
        }
        let m = trainer.train_iteration()?;
        if m.iteration % cfg.eval_every == 0 {
            let p = evaluate_point(cfg, &trainer, m.iteration)?;
            points.push(p);
            if crate::league::threshold_check(p.norm_vs_self, p.norm_vs_always_defect, spec) {
                return Ok((Some(p), points));
            }
        }
    }
    Ok((None, points))
}
