//! Command-line front end: train, league, bench, export.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use loqa::agents::checkpoint::{load_agent, CheckpointError};
use loqa::config::{parse_config, preset, ConfigError, RunConfig};
use loqa::league::{
    run_league, standard_thresholds, FixedPolicy, LeagueConfig, LeagueError, LeaguePlayer,
};
use loqa::run::{run_bench, run_train, RunError};
use loqa::trainer::EnvChoice;

#[derive(Parser)]
#[command(name = "loqa", version, about = "Opponent-shaping training and evaluation for social-dilemma games")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train an agent, writing metrics and checkpoints.
    Train(TrainArgs),
    /// Evaluate checkpoints and fixed policies round-robin.
    League(LeagueArgs),
    /// Train with periodic threshold evaluation (coin game).
    Bench(BenchArgs),
    /// Merge result CSVs into one tidy long-format file.
    Export(ExportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Ablation {
    ReplayBuffer,
    SelfPlay,
    Shaping,
}

#[derive(Args)]
struct TrainArgs {
    /// Flat key-value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Preset name: ipd-paper, ipd-desk, coin-paper, coin-desk.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Stop cleanly after this many seconds, flagging the checkpoint partial.
    #[arg(long)]
    budget_seconds: Option<f64>,
    /// Disable a training component.
    #[arg(long, value_enum)]
    ablate: Vec<Ablation>,
    #[arg(long)]
    grid_size: Option<usize>,
    /// Evaluation cadence in iterations (benchmarks and periodic evals).
    #[arg(long)]
    eval_every: Option<u64>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    train: TrainArgs,
    /// Grid sizes to sweep; one output directory per size.
    #[arg(long = "sweep-grid-size", value_delimiter = ',')]
    sweep: Vec<usize>,
}

#[derive(Args)]
struct LeagueArgs {
    /// Environment: ipd or coin. Defaults to the first checkpoint's.
    #[arg(long)]
    env: Option<String>,
    #[arg(long)]
    grid_size: Option<usize>,
    /// Checkpoint path or `fixed:<ac|ad|random|tft>`; repeatable.
    #[arg(long = "agent", required = true)]
    agents: Vec<String>,
    /// Fixed opponents to face (default: AC, AD, Random plus self and
    /// cross-agent pairings).
    #[arg(long = "opponent")]
    opponents: Vec<String>,
    #[arg(long, default_value_t = 50)]
    episodes: usize,
    #[arg(long, default_value_t = 50)]
    length: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct ExportArgs {
    /// Input CSVs in any supported schema; repeatable.
    #[arg(long = "input", required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, thiserror::Error)]
enum AppError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Run(#[from] RunError),
    #[error(transparent)]
    League(#[from] LeagueError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("i/o at {path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("{0}")]
    Usage(String),
}

/// 0 success, 2 configuration errors, 3 runtime errors, 4 i/o errors.
fn exit_code(err: &AppError) -> u8 {
    match err {
        AppError::Config(_) | AppError::Usage(_) => 2,
        AppError::Run(RunError::Config(_)) => 2,
        AppError::Run(RunError::Io { .. }) | AppError::Io { .. } => 4,
        AppError::Checkpoint(CheckpointError::Io { .. }) => 4,
        AppError::Run(RunError::Checkpoint(CheckpointError::Io { .. })) => 4,
        AppError::League(LeagueError::Checkpoint(CheckpointError::Io { .. })) => 4,
        _ => 3,
    }
}

fn io_at(path: &Path) -> impl Fn(io::Error) -> AppError + '_ {
    move |source| AppError::Io { path: path.display().to_string(), source }
}

fn resolve_config(args: &TrainArgs) -> Result<RunConfig, AppError> {
    let mut cfg = match (&args.config, &args.preset) {
        (Some(path), maybe_preset) => {
            let mut text = fs::read_to_string(path).map_err(io_at(path))?;
            if let Some(name) = maybe_preset {
                if !text.lines().any(|l| l.trim_start().starts_with("preset")) {
                    text = format!("preset = {name:?}\n{text}");
                }
            }
            parse_config(&text)?
        }
        (None, Some(name)) => preset(name)?,
        (None, None) => preset("ipd-paper")?,
    };
    if let Some(seed) = args.seed {
        cfg.train.seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.out_dir = out.clone();
    }
    if let Some(budget) = args.budget_seconds {
        cfg.budget_seconds = Some(budget);
    }
    if let Some(grid) = args.grid_size {
        cfg.train.env = EnvChoice::Coin { grid };
    }
    if let Some(every) = args.eval_every {
        cfg.eval_every = every;
    }
    for ablation in &args.ablate {
        match ablation {
            Ablation::ReplayBuffer => cfg.train.replay_buffer = false,
            Ablation::SelfPlay => {
                cfg.train.self_play = false;
                cfg.train.replay_buffer = false;
            }
            Ablation::Shaping => cfg.train.shaping = false,
        }
    }
    loqa::config::validate(&cfg)?;
    Ok(cfg)
}

fn cmd_train(args: TrainArgs) -> Result<(), AppError> {
    let cfg = resolve_config(&args)?;
    let outcome = run_train(&cfg)?;
    println!(
        "trained {} iterations{}; metrics: {}; checkpoint: {}",
        outcome.completed_iterations,
        if outcome.partial { " (budget reached, checkpoint flagged partial)" } else { "" },
        outcome.metrics_path.display(),
        outcome.checkpoint_path.display()
    );
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> Result<(), AppError> {
    let base = resolve_config(&args.train)?;
    let thresholds = standard_thresholds();
    let grids: Vec<Option<usize>> = if args.sweep.is_empty() {
        vec![None]
    } else {
        args.sweep.iter().map(|g| Some(*g)).collect()
    };
    for grid in grids {
        let mut cfg = base.clone();
        if let Some(g) = grid {
            cfg.train.env = EnvChoice::Coin { grid: g };
            cfg.out_dir = base.out_dir.join(format!("g{g}"));
        }
        loqa::config::validate(&cfg)?;
        let outcome = run_bench(&cfg, &thresholds)?;
        for c in &outcome.crossings {
            let status = match (c.passed, c.wall_clock_s) {
                (true, Some(w)) => format!("passed at iteration {} ({w:.1}s)", c.iteration.unwrap()),
                _ => "not reached".to_string(),
            };
            println!("{}: {} {}", cfg.out_dir.display(), c.level.name(), status);
        }
        println!("threshold table: {}", outcome.threshold_path.display());
    }
    Ok(())
}

fn parse_league_player(spec: &str) -> Result<LeaguePlayer, AppError> {
    if let Some(name) = spec.strip_prefix("fixed:") {
        let kind = FixedPolicy::parse(name)
            .ok_or_else(|| AppError::Usage(format!("unknown fixed policy '{name}'")))?;
        return Ok(LeaguePlayer::Fixed(kind));
    }
    let path = PathBuf::from(spec);
    let (meta, snapshot) = load_agent(&path)?;
    let label = path.file_stem().map(|s| s.to_string_lossy().to_string()).unwrap_or_else(|| spec.to_string());
    Ok(LeaguePlayer::Trained { label: format!("{label}-seed{}", meta.seed), snapshot, meta })
}

fn cmd_league(args: LeagueArgs) -> Result<(), AppError> {
    let players: Vec<LeaguePlayer> =
        args.agents.iter().map(|s| parse_league_player(s)).collect::<Result<_, _>>()?;

    let env = match args.env.as_deref() {
        Some("ipd") => EnvChoice::Ipd,
        Some("coin") => EnvChoice::Coin { grid: args.grid_size.unwrap_or(3) },
        Some(other) => return Err(AppError::Usage(format!("unknown env '{other}'"))),
        None => {
            // infer from the first trained agent, falling back to the dilemma
            players
                .iter()
                .find_map(|p| match p {
                    LeaguePlayer::Trained { meta, .. } if meta.env == "coin" => {
                        Some(EnvChoice::Coin { grid: meta.grid })
                    }
                    LeaguePlayer::Trained { .. } => Some(EnvChoice::Ipd),
                    _ => None,
                })
                .unwrap_or(EnvChoice::Ipd)
        }
    };

    let opponents = if args.opponents.is_empty() {
        None
    } else {
        Some(
            args.opponents
                .iter()
                .map(|n| {
                    FixedPolicy::parse(n)
                        .ok_or_else(|| AppError::Usage(format!("unknown fixed policy '{n}'")))
                })
                .collect::<Result<Vec<_>, _>>()?,
        )
    };

    let cfg = LeagueConfig { env, episodes: args.episodes, steps: args.length, seed: args.seed, opponents };
    let report = run_league(&players, &cfg)?;
    fs::create_dir_all(&args.out).map_err(io_at(&args.out))?;
    let path = args.out.join("league.csv");
    fs::write(&path, report.to_csv()).map_err(io_at(&path))?;
    println!("league table: {}", path.display());
    for row in &report.rows {
        println!("{} vs {}: {:.4}", row.agent, row.opponent, row.mean_reward);
    }
    Ok(())
}

fn cmd_export(args: ExportArgs) -> Result<(), AppError> {
    if args.inputs.is_empty() {
        return Err(AppError::Usage("export needs at least one --input".into()));
    }
    let mut out = String::from("run,metric,x,y\n");
    for path in &args.inputs {
        let text = fs::read_to_string(path).map_err(io_at(path))?;
        let run_label = path.file_stem().map(|s| s.to_string_lossy().to_string()).unwrap_or_default();
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| AppError::Usage(format!("{}: empty file", path.display())))?;
        let columns: Vec<&str> = header.split(',').collect();
        match columns.first().copied() {
            Some("iteration") => {
                // metrics.csv or evals.csv: iteration-indexed numeric columns
                for line in lines {
                    let cells: Vec<&str> = line.split(',').collect();
                    if cells.len() != columns.len() {
                        return Err(AppError::Usage(format!("{}: ragged row '{line}'", path.display())));
                    }
                    for (col, cell) in columns.iter().zip(&cells).skip(1) {
                        out.push_str(&format!("{run_label},{col},{},{}\n", cells[0], cell));
                    }
                }
            }
            Some("seed") if columns.get(1) == Some(&"opponent") => {
                // league.csv: numeric columns per pairing row
                for (i, line) in lines.enumerate() {
                    let cells: Vec<&str> = line.split(',').collect();
                    if cells.len() != columns.len() {
                        return Err(AppError::Usage(format!("{}: ragged row '{line}'", path.display())));
                    }
                    for (col, cell) in columns.iter().zip(&cells).skip(2) {
                        if cell.is_empty() {
                            continue;
                        }
                        out.push_str(&format!("{run_label},{}_vs_{}_{col},{i},{cell}\n", cells[0], cells[1]));
                    }
                }
            }
            Some("seed") if columns.get(1) == Some(&"level") => {
                // thresholds.csv: first-crossing rows
                for line in lines {
                    let cells: Vec<&str> = line.split(',').collect();
                    if cells.len() != columns.len() {
                        return Err(AppError::Usage(format!("{}: ragged row '{line}'", path.display())));
                    }
                    if cells[2] == "true" {
                        out.push_str(&format!("{run_label},time_to_{},{},{}\n", cells[1], cells[3], cells[4]));
                    }
                }
            }
            _ => {
                return Err(AppError::Usage(format!(
                    "{}: unrecognized schema (header '{header}')",
                    path.display()
                )))
            }
        }
    }
    fs::write(&args.out, out).map_err(io_at(&args.out))?;
    println!("exported: {}", args.out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Train(args) => cmd_train(args),
        Cmd::League(args) => cmd_league(args),
        Cmd::Bench(args) => cmd_bench(args),
        Cmd::Export(args) => cmd_export(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
