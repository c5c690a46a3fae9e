//! Run configuration: flat key-value files, named presets, strict
//! validation. Every key carries its standard hyperparameter name; unknown
//! keys are rejected.

use std::path::PathBuf;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::trainer::{EnvChoice, OpponentMethod, TrainConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Syntax(String),
    #[error("unknown config key '{key}'")]
    UnknownKey { key: String },
    #[error("config key '{key}': expected {expected}")]
    Type { key: String, expected: &'static str },
    #[error("config key '{key}' out of range: {constraint}")]
    Range { key: String, constraint: String },
    #[error("unknown preset '{0}' (available: ipd-paper, ipd-desk, coin-paper, coin-desk)")]
    UnknownPreset(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Trainer settings plus run-level extras (output, evaluation cadence,
/// wall-clock budget).
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub preset: String,
    pub train: TrainConfig,
    pub out_dir: PathBuf,
    pub eval_every: u64,
    pub eval_episodes: usize,
    pub budget_seconds: Option<f64>,
    /// Checkpoint cadence in iterations; 0 keeps only the final checkpoint.
    pub checkpoint_every: u64,
}

/// Published defaults for the one-step-history dilemma runs.
///
/// Actor model: per-state logits. Reward discount 0.96, epsilon-greedy 0.2,
/// entropy beta 0, actor learning rate 1e-3, action-value learning rate
/// 1e-2, target EMA 0.99, Adam, gradient clipping disabled, replay buffer
/// disabled, 2-step differentiable-opponent credit window.
fn ipd_paper() -> RunConfig {
    RunConfig {
        preset: "ipd-paper".into(),
        train: TrainConfig {
            env: EnvChoice::Ipd,
            game_length: 50,
            batch_size: 2048,
            iterations: 4500,
            reward_discount: 0.96,
            opponent_method: OpponentMethod::NStep { n: 2 },
            actor_lr: 1e-3,
            critic_lr: 1e-2,
            ema_decay: 0.99,
            epsilon: 0.2,
            entropy_beta: 0.0,
            grad_clip_norm: 0.0,
            actor_hidden: 0,
            critic_hidden: 16,
            replay_buffer: false,
            replay_capacity: 10_000,
            replay_push_every: 10,
            self_play: true,
            decentralized_critic: false,
            shaping: true,
            seed: 42,
            coin_pickup_reward: 1.0,
            coin_other_color_penalty: -2.0,
        },
        out_dir: PathBuf::from("out"),
        eval_every: 100,
        eval_episodes: 32,
        budget_seconds: None,
        checkpoint_every: 0,
    }
}

/// Desk-scale dilemma preset: batch 512, 16-step games, 3000 iterations.
fn ipd_desk() -> RunConfig {
    let mut cfg = ipd_paper();
    cfg.preset = "ipd-desk".into();
    cfg.train.batch_size = 512;
    cfg.train.game_length = 16;
    cfg.train.iterations = 3000;
    cfg
}

/// Published defaults for the coin game: grid 3, game length 50, batch 512,
/// loaded-DiCE with dependency discount 0.9, entropy beta 0.1, gradient
/// clipping at norm 1, actor hidden 128, critic hidden 64, replay buffer of
/// 10000 agents pushed every 10 iterations.
fn coin_paper() -> RunConfig {
    RunConfig {
        preset: "coin-paper".into(),
        train: TrainConfig {
            env: EnvChoice::Coin { grid: 3 },
            game_length: 50,
            batch_size: 512,
            iterations: 6000,
            reward_discount: 0.96,
            opponent_method: OpponentMethod::LoadedDice { lambda: 0.9 },
            actor_lr: 1e-3,
            critic_lr: 1e-2,
            ema_decay: 0.99,
            epsilon: 0.0,
            entropy_beta: 0.1,
            grad_clip_norm: 1.0,
            actor_hidden: 128,
            critic_hidden: 64,
            replay_buffer: true,
            replay_capacity: 10_000,
            replay_push_every: 10,
            self_play: true,
            decentralized_critic: false,
            shaping: true,
            seed: 42,
            coin_pickup_reward: 1.0,
            coin_other_color_penalty: -2.0,
        },
        out_dir: PathBuf::from("out"),
        eval_every: 50,
        eval_episodes: 32,
        budget_seconds: None,
        checkpoint_every: 0,
    }
}

/// Desk-scale coin preset: batch 128, actor hidden 64, critic hidden 32,
/// replay capacity 500.
fn coin_desk() -> RunConfig {
    let mut cfg = coin_paper();
    cfg.preset = "coin-desk".into();
    cfg.train.batch_size = 128;
    cfg.train.actor_hidden = 64;
    cfg.train.critic_hidden = 32;
    cfg.train.replay_capacity = 500;
    cfg.train.iterations = 10_000;
    cfg
}

pub fn preset(name: &str) -> Result<RunConfig, ConfigError> {
    match name {
        "ipd-paper" => Ok(ipd_paper()),
        "ipd-desk" => Ok(ipd_desk()),
        "coin-paper" => Ok(coin_paper()),
        "coin-desk" => Ok(coin_desk()),
        other => Err(ConfigError::UnknownPreset(other.to_string())),
    }
}

fn default_for_env(env: &str) -> Result<RunConfig, ConfigError> {
    match env {
        "ipd" => Ok(ipd_paper()),
        "coin" => Ok(coin_paper()),
        other => Err(ConfigError::Range {
            key: "env".into(),
            constraint: format!("'ipd' or 'coin', got '{other}'"),
        }),
    }
}

fn as_str(key: &str, v: &toml::Value) -> Result<String, ConfigError> {
    v.as_str().map(str::to_string).ok_or(ConfigError::Type { key: key.into(), expected: "string" })
}

fn as_bool(key: &str, v: &toml::Value) -> Result<bool, ConfigError> {
    v.as_bool().ok_or(ConfigError::Type { key: key.into(), expected: "bool" })
}

fn as_int(key: &str, v: &toml::Value) -> Result<i64, ConfigError> {
    v.as_integer().ok_or(ConfigError::Type { key: key.into(), expected: "integer" })
}

fn as_float(key: &str, v: &toml::Value) -> Result<f64, ConfigError> {
    match v {
        toml::Value::Float(f) => Ok(*f),
        toml::Value::Integer(i) => Ok(*i as f64),
        _ => Err(ConfigError::Type { key: key.into(), expected: "float" }),
    }
}

fn pos_usize(key: &str, v: &toml::Value) -> Result<usize, ConfigError> {
    let i = as_int(key, v)?;
    if i < 1 {
        return Err(ConfigError::Range { key: key.into(), constraint: format!(">= 1, got {i}") });
    }
    Ok(i as usize)
}

fn unit_float(key: &str, v: &toml::Value) -> Result<f64, ConfigError> {
    let f = as_float(key, v)?;
    if !(0.0..=1.0).contains(&f) {
        return Err(ConfigError::Range { key: key.into(), constraint: format!("in [0, 1], got {f}") });
    }
    Ok(f)
}

fn positive_float(key: &str, v: &toml::Value) -> Result<f64, ConfigError> {
    let f = as_float(key, v)?;
    if !(f > 0.0) {
        return Err(ConfigError::Range { key: key.into(), constraint: format!("> 0, got {f}") });
    }
    Ok(f)
}

fn non_negative_float(key: &str, v: &toml::Value) -> Result<f64, ConfigError> {
    let f = as_float(key, v)?;
    if f < 0.0 {
        return Err(ConfigError::Range { key: key.into(), constraint: format!(">= 0, got {f}") });
    }
    Ok(f)
}

/// Parse a flat key-value document. Defaults come from the `preset` key if
/// present, else from the paper-faithful preset for the document's `env`
/// (`ipd` when absent); every other key overrides that base.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Syntax(e.to_string()))?;

    let mut base = if let Some(v) = table.get("preset") {
        preset(&as_str("preset", v)?)?
    } else if let Some(v) = table.get("env") {
        default_for_env(&as_str("env", v)?)?
    } else {
        default_for_env("ipd")?
    };

    for (key, value) in &table {
        let t = &mut base.train;
        match key.as_str() {
            "preset" => {}
            // Environment and episode shape.
            "env" => {
                let name = as_str(key, value)?;
                t.env = match name.as_str() {
                    "ipd" => EnvChoice::Ipd,
                    "coin" => {
                        let grid = match t.env {
                            EnvChoice::Coin { grid } => grid,
                            EnvChoice::Ipd => 3,
                        };
                        EnvChoice::Coin { grid }
                    }
                    other => {
                        return Err(ConfigError::Range {
                            key: key.clone(),
                            constraint: format!("'ipd' or 'coin', got '{other}'"),
                        })
                    }
                };
            }
            // Grid Size
            "grid_size" => {
                let g = pos_usize(key, value)?;
                if g < 2 {
                    return Err(ConfigError::Range { key: key.clone(), constraint: format!(">= 2, got {g}") });
                }
                t.env = EnvChoice::Coin { grid: g };
            }
            // Game Length
            "game_length" => {
                let len = pos_usize(key, value)?;
                if len < 2 {
                    return Err(ConfigError::Range { key: key.clone(), constraint: format!(">= 2, got {len}") });
                }
                t.game_length = len;
            }
            // Batch Size
            "batch_size" => t.batch_size = pos_usize(key, value)?,
            "iterations" => t.iterations = pos_usize(key, value)? as u64,
            // Reward Discount
            "reward_discount" => t.reward_discount = unit_float(key, value)?,
            // Differentiable Opponent Method
            "differentiable_opponent_method" => {
                let name = as_str(key, value)?;
                t.opponent_method = match name.as_str() {
                    "n_step" => {
                        let n = match t.opponent_method {
                            OpponentMethod::NStep { n } => n,
                            _ => 2,
                        };
                        OpponentMethod::NStep { n }
                    }
                    "loaded_dice" => {
                        let lambda = match t.opponent_method {
                            OpponentMethod::LoadedDice { lambda } => lambda,
                            _ => 0.9,
                        };
                        OpponentMethod::LoadedDice { lambda }
                    }
                    other => {
                        return Err(ConfigError::Range {
                            key: key.clone(),
                            constraint: format!("'n_step' or 'loaded_dice', got '{other}'"),
                        })
                    }
                };
            }
            // Differentiable Opponent N Step
            "differentiable_opponent_n_step" => {
                let n = pos_usize(key, value)?;
                t.opponent_method = OpponentMethod::NStep { n };
            }
            // Differentiable Opponent Discount
            "differentiable_opponent_discount" => {
                let lambda = unit_float(key, value)?;
                t.opponent_method = OpponentMethod::LoadedDice { lambda };
            }
            // Actor Learning Rate
            "actor_learning_rate" => t.actor_lr = positive_float(key, value)?,
            // Q-value / Critic Learning Rate
            "critic_learning_rate" => t.critic_lr = positive_float(key, value)?,
            // Critic Target Exponential Moving Average's Gamma
            "ema_gamma" => t.ema_decay = unit_float(key, value)?,
            // Epsilon Greedy
            "epsilon_greedy" => t.epsilon = unit_float(key, value)?,
            // Entropy Regularization / Actor Loss Entropy Beta
            "entropy_beta" => t.entropy_beta = non_negative_float(key, value)?,
            // Gradient Clipping Max Norm (0 disables)
            "grad_clip_max_norm" => t.grad_clip_norm = non_negative_float(key, value)?,
            // Actor Hidden Size
            "actor_hidden_size" => t.actor_hidden = pos_usize(key, value)?,
            // Critic Hidden Size
            "critic_hidden_size" => t.critic_hidden = pos_usize(key, value)?,
            // Agent Replay Buffer Mode
            "replay_buffer" => t.replay_buffer = as_bool(key, value)?,
            // Agent Replay Buffer Capacity
            "replay_buffer_capacity" => t.replay_capacity = pos_usize(key, value)?,
            // Agent Replay Buffer Update Freq
            "replay_buffer_update_freq" => t.replay_push_every = pos_usize(key, value)?,
            "self_play" => t.self_play = as_bool(key, value)?,
            "decentralized_critic" => t.decentralized_critic = as_bool(key, value)?,
            "shaping" => t.shaping = as_bool(key, value)?,
            "seed" => {
                let i = as_int(key, value)?;
                if i < 0 {
                    return Err(ConfigError::Range { key: key.clone(), constraint: format!(">= 0, got {i}") });
                }
                t.seed = i as u64;
            }
            "coin_pickup_reward" => t.coin_pickup_reward = as_float(key, value)?,
            "coin_other_color_penalty" => t.coin_other_color_penalty = as_float(key, value)?,
            "out_dir" => base.out_dir = PathBuf::from(as_str(key, value)?),
            "eval_every" => base.eval_every = pos_usize(key, value)? as u64,
            "eval_episodes" => base.eval_episodes = pos_usize(key, value)?,
            "budget_seconds" => base.budget_seconds = Some(positive_float(key, value)?),
            "checkpoint_every" => {
                let i = as_int(key, value)?;
                if i < 0 {
                    return Err(ConfigError::Range { key: key.clone(), constraint: format!(">= 0, got {i}") });
                }
                base.checkpoint_every = i as u64;
            }
            _ => return Err(ConfigError::UnknownKey { key: key.clone() }),
        }
    }

    validate(&base)?;
    Ok(base)
}

pub fn validate(cfg: &RunConfig) -> Result<(), ConfigError> {
    let t = &cfg.train;
    if t.replay_buffer && !t.self_play {
        return Err(ConfigError::Invalid(
            "the agent replay buffer requires self_play = true (the buffer stores past versions of the self-play agent)".into(),
        ));
    }
    if let EnvChoice::Coin { grid } = t.env {
        if grid < 2 {
            return Err(ConfigError::Range { key: "grid_size".into(), constraint: format!(">= 2, got {grid}") });
        }
        if t.actor_hidden == 0 {
            return Err(ConfigError::Invalid("coin game needs actor_hidden_size >= 1".into()));
        }
    }
    if t.game_length < 2 {
        return Err(ConfigError::Range { key: "game_length".into(), constraint: ">= 2".into() });
    }
    Ok(())
}

/// Serialize the full resolved configuration as a flat key-value document;
/// parsing it back reproduces the configuration exactly.
pub fn serialize_config(cfg: &RunConfig) -> String {
    let t = &cfg.train;
    let mut out = String::new();
    let (env, grid) = match t.env {
        EnvChoice::Ipd => ("ipd", None),
        EnvChoice::Coin { grid } => ("coin", Some(grid)),
    };
    out.push_str(&format!("preset = {:?}\n", cfg.preset));
    out.push_str(&format!("env = {env:?}\n"));
    if let Some(g) = grid {
        out.push_str(&format!("grid_size = {g}\n"));
    }
    out.push_str(&format!("game_length = {}\n", t.game_length));
    out.push_str(&format!("batch_size = {}\n", t.batch_size));
    out.push_str(&format!("iterations = {}\n", t.iterations));
    out.push_str(&format!("reward_discount = {}\n", float_toml(t.reward_discount)));
    match t.opponent_method {
        OpponentMethod::NStep { n } => {
            out.push_str("differentiable_opponent_method = \"n_step\"\n");
            out.push_str(&format!("differentiable_opponent_n_step = {n}\n"));
        }
        OpponentMethod::LoadedDice { lambda } => {
            out.push_str("differentiable_opponent_method = \"loaded_dice\"\n");
            out.push_str(&format!("differentiable_opponent_discount = {}\n", float_toml(lambda)));
        }
    }
    out.push_str(&format!("actor_learning_rate = {}\n", float_toml(t.actor_lr)));
    out.push_str(&format!("critic_learning_rate = {}\n", float_toml(t.critic_lr)));
    out.push_str(&format!("ema_gamma = {}\n", float_toml(t.ema_decay)));
    out.push_str(&format!("epsilon_greedy = {}\n", float_toml(t.epsilon)));
    out.push_str(&format!("entropy_beta = {}\n", float_toml(t.entropy_beta)));
    out.push_str(&format!("grad_clip_max_norm = {}\n", float_toml(t.grad_clip_norm)));
    if t.actor_hidden > 0 {
        out.push_str(&format!("actor_hidden_size = {}\n", t.actor_hidden));
    }
    out.push_str(&format!("critic_hidden_size = {}\n", t.critic_hidden));
    out.push_str(&format!("replay_buffer = {}\n", t.replay_buffer));
    out.push_str(&format!("replay_buffer_capacity = {}\n", t.replay_capacity));
    out.push_str(&format!("replay_buffer_update_freq = {}\n", t.replay_push_every));
    out.push_str(&format!("self_play = {}\n", t.self_play));
    out.push_str(&format!("decentralized_critic = {}\n", t.decentralized_critic));
    out.push_str(&format!("shaping = {}\n", t.shaping));
    out.push_str(&format!("seed = {}\n", t.seed));
    out.push_str(&format!("coin_pickup_reward = {}\n", float_toml(t.coin_pickup_reward)));
    out.push_str(&format!("coin_other_color_penalty = {}\n", float_toml(t.coin_other_color_penalty)));
    out.push_str(&format!("out_dir = {:?}\n", cfg.out_dir.display().to_string()));
    out.push_str(&format!("eval_every = {}\n", cfg.eval_every));
    out.push_str(&format!("eval_episodes = {}\n", cfg.eval_episodes));
    if let Some(b) = cfg.budget_seconds {
        out.push_str(&format!("budget_seconds = {}\n", float_toml(b)));
    }
    out.push_str(&format!("checkpoint_every = {}\n", cfg.checkpoint_every));
    out
}

/// TOML floats need a decimal point or exponent.
fn float_toml(v: f64) -> String {
    let s = v.to_string();
    if s.contains('.') || s.contains('e') || s.contains("inf") || s.contains("NaN") {
        s
    } else {
        format!("{s}.0")
    }
}

/// Stable hex digest of the resolved configuration.
pub fn config_hash(cfg: &RunConfig) -> String {
    let mut hasher = Sha256::new();
    hasher.update(serialize_config(cfg).as_bytes());
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
