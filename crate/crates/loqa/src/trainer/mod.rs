//! The training loop: batched rollouts, critic optimization with target
//! tracking, TD-0 advantages, opponent-shaping actor updates, self-play
//! pairing and the agent replay buffer.

mod adam;
mod replay;
mod rollout;

pub use adam::{clip_global_norm, AdamState};
pub use replay::ReplayBuffer;
pub use rollout::{rollout_batch, RolloutData};

use std::time::Instant;

use crate::agents::checkpoint::AgentSnapshot;
use crate::agents::{
    ema_update, huber_td_loss_anchored, ActorParams, AgentError, GruNet, LogitActor, ParamSet,
};
use crate::envs::{CoinEnv, EnvError, Environment, IpdEnv, Seat};
use crate::graphdiff::{Tape, Tensor};
use crate::rng;
use crate::shaping::{loqa_actor_loss, ActorLossSpec, DiceSpec, ShapingError, ShapingInputs};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite value in {term}; aborting")]
    NonFinite { term: String },
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Shaping(#[from] ShapingError),
    #[error(transparent)]
    Env(#[from] EnvError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvChoice {
    Ipd,
    Coin { grid: usize },
}

/// How the opponent's return is made differentiable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OpponentMethod {
    /// Credit only the next `n` steps' actions (dependency discount 1).
    NStep { n: usize },
    /// Credit every remaining step with dependency discount `lambda`.
    LoadedDice { lambda: f64 },
}

impl OpponentMethod {
    fn dice_spec(&self, gamma: f64) -> DiceSpec {
        match *self {
            OpponentMethod::NStep { n } => DiceSpec::n_step(gamma, n),
            OpponentMethod::LoadedDice { lambda } => DiceSpec::loaded(gamma, lambda),
        }
    }
}

/// Every knob the training loop reads.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub env: EnvChoice,
    pub game_length: usize,
    pub batch_size: usize,
    pub iterations: u64,
    pub reward_discount: f64,
    pub opponent_method: OpponentMethod,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub ema_decay: f64,
    pub epsilon: f64,
    pub entropy_beta: f64,
    /// Global-norm clip for actor gradients; non-positive disables.
    pub grad_clip_norm: f64,
    pub actor_hidden: usize,
    pub critic_hidden: usize,
    pub replay_buffer: bool,
    pub replay_capacity: usize,
    pub replay_push_every: usize,
    pub self_play: bool,
    pub decentralized_critic: bool,
    pub shaping: bool,
    pub seed: u64,
    pub coin_pickup_reward: f64,
    pub coin_other_color_penalty: f64,
}

/// One agent's trainable state: actor, critic, target critic, optimizer
/// moments, and (in decentralized mode) a private model of the opponent's
/// critic.
pub struct AgentBundle {
    pub actor: ActorParams,
    pub critic: GruNet,
    pub critic_target: GruNet,
    pub actor_opt: AdamState,
    pub critic_opt: AdamState,
    pub opp_critic: Option<GruNet>,
    pub opp_critic_target: Option<GruNet>,
    pub opp_critic_opt: Option<AdamState>,
}

impl AgentBundle {
    fn init(cfg: &TrainConfig, obs_dim: usize, actions: usize, agent_index: u64) -> Self {
        let mut r = rng::stream(cfg.seed, rng::DOMAIN_INIT, agent_index, 0);
        let actor = match cfg.env {
            EnvChoice::Ipd => ActorParams::Logit(LogitActor::new(obs_dim)),
            EnvChoice::Coin { .. } => {
                ActorParams::Gru(GruNet::init(obs_dim, cfg.actor_hidden, actions, &mut r))
            }
        };
        let critic = GruNet::init(obs_dim, cfg.critic_hidden, actions, &mut r);
        let critic_target = critic.clone();
        let (opp_critic, opp_critic_target, opp_critic_opt) = if cfg.decentralized_critic {
            let net = GruNet::init(obs_dim, cfg.critic_hidden, actions, &mut r);
            let opt = AdamState::new(&net);
            (Some(net.clone()), Some(net), Some(opt))
        } else {
            (None, None, None)
        };
        let actor_opt = AdamState::new(&actor);
        let critic_opt = AdamState::new(&critic);
        AgentBundle {
            actor,
            critic,
            critic_target,
            actor_opt,
            critic_opt,
            opp_critic,
            opp_critic_target,
            opp_critic_opt,
        }
    }

    pub fn snapshot(&self) -> AgentSnapshot {
        AgentSnapshot { actor: self.actor.clone(), critic: self.critic.clone() }
    }
}

/// Per-iteration scalars, one CSV row each.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationMetrics {
    pub iteration: u64,
    pub wall_clock_s: f64,
    pub ret_agent1: f64,
    pub ret_agent2: f64,
    pub q_loss1: f64,
    pub q_loss2: f64,
    pub actor_loss1: f64,
    pub actor_loss2: f64,
    pub entropy1: f64,
    pub entropy2: f64,
    pub grad_norm1: f64,
    pub grad_norm2: f64,
}

pub const METRICS_HEADER: &str = "iteration,wall_clock_s,ret_agent1,ret_agent2,q_loss1,q_loss2,actor_loss1,actor_loss2,entropy1,entropy2,grad_norm1,grad_norm2";

impl IterationMetrics {
    /// `zero_clock` writes a fixed 0 wall-clock column so training outputs
    /// stay byte-reproducible; benchmark outputs keep the measured value.
    pub fn csv_row(&self, zero_clock: bool) -> String {
        let clock = if zero_clock { 0.0 } else { self.wall_clock_s };
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.iteration,
            clock,
            self.ret_agent1,
            self.ret_agent2,
            self.q_loss1,
            self.q_loss2,
            self.actor_loss1,
            self.actor_loss2,
            self.entropy1,
            self.entropy2,
            self.grad_norm1,
            self.grad_norm2
        )
    }
}

pub struct Trainer {
    pub cfg: TrainConfig,
    pub live: AgentBundle,
    pub partner: Option<AgentBundle>,
    pub replay: ReplayBuffer,
    pub iteration: u64,
    started: Instant,
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self, TrainError> {
        let (obs_dim, actions) = match cfg.env {
            EnvChoice::Ipd => (IpdEnv.obs_dim(), IpdEnv.num_actions()),
            EnvChoice::Coin { grid } => {
                let env = CoinEnv::new(grid)?;
                (env.obs_dim(), env.num_actions())
            }
        };
        let live = AgentBundle::init(&cfg, obs_dim, actions, 0);
        let partner = if cfg.self_play { None } else { Some(AgentBundle::init(&cfg, obs_dim, actions, 1)) };
        let replay = ReplayBuffer::new(cfg.replay_capacity.max(1));
        Ok(Trainer { cfg, live, partner, replay, iteration: 0, started: Instant::now() })
    }

    pub fn elapsed_seconds(&self) -> f64 {
        self.started.elapsed().as_secs_f64()
    }

    /// Run the loop body once: pair, roll out, optimize critics, compute
    /// advantages, take the opponent-shaping actor steps.
    pub fn train_iteration(&mut self) -> Result<IterationMetrics, TrainError> {
        match self.cfg.env {
            EnvChoice::Ipd => self.iteration_impl(&IpdEnv),
            EnvChoice::Coin { grid } => {
                let env = CoinEnv::with_rewards(
                    grid,
                    self.cfg.coin_pickup_reward,
                    self.cfg.coin_other_color_penalty,
                )?;
                self.iteration_impl(&env)
            }
        }
    }

    /// The opponent parameters for this iteration: a uniformly sampled past
    /// snapshot under self-play with the replay buffer, the current
    /// parameters under plain self-play, or the independently trained
    /// partner when self-play is off.
    fn pair_opponent(&mut self) -> AgentSnapshot {
        if !self.cfg.self_play {
            return self.partner.as_ref().expect("partner exists when self-play is off").snapshot();
        }
        if self.cfg.replay_buffer {
            if replay::ReplayBuffer::due(self.iteration, self.cfg.replay_push_every) {
                self.replay.push(self.live.snapshot());
            }
            let mut r = rng::stream(self.cfg.seed, rng::DOMAIN_PAIRING, self.iteration, 0);
            if let Some(snap) = self.replay.sample(&mut r) {
                return snap.clone();
            }
        }
        self.live.snapshot()
    }

    fn iteration_impl<E: Environment>(&mut self, env: &E) -> Result<IterationMetrics, TrainError> {
        let cfg = self.cfg.clone();
        let opponent = self.pair_opponent();

        let data = rollout_batch(
            env,
            &self.live.actor,
            &opponent.actor,
            cfg.epsilon,
            cfg.game_length,
            cfg.batch_size,
            cfg.seed,
            self.iteration,
        );
        let traj = &data.traj;

        // Critic phase: the live agent always trains its own critic on its
        // seat; the partner (when present) trains on the other seat; in
        // decentralized mode the live agent also fits its private model of
        // the opponent's action-value function from observed opponent data.
        let q_loss1 = critic_step(
            &mut self.live.critic,
            &mut self.live.critic_target,
            &mut self.live.critic_opt,
            &traj.obs1,
            &traj.actions1,
            &traj.rewards1,
            &cfg,
            "critic loss (agent 1)",
        )?;
        let mut q_loss2 = 0.0;
        if let Some(partner) = self.partner.as_mut() {
            q_loss2 = critic_step(
                &mut partner.critic,
                &mut partner.critic_target,
                &mut partner.critic_opt,
                &traj.obs2,
                &traj.actions2,
                &traj.rewards2,
                &cfg,
                "critic loss (agent 2)",
            )?;
        }
        if cfg.decentralized_critic {
            let bundle = &mut self.live;
            q_loss2 = critic_step(
                bundle.opp_critic.as_mut().expect("decentralized critic"),
                bundle.opp_critic_target.as_mut().expect("decentralized target"),
                bundle.opp_critic_opt.as_mut().expect("decentralized optimizer"),
                &traj.obs2,
                &traj.actions2,
                &traj.rewards2,
                &cfg,
                "opponent-model critic loss (agent 1)",
            )?;
            if let Some(partner) = self.partner.as_mut() {
                critic_step(
                    partner.opp_critic.as_mut().expect("decentralized critic"),
                    partner.opp_critic_target.as_mut().expect("decentralized target"),
                    partner.opp_critic_opt.as_mut().expect("decentralized optimizer"),
                    &traj.obs1,
                    &traj.actions1,
                    &traj.rewards1,
                    &cfg,
                    "opponent-model critic loss (agent 2)",
                )?;
            }
        }

        // Advantage phase, after the critic updates.
        let q1_own = critic_forward(&self.live.critic, &traj.obs1);
        let a1_own = td0_batch(&q1_own, &data.probs1, &traj.rewards1, cfg.reward_discount);

        let opp_view_critic: &GruNet = if cfg.decentralized_critic {
            self.live.opp_critic.as_ref().expect("decentralized critic")
        } else if let Some(partner) = self.partner.as_ref() {
            &partner.critic
        } else {
            &opponent.critic
        };
        let q2_view = critic_forward(opp_view_critic, &traj.obs2);
        let a2_view = td0_batch(&q2_view, &data.probs2, &traj.rewards2, cfg.reward_discount);

        // Actor phase.
        let spec = ActorLossSpec {
            dice: cfg.opponent_method.dice_spec(cfg.reward_discount),
            epsilon: cfg.epsilon,
            entropy_beta: cfg.entropy_beta,
            shaping: cfg.shaping,
        };
        let out1 = actor_step(
            &mut self.live.actor,
            &mut self.live.actor_opt,
            &traj.obs1,
            &traj.actions1,
            &ShapingInputs {
                advantages: &a1_own,
                opp_rewards: &traj.rewards2,
                opp_advantages: &a2_view,
                opp_critic_q: &q2_view,
                opp_actions: &traj.actions2,
            },
            &spec,
            &cfg,
            "actor loss (agent 1)",
        )?;

        let mut out2 = ActorStepOutcome::default();
        if self.partner.is_some() {
            // The partner shapes the live agent symmetrically.
            let (q1_view, a1_view) = if cfg.decentralized_critic {
                let partner = self.partner.as_ref().expect("partner");
                let q = critic_forward(partner.opp_critic.as_ref().expect("decentralized critic"), &traj.obs1);
                let a = td0_batch(&q, &data.probs1, &traj.rewards1, cfg.reward_discount);
                (q, a)
            } else {
                (q1_own, a1_own)
            };
            let partner_critic_q = if cfg.decentralized_critic {
                let partner = self.partner.as_ref().expect("partner");
                let q = critic_forward(&partner.critic, &traj.obs2);
                let a = td0_batch(&q, &data.probs2, &traj.rewards2, cfg.reward_discount);
                (q, a)
            } else {
                (q2_view, a2_view)
            };
            let partner = self.partner.as_mut().expect("partner");
            out2 = actor_step(
                &mut partner.actor,
                &mut partner.actor_opt,
                &traj.obs2,
                &traj.actions2,
                &ShapingInputs {
                    advantages: &partner_critic_q.1,
                    opp_rewards: &traj.rewards1,
                    opp_advantages: &a1_view,
                    opp_critic_q: &q1_view,
                    opp_actions: &traj.actions1,
                },
                &spec,
                &cfg,
                "actor loss (agent 2)",
            )?;
        }

        let metrics = IterationMetrics {
            iteration: self.iteration,
            wall_clock_s: self.elapsed_seconds(),
            ret_agent1: traj.mean_step_reward(Seat::One),
            ret_agent2: traj.mean_step_reward(Seat::Two),
            q_loss1,
            q_loss2,
            actor_loss1: out1.loss,
            actor_loss2: out2.loss,
            entropy1: data.entropy1,
            entropy2: data.entropy2,
            grad_norm1: out1.grad_norm,
            grad_norm2: out2.grad_norm,
        };
        self.iteration += 1;
        Ok(metrics)
    }
}

/// No-gradient critic pass over a seat's observations, threading hidden
/// state; returns the `[B, A]` Q rows per step.
fn critic_forward(critic: &GruNet, obs: &[Tensor]) -> Vec<Tensor> {
    let tape = Tape::new();
    let vars = critic.insert(&tape, false);
    let mut h = vars.initial_hidden(&tape, obs[0].rows());
    let mut rows = Vec::with_capacity(obs.len());
    for o in obs {
        let (q, h_next) = vars.step(tape.constant(o.clone()), h);
        h = h_next;
        rows.push(q.value());
    }
    rows
}

/// TD-0 advantages per step and episode with
/// `V(s) = sum_a pi(a|s) Q(s, a)`.
///
/// The actor loss runs over steps 1..T-1 of the loop body, so the final
/// step's advantage weight is zeroed rather than bootstrapped against a
/// beyond-horizon value the critic never sees; a value-scale-calibrated
/// critic would otherwise inject one huge spurious advantage there every
/// episode.
fn td0_batch(q_rows: &[Tensor], probs: &[Tensor], rewards: &[Vec<f64>], gamma: f64) -> Vec<Vec<f64>> {
    let steps = q_rows.len();
    let batch = q_rows[0].rows();
    let actions = q_rows[0].cols();
    let mut values = vec![vec![0.0; batch]; steps + 1];
    for t in 0..steps {
        for e in 0..batch {
            let mut v = 0.0;
            for a in 0..actions {
                v += probs[t].at2(e, a) * q_rows[t].at2(e, a);
            }
            values[t][e] = v;
        }
    }
    (0..steps)
        .map(|t| {
            if t + 1 == steps {
                return vec![0.0; batch];
            }
            (0..batch)
                .map(|e| rewards[t][e] + gamma * values[t + 1][e] - values[t][e])
                .collect()
        })
        .collect()
}

fn critic_step(
    critic: &mut GruNet,
    target: &mut GruNet,
    opt: &mut AdamState,
    obs: &[Tensor],
    actions: &[Vec<usize>],
    rewards: &[Vec<f64>],
    cfg: &TrainConfig,
    term: &str,
) -> Result<f64, TrainError> {
    let tape = Tape::new();
    let (loss, vars) =
        huber_td_loss_anchored(&tape, critic, target, obs, actions, rewards, cfg.reward_discount)?;
    let loss_value = loss.item();
    if !loss_value.is_finite() {
        return Err(TrainError::NonFinite { term: term.into() });
    }
    let grads = tape.backward(loss).expect("scalar loss");
    let grad_tensors: Vec<Tensor> = vars
        .vars()
        .iter()
        .zip(critic.fields())
        .map(|(v, (_, p))| grads.get_or_zeros(*v, p.shape()))
        .collect();
    opt.apply(critic, &grad_tensors, cfg.critic_lr);
    ema_update(target, critic, cfg.ema_decay);
    Ok(loss_value)
}

#[derive(Debug, Default, Clone, Copy)]
struct ActorStepOutcome {
    loss: f64,
    grad_norm: f64,
}

fn actor_step(
    actor: &mut ActorParams,
    opt: &mut AdamState,
    obs: &[Tensor],
    actions: &[Vec<usize>],
    inputs: &ShapingInputs<'_>,
    spec: &ActorLossSpec,
    cfg: &TrainConfig,
    term: &str,
) -> Result<ActorStepOutcome, TrainError> {
    let tape = Tape::new();
    let vars = actor.insert(&tape, true);
    let parts = loqa_actor_loss(&tape, &vars, obs, actions, inputs, spec)?;
    let loss_value = parts.total.item();
    if !loss_value.is_finite() {
        return Err(TrainError::NonFinite { term: term.into() });
    }
    let grads = tape.backward(parts.total).expect("scalar loss");
    let mut grad_tensors: Vec<Tensor> = vars
        .vars()
        .iter()
        .zip(actor.fields())
        .map(|(v, (_, p))| grads.get_or_zeros(*v, p.shape()))
        .collect();
    let pre_clip = clip_global_norm(&mut grad_tensors, cfg.grad_clip_norm);
    opt.apply(actor, &grad_tensors, cfg.actor_lr);
    Ok(ActorStepOutcome { loss: loss_value, grad_norm: pre_clip })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny_ipd_config() -> TrainConfig {
        TrainConfig {
            env: EnvChoice::Ipd,
            game_length: 6,
            batch_size: 32,
            iterations: 3,
            reward_discount: 0.96,
            opponent_method: OpponentMethod::NStep { n: 2 },
            actor_lr: 1e-3,
            critic_lr: 1e-2,
            ema_decay: 0.99,
            epsilon: 0.2,
            entropy_beta: 0.0,
            grad_clip_norm: 0.0,
            actor_hidden: 0,
            critic_hidden: 4,
            replay_buffer: false,
            replay_capacity: 16,
            replay_push_every: 10,
            self_play: true,
            decentralized_critic: false,
            shaping: true,
            seed: 42,
            coin_pickup_reward: 1.0,
            coin_other_color_penalty: -2.0,
        }
    }

    #[test]
    fn one_iteration_changes_parameters() {
        let mut tr = Trainer::new(tiny_ipd_config()).unwrap();
        let before = tr.live.actor.tensors();
        let critic_before = tr.live.critic.tensors();
        tr.train_iteration().unwrap();
        assert_ne!(before, tr.live.actor.tensors(), "actor must move");
        assert_ne!(critic_before, tr.live.critic.tensors(), "critic must move");
    }

    #[test]
    fn deterministic_metrics_for_same_seed() {
        let run = || {
            let mut tr = Trainer::new(tiny_ipd_config()).unwrap();
            let mut rows = Vec::new();
            for _ in 0..3 {
                rows.push(tr.train_iteration().unwrap().csv_row(true));
            }
            rows.join("\n")
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn shaping_disabled_matches_naive_loss_values() {
        // With shaping off, the actor loss value reduces to the advantage
        // actor-critic loss: the shaping component never contributes.
        let mut cfg = tiny_ipd_config();
        cfg.shaping = false;
        let mut tr = Trainer::new(cfg).unwrap();
        let m = tr.train_iteration().unwrap();
        assert!(m.actor_loss1.is_finite());
    }

    #[test]
    fn self_play_keeps_partner_absent_and_opponent_identical() {
        let cfg = tiny_ipd_config();
        let tr = Trainer::new(cfg).unwrap();
        assert!(tr.partner.is_none());
        let mut tr = tr;
        let snap = tr.pair_opponent();
        assert_eq!(snap.actor, tr.live.actor, "replay off: opponent is the current self");
    }

    #[test]
    fn replay_pairing_draws_from_buffer() {
        let mut cfg = tiny_ipd_config();
        cfg.replay_buffer = true;
        cfg.replay_push_every = 1;
        let mut tr = Trainer::new(cfg).unwrap();
        for _ in 0..3 {
            tr.train_iteration().unwrap();
        }
        assert_eq!(tr.replay.len(), 3);
    }

    #[test]
    fn two_agent_mode_updates_both_actors() {
        let mut cfg = tiny_ipd_config();
        cfg.self_play = false;
        let mut tr = Trainer::new(cfg).unwrap();
        let live_before = tr.live.actor.tensors();
        let partner_before = tr.partner.as_ref().unwrap().actor.tensors();
        let m = tr.train_iteration().unwrap();
        assert_ne!(live_before, tr.live.actor.tensors());
        assert_ne!(partner_before, tr.partner.as_ref().unwrap().actor.tensors());
        assert!(m.q_loss2 != 0.0);
        assert!(m.grad_norm2 > 0.0);
    }

    #[test]
    fn decentralized_critic_trains_private_model() {
        let mut cfg = tiny_ipd_config();
        cfg.decentralized_critic = true;
        let mut tr = Trainer::new(cfg).unwrap();
        let before = tr.live.opp_critic.as_ref().unwrap().tensors();
        tr.train_iteration().unwrap();
        assert_ne!(before, tr.live.opp_critic.as_ref().unwrap().tensors());
    }

    #[test]
    fn actor_step_touches_only_actor_critic_phase_only_critic() {
        let mut tr = Trainer::new(tiny_ipd_config()).unwrap();
        // After an iteration the target is an EMA of the critic, never equal
        // to the initial copy once the critic moved.
        let target_before = tr.live.critic_target.tensors();
        tr.train_iteration().unwrap();
        assert_ne!(target_before, tr.live.critic_target.tensors());
    }
}
