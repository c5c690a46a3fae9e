//! Actor and critic function approximators plus the small per-step
//! quantities derived from them: action sampling, Q-derived state values,
//! TD-0 advantages, Huber TD losses, target-network tracking and entropy.

pub mod checkpoint;
mod gru;
mod logit;

pub use gru::{GruNet, GruVars};
pub use logit::{LogitActor, LogitVars};

use crate::graphdiff::{Tape, Tensor, Var};
use rand::{Rng, RngCore};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("observation dimension {got} does not match the actor's input {expected}")]
    DimMismatch { expected: usize, got: usize },
    #[error("trajectory too short: need at least 2 steps, got {0}")]
    TooShort(usize),
}

/// Ordered named views over a parameter collection; optimizers, target
/// tracking and checkpoints all walk fields in this fixed order.
pub trait ParamSet {
    fn fields(&self) -> Vec<(&'static str, &Tensor)>;
    fn fields_mut(&mut self) -> Vec<(&'static str, &mut Tensor)>;

    fn tensors(&self) -> Vec<Tensor> {
        self.fields().into_iter().map(|(_, t)| t.clone()).collect()
    }

    fn param_count(&self) -> usize {
        self.fields().iter().map(|(_, t)| t.numel()).sum()
    }
}

/// Actor parameterizations: tabular logits for the IPD, a GRU elsewhere.
#[derive(Debug, Clone, PartialEq)]
pub enum ActorParams {
    Logit(LogitActor),
    Gru(GruNet),
}

impl ActorParams {
    pub fn num_actions(&self) -> usize {
        match self {
            ActorParams::Logit(_) => 2,
            ActorParams::Gru(net) => net.out_dim(),
        }
    }

    pub fn obs_dim(&self) -> usize {
        match self {
            ActorParams::Logit(a) => a.states(),
            ActorParams::Gru(net) => net.obs_dim(),
        }
    }

    pub fn insert<'t>(&self, tape: &'t Tape, diff: bool) -> ActorVars<'t> {
        match self {
            ActorParams::Logit(a) => ActorVars::Logit(a.insert(tape, diff)),
            ActorParams::Gru(net) => ActorVars::Gru(net.insert(tape, diff)),
        }
    }
}

impl ParamSet for ActorParams {
    fn fields(&self) -> Vec<(&'static str, &Tensor)> {
        match self {
            ActorParams::Logit(a) => a.fields(),
            ActorParams::Gru(n) => n.fields(),
        }
    }

    fn fields_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        match self {
            ActorParams::Logit(a) => a.fields_mut(),
            ActorParams::Gru(n) => n.fields_mut(),
        }
    }
}

/// An actor recorded on a tape. The hidden state is `None` for stateless
/// actors and threads through `step` for recurrent ones.
pub enum ActorVars<'t> {
    Logit(LogitVars<'t>),
    Gru(GruVars<'t>),
}

impl<'t> ActorVars<'t> {
    pub fn vars(&self) -> Vec<Var<'t>> {
        match self {
            ActorVars::Logit(v) => v.vars(),
            ActorVars::Gru(v) => v.vars(),
        }
    }

    pub fn initial_hidden(&self, tape: &'t Tape, batch: usize) -> Option<Var<'t>> {
        match self {
            ActorVars::Logit(_) => None,
            ActorVars::Gru(v) => Some(v.initial_hidden(tape, batch)),
        }
    }

    /// Log-probabilities `[B, A]` for a `[B, obs]` batch, plus the next
    /// hidden state.
    pub fn step(&self, tape: &'t Tape, obs: Var<'t>, hidden: Option<Var<'t>>) -> (Var<'t>, Option<Var<'t>>) {
        match self {
            ActorVars::Logit(v) => (v.step(obs, tape), None),
            ActorVars::Gru(v) => {
                let (logits, h) = v.step(obs, hidden.expect("recurrent actor needs a hidden state"));
                (logits.log_softmax(), Some(h))
            }
        }
    }
}

/// Log-probabilities of a valid distribution for one observation batch.
///
/// The distribution check is the caller's contract: `logsumexp(row) == 0`
/// within 1e-9 by construction of the log-softmax.
pub fn actor_log_probs<'t>(
    tape: &'t Tape,
    actor: &ActorParams,
    obs: &Tensor,
    hidden: Option<&Tensor>,
) -> Result<(Tensor, Option<Tensor>), AgentError> {
    if obs.cols() != actor.obs_dim() {
        return Err(AgentError::DimMismatch { expected: actor.obs_dim(), got: obs.cols() });
    }
    let vars = actor.insert(tape, false);
    let h = match (&vars, hidden) {
        (ActorVars::Gru(_), Some(h)) => Some(tape.constant(h.clone())),
        (ActorVars::Gru(v), None) => Some(v.initial_hidden(tape, obs.rows())),
        _ => None,
    };
    let (lp, h_next) = vars.step(tape, tape.constant(obs.clone()), h);
    Ok((lp.value(), h_next.map(|v| v.value())))
}

/// Q-values over actions for one observation batch through a GRU critic.
pub fn q_values<'t>(
    tape: &'t Tape,
    critic: &GruNet,
    obs: &Tensor,
    hidden: Option<&Tensor>,
) -> Result<(Tensor, Tensor), AgentError> {
    if obs.cols() != critic.obs_dim() {
        return Err(AgentError::DimMismatch { expected: critic.obs_dim(), got: obs.cols() });
    }
    let vars = critic.insert(tape, false);
    let h = match hidden {
        Some(h) => tape.constant(h.clone()),
        None => vars.initial_hidden(tape, obs.rows()),
    };
    let (q, h_next) = vars.step(tape.constant(obs.clone()), h);
    Ok((q.value(), h_next.value()))
}

/// Draw an action from the epsilon-mixed behavior policy
/// `(1 - eps) * pi + eps * uniform`.
pub fn sample_action(log_probs: &[f64], eps: f64, rng: &mut dyn RngCore) -> usize {
    debug_assert!((0.0..=1.0).contains(&eps));
    let n = log_probs.len();
    if eps > 0.0 && rng.gen_range(0.0..1.0) < eps {
        return rng.gen_range(0..n);
    }
    let u: f64 = rng.gen_range(0.0..1.0);
    let mut acc = 0.0;
    for (i, &lp) in log_probs.iter().enumerate() {
        acc += lp.exp();
        if u < acc {
            return i;
        }
    }
    n - 1
}

/// Probability of each action under the epsilon-mixed behavior policy.
pub fn behavior_probs(log_probs: &[f64], eps: f64) -> Vec<f64> {
    let n = log_probs.len() as f64;
    log_probs.iter().map(|&lp| (1.0 - eps) * lp.exp() + eps / n).collect()
}

/// State value from a critic's Q-vector and the policy's probabilities:
/// `V = sum_a pi(a) Q(a)`.
pub fn state_value(q: &[f64], probs: &[f64]) -> f64 {
    assert_eq!(q.len(), probs.len(), "state_value length mismatch");
    debug_assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-6, "probabilities must sum to 1");
    q.iter().zip(probs).map(|(qa, pa)| qa * pa).sum()
}

/// TD-0 advantages `A_t = r_t + gamma * V_{t+1} - V_t`.
///
/// `values` has length T + 1 with the beyond-horizon entry fixed at zero.
pub fn td0_advantage(rewards: &[f64], values: &[f64], gamma: f64) -> Vec<f64> {
    assert_eq!(values.len(), rewards.len() + 1, "need T + 1 values");
    rewards
        .iter()
        .enumerate()
        .map(|(t, &r)| r + gamma * values[t + 1] - values[t])
        .collect()
}

/// Summed Huber TD error of an online critic against a frozen target critic
/// over one batched trajectory seat.
///
/// `sum over t in [0, T-2] of mean_B Huber(r_t + gamma * Q_target(s_{t+1},
/// a_{t+1}) - Q(s_t, a_t))`; the target branch is built from constants so no
/// gradient reaches it. See [`huber_td_loss_anchored`] for the variant that
/// also fits the final step.
pub fn huber_td_loss<'t>(
    tape: &'t Tape,
    critic: &GruNet,
    target: &GruNet,
    obs: &[Tensor],
    actions: &[Vec<usize>],
    rewards: &[Vec<f64>],
    gamma: f64,
) -> Result<(Var<'t>, GruVars<'t>), AgentError> {
    huber_td_loss_impl(tape, critic, target, obs, actions, rewards, gamma, false)
}

/// [`huber_td_loss`] plus the terminal consistency term
/// `Huber(r_{T-1} - Q(s_{T-1}, a_{T-1}))`.
///
/// Without it a time-independent value function satisfies every interior
/// equation, so a recurrent critic on a short horizon settles on the
/// stationary (infinite-horizon) scale; anchoring the last step makes the
/// finite-horizon solution the unique fixed point.
pub fn huber_td_loss_anchored<'t>(
    tape: &'t Tape,
    critic: &GruNet,
    target: &GruNet,
    obs: &[Tensor],
    actions: &[Vec<usize>],
    rewards: &[Vec<f64>],
    gamma: f64,
) -> Result<(Var<'t>, GruVars<'t>), AgentError> {
    huber_td_loss_impl(tape, critic, target, obs, actions, rewards, gamma, true)
}

#[allow(clippy::too_many_arguments)]
fn huber_td_loss_impl<'t>(
    tape: &'t Tape,
    critic: &GruNet,
    target: &GruNet,
    obs: &[Tensor],
    actions: &[Vec<usize>],
    rewards: &[Vec<f64>],
    gamma: f64,
    anchor_terminal: bool,
) -> Result<(Var<'t>, GruVars<'t>), AgentError> {
    let steps = obs.len();
    if steps < 2 {
        return Err(AgentError::TooShort(steps));
    }
    let batch = obs[0].rows();

    // Frozen target pass: plain numbers, recorded as constants.
    let target_taken: Vec<Vec<f64>> = {
        let scratch = Tape::new();
        let tvars = target.insert(&scratch, false);
        let mut h = tvars.initial_hidden(&scratch, batch);
        let mut out = Vec::with_capacity(steps);
        for t in 0..steps {
            let (q, h_next) = tvars.step(scratch.constant(obs[t].clone()), h);
            h = h_next;
            let qv = q.value();
            out.push((0..batch).map(|e| qv.at2(e, actions[t][e])).collect());
        }
        out
    };

    let vars = critic.insert(tape, true);
    let mut h = vars.initial_hidden(tape, batch);
    let mut q_taken: Vec<Var<'t>> = Vec::with_capacity(steps);
    for t in 0..steps {
        let (q, h_next) = vars.step(tape.constant(obs[t].clone()), h);
        h = h_next;
        q_taken.push(q.take_per_row(&actions[t]));
    }

    let mut loss = tape.scalar(0.0);
    for t in 0..steps - 1 {
        let target_vals: Vec<f64> = (0..batch)
            .map(|e| rewards[t][e] + gamma * target_taken[t + 1][e])
            .collect();
        let target_node = tape.constant(Tensor::vector(target_vals));
        let residual = target_node - q_taken[t];
        loss = loss + residual.huber().mean();
    }
    if anchor_terminal {
        let target_node = tape.constant(Tensor::vector(rewards[steps - 1].clone()));
        let residual = target_node - q_taken[steps - 1];
        loss = loss + residual.huber().mean();
    }
    Ok((loss, vars))
}

/// `target <- decay * target + (1 - decay) * online`, field by field.
pub fn ema_update<P: ParamSet>(target: &mut P, online: &P, decay: f64) {
    let online_fields = online.fields();
    for ((_, t), (_, o)) in target.fields_mut().into_iter().zip(online_fields) {
        for (tv, ov) in t.data_mut().iter_mut().zip(o.data()) {
            *tv = decay * *tv + (1.0 - decay) * ov;
        }
    }
}

/// Shannon entropy `-sum_a p_a log p_a` of a log-probability vector.
pub fn policy_entropy(log_probs: &[f64]) -> f64 {
    -log_probs.iter().map(|&lp| lp.exp() * lp).sum::<f64>()
}
