//! Exact-enumeration oracles over small tabular games.
//!
//! Everything here computes expectations by visiting every trajectory (or by
//! dynamic programming), with score functions written in closed form; none
//! of it touches the reverse-mode tape, so it can sit on the other side of
//! estimator-equivalence checks.

use super::ShapingError;
use crate::graphdiff::{Tape, Tensor, Var};
use rand::{Rng, RngCore};

pub const ENUMERATION_CAP: usize = 10_000;

/// A finite two-player Markov game, fully tabulated.
#[derive(Debug, Clone)]
pub struct TabularGame {
    pub states: usize,
    pub actions: usize,
    pub horizon: usize,
    pub gamma: f64,
    /// Initial state distribution.
    pub initial: Vec<f64>,
    /// `transition[s][a][b]` is a distribution over next states.
    pub transition: Vec<Vec<Vec<Vec<f64>>>>,
    /// `rewards*[s][a][b]`
    pub rewards1: Vec<Vec<Vec<f64>>>,
    pub rewards2: Vec<Vec<Vec<f64>>>,
}

/// Tabular softmax policy with an optional uniform exploration mix.
#[derive(Debug, Clone)]
pub struct TabularPolicy {
    /// `[S, A]` logits.
    pub theta: Tensor,
    pub epsilon: f64,
}

impl TabularPolicy {
    pub fn new(states: usize, actions: usize) -> Self {
        TabularPolicy { theta: Tensor::zeros(&[states, actions]), epsilon: 0.0 }
    }

    pub fn states(&self) -> usize {
        self.theta.rows()
    }

    pub fn actions(&self) -> usize {
        self.theta.cols()
    }

    /// Unmixed softmax probabilities in state `s`.
    pub fn raw_probs(&self, s: usize) -> Vec<f64> {
        let a = self.actions();
        let row: Vec<f64> = (0..a).map(|j| self.theta.at2(s, j)).collect();
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|&v| (v - m).exp()).sum();
        row.into_iter().map(|v| (v - m).exp() / z).collect()
    }

    /// Behavior probabilities: `(1 - eps) * softmax + eps / A`.
    pub fn probs(&self, s: usize) -> Vec<f64> {
        let a = self.actions() as f64;
        self.raw_probs(s).into_iter().map(|p| (1.0 - self.epsilon) * p + self.epsilon / a).collect()
    }

    pub fn log_prob(&self, s: usize, action: usize) -> f64 {
        self.probs(s)[action].ln()
    }

    /// Closed-form score `d log pi_eps(action | s) / d theta`, flattened
    /// `[S * A]` row-major.
    pub fn score(&self, s: usize, action: usize) -> Vec<f64> {
        let a = self.actions();
        let raw = self.raw_probs(s);
        let mixed = (1.0 - self.epsilon) * raw[action] + self.epsilon / a as f64;
        let mut out = vec![0.0; self.states() * a];
        for j in 0..a {
            let delta = if j == action { 1.0 } else { 0.0 };
            let d_raw = raw[action] * (delta - raw[j]);
            out[s * a + j] = (1.0 - self.epsilon) * d_raw / mixed;
        }
        out
    }
}

/// One fully specified trajectory with its probability under the measure it
/// was enumerated from.
#[derive(Debug, Clone)]
pub struct WeightedTrajectory {
    pub prob: f64,
    pub states: Vec<usize>,
    pub actions1: Vec<usize>,
    pub actions2: Vec<usize>,
    pub rewards1: Vec<f64>,
    pub rewards2: Vec<f64>,
}

impl WeightedTrajectory {
    pub fn discounted_return2(&self, gamma: f64) -> f64 {
        self.rewards2.iter().enumerate().map(|(k, r)| gamma.powi(k as i32) * r).sum()
    }

    pub fn discounted_return1(&self, gamma: f64) -> f64 {
        self.rewards1.iter().enumerate().map(|(k, r)| gamma.powi(k as i32) * r).sum()
    }
}

/// Where enumeration starts.
#[derive(Debug, Clone, Copy)]
pub enum Start {
    /// From the initial state distribution, both policies free.
    Initial,
    /// From a fixed state with the opponent's first action pinned; the
    /// pinned action contributes no probability factor (it is conditioned
    /// on, matching an action-value target).
    Conditioned { state: usize, opponent_action: usize },
}

/// Every positive-probability trajectory of the game, with exact
/// probabilities. Errors above [`ENUMERATION_CAP`].
pub fn enumerate_trajectories(
    game: &TabularGame,
    p1: &TabularPolicy,
    p2: &TabularPolicy,
    start: Start,
) -> Result<Vec<WeightedTrajectory>, ShapingError> {
    struct Dfs<'g> {
        game: &'g TabularGame,
        p1: &'g TabularPolicy,
        p2: &'g TabularPolicy,
        out: Vec<WeightedTrajectory>,
        pinned_b0: Option<usize>,
    }
    impl Dfs<'_> {
        fn run(
            &mut self,
            t: usize,
            s: usize,
            prob: f64,
            partial: &mut WeightedTrajectory,
        ) -> Result<(), ShapingError> {
            if t == self.game.horizon {
                if self.out.len() >= ENUMERATION_CAP {
                    return Err(ShapingError::EnumerationTooLarge {
                        count: self.out.len() + 1,
                        cap: ENUMERATION_CAP,
                    });
                }
                let mut done = partial.clone();
                done.prob = prob;
                self.out.push(done);
                return Ok(());
            }
            let pa = self.p1.probs(s);
            let pb = self.p2.probs(s);
            for a in 0..self.game.actions {
                if pa[a] == 0.0 {
                    continue;
                }
                let b_iter: Vec<(usize, f64)> = match (t, self.pinned_b0) {
                    (0, Some(b0)) => vec![(b0, 1.0)],
                    _ => (0..self.game.actions).map(|b| (b, pb[b])).collect(),
                };
                for (b, b_prob) in b_iter {
                    if b_prob == 0.0 {
                        continue;
                    }
                    let branch = prob * pa[a] * b_prob;
                    partial.states.push(s);
                    partial.actions1.push(a);
                    partial.actions2.push(b);
                    partial.rewards1.push(self.game.rewards1[s][a][b]);
                    partial.rewards2.push(self.game.rewards2[s][a][b]);
                    if t + 1 == self.game.horizon {
                        self.run(t + 1, s, branch, partial)?;
                    } else {
                        for (s_next, &p_next) in self.game.transition[s][a][b].iter().enumerate() {
                            if p_next > 0.0 {
                                self.run(t + 1, s_next, branch * p_next, partial)?;
                            }
                        }
                    }
                    partial.states.pop();
                    partial.actions1.pop();
                    partial.actions2.pop();
                    partial.rewards1.pop();
                    partial.rewards2.pop();
                }
            }
            Ok(())
        }
    }

    let mut dfs = Dfs {
        game,
        p1,
        p2,
        out: Vec::new(),
        pinned_b0: match start {
            Start::Conditioned { opponent_action, .. } => Some(opponent_action),
            Start::Initial => None,
        },
    };
    let mut partial = WeightedTrajectory {
        prob: 0.0,
        states: Vec::new(),
        actions1: Vec::new(),
        actions2: Vec::new(),
        rewards1: Vec::new(),
        rewards2: Vec::new(),
    };
    match start {
        Start::Initial => {
            for (s0, &p0) in game.initial.iter().enumerate() {
                if p0 > 0.0 {
                    dfs.run(0, s0, p0, &mut partial)?;
                }
            }
        }
        Start::Conditioned { state, .. } => dfs.run(0, state, 1.0, &mut partial)?,
    }
    Ok(dfs.out)
}

/// Draw one trajectory by simulation under the behavior policies.
pub fn sample_trajectory(
    game: &TabularGame,
    p1: &TabularPolicy,
    p2: &TabularPolicy,
    start: Start,
    rng: &mut dyn RngCore,
) -> WeightedTrajectory {
    let draw = |dist: &[f64], rng: &mut dyn RngCore| -> usize {
        let u: f64 = rng.gen_range(0.0..1.0);
        let mut acc = 0.0;
        for (i, &p) in dist.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        dist.len() - 1
    };
    let (mut s, pinned) = match start {
        Start::Initial => (draw(&game.initial, rng), None),
        Start::Conditioned { state, opponent_action } => (state, Some(opponent_action)),
    };
    let mut traj = WeightedTrajectory {
        prob: 1.0,
        states: Vec::new(),
        actions1: Vec::new(),
        actions2: Vec::new(),
        rewards1: Vec::new(),
        rewards2: Vec::new(),
    };
    for t in 0..game.horizon {
        let a = draw(&p1.probs(s), rng);
        let b = match (t, pinned) {
            (0, Some(b0)) => b0,
            _ => draw(&p2.probs(s), rng),
        };
        traj.states.push(s);
        traj.actions1.push(a);
        traj.actions2.push(b);
        traj.rewards1.push(game.rewards1[s][a][b]);
        traj.rewards2.push(game.rewards2[s][a][b]);
        if t + 1 < game.horizon {
            s = draw(&game.transition[s][a][b], rng);
        }
    }
    traj
}

/// Time-indexed exact values under the behavior policies: `v*[t][s]` with
/// `v[T] = 0`, and `q1[t][s][a]` / `q2[t][s][b]` marginalized over the other
/// agent's policy.
#[derive(Debug, Clone)]
pub struct ValueTables {
    pub v1: Vec<Vec<f64>>,
    pub v2: Vec<Vec<f64>>,
    pub q1: Vec<Vec<Vec<f64>>>,
    pub q2: Vec<Vec<Vec<f64>>>,
}

pub fn exact_values(game: &TabularGame, p1: &TabularPolicy, p2: &TabularPolicy) -> ValueTables {
    let (t_max, s_n, a_n) = (game.horizon, game.states, game.actions);
    let mut v1 = vec![vec![0.0; s_n]; t_max + 1];
    let mut v2 = vec![vec![0.0; s_n]; t_max + 1];
    let mut q1 = vec![vec![vec![0.0; a_n]; s_n]; t_max];
    let mut q2 = vec![vec![vec![0.0; a_n]; s_n]; t_max];
    for t in (0..t_max).rev() {
        for s in 0..s_n {
            let pa = p1.probs(s);
            let pb = p2.probs(s);
            for a in 0..a_n {
                let mut acc1 = 0.0;
                for b in 0..a_n {
                    let cont: f64 = if t + 1 < t_max {
                        game.transition[s][a][b]
                            .iter()
                            .enumerate()
                            .map(|(sn, &p)| p * v1[t + 1][sn])
                            .sum()
                    } else {
                        0.0
                    };
                    acc1 += pb[b] * (game.rewards1[s][a][b] + game.gamma * cont);
                }
                q1[t][s][a] = acc1;
            }
            for b in 0..a_n {
                let mut acc2 = 0.0;
                for a in 0..a_n {
                    let cont: f64 = if t + 1 < t_max {
                        game.transition[s][a][b]
                            .iter()
                            .enumerate()
                            .map(|(sn, &p)| p * v2[t + 1][sn])
                            .sum()
                    } else {
                        0.0
                    };
                    acc2 += pa[a] * (game.rewards2[s][a][b] + game.gamma * cont);
                }
                q2[t][s][b] = acc2;
            }
            v1[t][s] = (0..a_n).map(|a| pa[a] * q1[t][s][a]).sum();
            v2[t][s] = (0..a_n).map(|b| pb[b] * q2[t][s][b]).sum();
        }
    }
    ValueTables { v1, v2, q1, q2 }
}

/// Exact score-function gradients: the opponent-return action-value gradient
/// w.r.t. the agent's logits, and the agent's value gradient w.r.t. the
/// opponent's logits.
#[derive(Debug, Clone)]
pub struct OracleGradients {
    /// `d Q2(s0, b0) / d theta1`, shape `[S, A]`.
    pub q2_wrt_theta1: Tensor,
    /// `d V1 / d theta2`, shape `[S, A]`.
    pub v1_wrt_theta2: Tensor,
}

/// Probability-weighted REINFORCE sums over every trajectory.
pub fn reinforce_oracle(
    game: &TabularGame,
    p1: &TabularPolicy,
    p2: &TabularPolicy,
    s0: usize,
    b0: usize,
) -> Result<OracleGradients, ShapingError> {
    let dims = [p1.states(), p1.actions()];
    let mut dq2 = vec![0.0; dims[0] * dims[1]];
    let conditioned = enumerate_trajectories(game, p1, p2, Start::Conditioned { state: s0, opponent_action: b0 })?;
    for traj in &conditioned {
        let ret2 = traj.discounted_return2(game.gamma);
        let mut score_sum = vec![0.0; dims[0] * dims[1]];
        for (t, (&s, &a)) in traj.states.iter().zip(&traj.actions1).enumerate() {
            let _ = t;
            for (i, v) in p1.score(s, a).into_iter().enumerate() {
                score_sum[i] += v;
            }
        }
        for (acc, sc) in dq2.iter_mut().zip(&score_sum) {
            *acc += traj.prob * ret2 * sc;
        }
    }

    let mut dv1 = vec![0.0; dims[0] * dims[1]];
    let full = enumerate_trajectories(game, p1, p2, Start::Initial)?;
    for traj in &full {
        let ret1 = traj.discounted_return1(game.gamma);
        let mut score_sum = vec![0.0; dims[0] * dims[1]];
        for (&s, &b) in traj.states.iter().zip(&traj.actions2) {
            for (i, v) in p2.score(s, b).into_iter().enumerate() {
                score_sum[i] += v;
            }
        }
        for (acc, sc) in dv1.iter_mut().zip(&score_sum) {
            *acc += traj.prob * ret1 * sc;
        }
    }

    Ok(OracleGradients {
        q2_wrt_theta1: Tensor::matrix(dims[0], dims[1], dq2),
        v1_wrt_theta2: Tensor::matrix(dims[0], dims[1], dv1),
    })
}

/// Discounted rewards-to-go `G_k = sum_{k' >= k} gamma^(k'-k) r_{k'}`.
pub fn rewards_to_go(gamma: f64, rewards: &[f64]) -> Vec<f64> {
    let mut out = rewards.to_vec();
    for k in (0..out.len().saturating_sub(1)).rev() {
        out[k] += gamma * out[k + 1];
    }
    out
}

/// TD-0 advantages for one trajectory from exact value tables.
pub fn td0_from_tables(
    game: &TabularGame,
    values: &[Vec<f64>],
    traj: &WeightedTrajectory,
    rewards: &[f64],
) -> Vec<f64> {
    (0..game.horizon)
        .map(|t| {
            let v_now = values[t][traj.states[t]];
            let v_next = if t + 1 < game.horizon { values[t + 1][traj.states[t + 1]] } else { 0.0 };
            rewards[t] + game.gamma * v_next - v_now
        })
        .collect()
}

/// Column-major batch assembly of enumerated or sampled trajectories, in the
/// shapes the loss builders expect.
pub struct TabularBatch {
    pub probs: Vec<f64>,
    /// Per step, `[B, S]` one-hot state observations.
    pub obs: Vec<Tensor>,
    pub states: Vec<Vec<usize>>,
    pub actions1: Vec<Vec<usize>>,
    pub actions2: Vec<Vec<usize>>,
    pub rewards1: Vec<Vec<f64>>,
    pub rewards2: Vec<Vec<f64>>,
}

pub fn batch_of(game: &TabularGame, trajs: &[WeightedTrajectory]) -> TabularBatch {
    let batch = trajs.len();
    let steps = game.horizon;
    let mut out = TabularBatch {
        probs: trajs.iter().map(|t| t.prob).collect(),
        obs: Vec::with_capacity(steps),
        states: Vec::with_capacity(steps),
        actions1: Vec::with_capacity(steps),
        actions2: Vec::with_capacity(steps),
        rewards1: Vec::with_capacity(steps),
        rewards2: Vec::with_capacity(steps),
    };
    for t in 0..steps {
        let mut one_hot = vec![0.0; batch * game.states];
        for (e, traj) in trajs.iter().enumerate() {
            one_hot[e * game.states + traj.states[t]] = 1.0;
        }
        out.obs.push(Tensor::matrix(batch, game.states, one_hot));
        out.states.push(trajs.iter().map(|tr| tr.states[t]).collect());
        out.actions1.push(trajs.iter().map(|tr| tr.actions1[t]).collect());
        out.actions2.push(trajs.iter().map(|tr| tr.actions2[t]).collect());
        out.rewards1.push(trajs.iter().map(|tr| tr.rewards1[t]).collect());
        out.rewards2.push(trajs.iter().map(|tr| tr.rewards2[t]).collect());
    }
    out
}

/// Behavior log-probs of the taken actions per step for a tabular policy
/// recorded on a tape, matching the mixing used by [`TabularPolicy::probs`].
pub fn tabular_behavior_log_probs<'t>(
    tape: &'t Tape,
    theta: Var<'t>,
    obs: &[Tensor],
    actions: &[Vec<usize>],
    epsilon: f64,
) -> Vec<Var<'t>> {
    let n_actions = theta.shape()[1] as f64;
    obs.iter()
        .zip(actions)
        .map(|(o, acts)| {
            let logits = tape.constant(o.clone()).matmul(theta);
            let taken = logits.log_softmax().take_per_row(acts);
            if epsilon > 0.0 {
                taken.exp().mul_scalar(1.0 - epsilon).add_scalar(epsilon / n_actions).log()
            } else {
                taken
            }
        })
        .collect()
}

/// Full tabular-policy replay: behavior log-probs plus per-step entropies,
/// for driving the actor losses on enumerated batches.
pub fn tabular_replay<'t>(
    tape: &'t Tape,
    theta: Var<'t>,
    obs: &[Tensor],
    actions: &[Vec<usize>],
    epsilon: f64,
) -> super::ReplayedPolicy<'t> {
    let behavior_log_probs = tabular_behavior_log_probs(tape, theta, obs, actions, epsilon);
    let entropies = obs
        .iter()
        .map(|o| {
            let lp = tape.constant(o.clone()).matmul(theta).log_softmax();
            -(lp.exp() * lp).sum_rows().mean()
        })
        .collect();
    super::ReplayedPolicy { behavior_log_probs, entropies }
}

/// Test-fixture games.
pub mod fixtures {
    use super::TabularGame;

    /// One-state, one-step matrix game with the classic social-dilemma
    /// payoffs: mutual cooperation (-1, -1), unilateral defection (0, -3),
    /// mutual defection (-2, -2). Action 0 cooperates.
    pub fn dilemma_matrix_game() -> TabularGame {
        TabularGame {
            states: 1,
            actions: 2,
            horizon: 1,
            gamma: 1.0,
            initial: vec![1.0],
            transition: vec![vec![vec![vec![1.0]; 2]; 2]],
            rewards1: vec![vec![vec![-1.0, -3.0], vec![0.0, -2.0]]],
            rewards2: vec![vec![vec![-1.0, 0.0], vec![-3.0, -2.0]]],
        }
    }

    /// Two states, two actions, stochastic transitions, distinct rewards;
    /// the workhorse for estimator-equivalence checks.
    pub fn two_state_game(horizon: usize) -> TabularGame {
        // transition[s][a][b]: probability of landing in state 0.
        let to0 = |p0: f64| vec![p0, 1.0 - p0];
        TabularGame {
            states: 2,
            actions: 2,
            horizon,
            gamma: 0.9,
            initial: vec![0.6, 0.4],
            transition: vec![
                vec![
                    vec![to0(0.8), to0(0.3)],
                    vec![to0(0.5), to0(0.1)],
                ],
                vec![
                    vec![to0(0.2), to0(0.9)],
                    vec![to0(0.6), to0(0.4)],
                ],
            ],
            rewards1: vec![
                vec![vec![-1.0, -3.0], vec![0.0, -2.0]],
                vec![vec![0.5, -0.5], vec![1.0, -1.5]],
            ],
            rewards2: vec![
                vec![vec![-1.0, 0.0], vec![-3.0, -2.0]],
                vec![vec![0.25, 1.0], vec![-0.75, -1.25]],
            ],
        }
    }

    /// Deterministic two-step chain used for variance comparisons.
    pub fn chain_game() -> TabularGame {
        TabularGame {
            states: 2,
            actions: 2,
            horizon: 2,
            gamma: 0.9,
            initial: vec![1.0, 0.0],
            transition: vec![
                vec![vec![vec![0.0, 1.0], vec![0.0, 1.0]], vec![vec![1.0, 0.0], vec![0.0, 1.0]]],
                vec![vec![vec![0.0, 1.0], vec![1.0, 0.0]], vec![vec![1.0, 0.0], vec![0.0, 1.0]]],
            ],
            rewards1: vec![
                vec![vec![-1.0, -3.0], vec![0.0, -2.0]],
                vec![vec![1.0, 0.0], vec![-1.0, 2.0]],
            ],
            rewards2: vec![
                vec![vec![-1.0, 0.0], vec![-3.0, -2.0]],
                vec![vec![0.0, 1.5], vec![0.5, -2.0]],
            ],
        }
    }
}
