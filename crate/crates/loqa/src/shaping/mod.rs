//! Opponent shaping losses.
//!
//! The core objects: a differentiable Monte-Carlo estimate of the opponent's
//! return (its forward value is the plain discounted return; magic-box
//! correction terms inject the policy-gradient credit in reverse mode), a
//! softmax-over-action-values model of the opponent's policy built from that
//! estimate, and the resulting actor losses. Enumeration oracles for small
//! tabular games live in [`oracle`].

pub mod oracle;

use crate::agents::ActorVars;
use crate::graphdiff::{magic_box, Tape, Tensor, Var};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ShapingError {
    #[error("step {t} out of range for a {steps}-step trajectory")]
    StepOutOfRange { t: usize, steps: usize },
    #[error("enumeration would produce {count} trajectories, above the cap {cap}")]
    EnumerationTooLarge { count: usize, cap: usize },
    #[error("{what}: expected length {expected}, got {got}")]
    LengthMismatch { what: &'static str, expected: usize, got: usize },
}

/// How the differentiable return spreads credit over the shaper's actions.
#[derive(Debug, Clone, Copy)]
pub struct DiceSpec {
    /// Reward discount.
    pub gamma: f64,
    /// Dependency (action) discount on the running log-prob sum.
    pub lambda: f64,
    /// Number of steps from `t` (inclusive) whose actions receive credit;
    /// `None` credits every remaining step.
    pub credit_window: Option<usize>,
    /// Close the truncated reward window with the opponent critic's value at
    /// the window edge. This keeps the return estimate on the critic's own
    /// scale, so the opponent model's normalization compares like with like
    /// even while the critic is still calibrating.
    pub bootstrap_tail: bool,
    /// Replace every magic-box factor with the constant 1. The forward value
    /// is unchanged by construction; this switch exists so tests can verify
    /// that exactly.
    pub boxes_as_ones: bool,
}

impl DiceSpec {
    pub fn loaded(gamma: f64, lambda: f64) -> Self {
        DiceSpec { gamma, lambda, credit_window: None, bootstrap_tail: false, boxes_as_ones: false }
    }

    pub fn n_step(gamma: f64, n: usize) -> Self {
        DiceSpec { gamma, lambda: 1.0, credit_window: Some(n), bootstrap_tail: true, boxes_as_ones: false }
    }
}

/// Differentiable estimate of the opponent's return from step `t`:
/// `sum_{k=t}^{T-1} gamma^(k-t) r_opp[k]` plus zero-forward correction terms.
///
/// Per step `k` in the credit window, with `w_k = lambda * w_{k-1} + l_k`
/// (the shaper's running discounted behavior log-prob sum, `w_{t-1} = 0`)
/// and `v_k = lambda * w_{k-1}`, the correction is
/// `gamma^(k-t) * credit[k] * (box(w_k) - box(v_k))` where `box` is the
/// magic-box operator. Every box evaluates to 1 forward, so the value equals
/// the raw return exactly, while the reverse pass receives
/// `sum_k gamma^(k-t) credit[k] * d l_k`.
///
/// `credit` is the advantage sequence weighting each step's correction; the
/// trainer passes the opponent's TD-0 advantages, oracle checks pass the
/// opponent's rewards-to-go.
pub fn differentiable_return<'t>(
    tape: &'t Tape,
    t: usize,
    opp_rewards: &[Vec<f64>],
    own_log_probs: &[Var<'t>],
    credit: &[Vec<f64>],
    tail: Option<&[f64]>,
    spec: &DiceSpec,
) -> Result<Var<'t>, ShapingError> {
    let steps = opp_rewards.len();
    if t >= steps {
        return Err(ShapingError::StepOutOfRange { t, steps });
    }
    if own_log_probs.len() != steps {
        return Err(ShapingError::LengthMismatch { what: "own_log_probs", expected: steps, got: own_log_probs.len() });
    }
    if credit.len() != steps {
        return Err(ShapingError::LengthMismatch { what: "credit", expected: steps, got: credit.len() });
    }
    let batch = opp_rewards[t].len();

    let window_end = match spec.credit_window {
        Some(n) => steps.min(t + n),
        None => steps,
    };
    // With a bootstrap tail the reward sum stops at the window edge and the
    // tail closes it; otherwise the sum runs to the horizon.
    let reward_end = if tail.is_some() { window_end } else { steps };
    let mut raw = vec![0.0; batch];
    for k in t..reward_end {
        let scale = spec.gamma.powi((k - t) as i32);
        for (acc, &r) in raw.iter_mut().zip(&opp_rewards[k]) {
            *acc += scale * r;
        }
    }
    if let Some(tail_vals) = tail {
        if tail_vals.len() != batch {
            return Err(ShapingError::LengthMismatch { what: "tail", expected: batch, got: tail_vals.len() });
        }
        let scale = spec.gamma.powi((reward_end - t) as i32);
        for (acc, &v) in raw.iter_mut().zip(tail_vals) {
            *acc += scale * v;
        }
    }
    let mut total = tape.constant(Tensor::vector(raw));
    let mut w_prev: Option<Var<'t>> = None;
    for k in t..window_end {
        let scaled_prev = w_prev.map(|w| w.mul_scalar(spec.lambda));
        let w = match scaled_prev {
            Some(sp) => sp + own_log_probs[k],
            None => own_log_probs[k],
        };
        let box_diff = if spec.boxes_as_ones {
            let ones = tape.constant(Tensor::full(&[batch], 1.0));
            ones - ones
        } else {
            let box_w = magic_box(w);
            let box_v = match scaled_prev {
                Some(sp) => magic_box(sp),
                // w_{t-1} = 0: box(0) is exactly 1.
                None => tape.constant(Tensor::full(&[batch], 1.0)),
            };
            box_w - box_v
        };
        let scale = spec.gamma.powi((k - t) as i32);
        let weights: Vec<f64> = credit[k].iter().map(|&a| scale * a).collect();
        let weight_node = tape.constant(Tensor::vector(weights));
        total = total + box_diff * weight_node;
        w_prev = Some(w);
    }
    Ok(total)
}

/// Log-probability the opponent-policy model assigns to the taken actions.
///
/// The model puts the differentiable return estimate in the taken action's
/// slot and the opponent critic's values everywhere else, then normalizes:
/// `log p = (q_hat - m) - log(exp(q_hat - m) + sum_{b != taken} exp(q[b] - m))`
/// with `m` the row max, so the exponentials never overflow. Only `q_hat`
/// carries gradient; the critic values are constants.
pub fn opponent_log_prob<'t>(
    tape: &'t Tape,
    q_hat: Var<'t>,
    critic_q: &Tensor,
    taken: &[usize],
) -> Var<'t> {
    let batch = critic_q.rows();
    let actions = critic_q.cols();
    assert_eq!(taken.len(), batch, "taken actions must match the batch");
    let q_hat_vals = q_hat.value();

    let mut max_shift = vec![0.0; batch];
    let mut denom_rest = vec![0.0; batch];
    for e in 0..batch {
        let mut m = q_hat_vals.data()[e];
        for b in 0..actions {
            if b != taken[e] {
                m = m.max(critic_q.at2(e, b));
            }
        }
        max_shift[e] = m;
        denom_rest[e] = (0..actions)
            .filter(|&b| b != taken[e])
            .map(|b| (critic_q.at2(e, b) - m).exp())
            .sum();
    }

    let shift = tape.constant(Tensor::vector(max_shift));
    let rest = tape.constant(Tensor::vector(denom_rest));
    let centered = q_hat - shift;
    centered - (centered.exp() + rest).log()
}

/// The full distribution implied by the opponent-policy model at one step:
/// the taken slot uses the return estimate's forward value, every other slot
/// the critic's value. Plain numbers, for diagnostics and tests.
pub fn implied_opponent_distribution(q_hat_value: f64, critic_q_row: &[f64], taken: usize) -> Vec<f64> {
    let mut logits: Vec<f64> = critic_q_row.to_vec();
    logits[taken] = q_hat_value;
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|&v| (v - m).exp()).sum();
    logits.into_iter().map(|v| (v - m).exp() / z).collect()
}

/// Everything the actor loss needs to know about scaling and regularization.
#[derive(Debug, Clone, Copy)]
pub struct ActorLossSpec {
    pub dice: DiceSpec,
    /// Exploration mix of the behavior policy; log-prob terms use the mixed
    /// distribution so the estimators stay consistent with sampling.
    pub epsilon: f64,
    pub entropy_beta: f64,
    /// With the shaping term removed the loss reduces to a standard
    /// advantage actor-critic loss.
    pub shaping: bool,
}

/// Scalar actor loss (phrased for minimization) plus component values.
pub struct ActorLossParts<'t> {
    /// `-(sum_t mean_B A_t * (log pi + log pi_hat)) - beta * entropy`
    pub total: Var<'t>,
    pub policy_term: f64,
    pub shaping_term: f64,
    pub entropy: f64,
}

/// A policy replayed over a trajectory: per step, the behavior log-prob of
/// the taken action (a `[B]` node) and the batch-mean entropy (a scalar
/// node).
pub struct ReplayedPolicy<'t> {
    pub behavior_log_probs: Vec<Var<'t>>,
    pub entropies: Vec<Var<'t>>,
}

/// Run an actor over recorded observations and taken actions, producing the
/// differentiable behavior log-probs `log((1 - eps) pi(a_t|s_t) + eps / A)`
/// and per-step entropies of the unmixed policy.
pub fn replay_policy<'t>(
    tape: &'t Tape,
    actor: &ActorVars<'t>,
    obs: &[Tensor],
    actions: &[Vec<usize>],
    epsilon: f64,
) -> ReplayedPolicy<'t> {
    let steps = obs.len();
    let batch = if steps > 0 { obs[0].rows() } else { 0 };
    let mut hidden = actor.initial_hidden(tape, batch);
    let mut behavior_log_probs = Vec::with_capacity(steps);
    let mut entropies = Vec::with_capacity(steps);
    for t in 0..steps {
        let (log_probs, h_next) = actor.step(tape, tape.constant(obs[t].clone()), hidden);
        hidden = h_next;
        let taken = log_probs.take_per_row(&actions[t]);
        let behavior = if epsilon > 0.0 {
            let n = log_probs.shape()[1] as f64;
            taken.exp().mul_scalar(1.0 - epsilon).add_scalar(epsilon / n).log()
        } else {
            taken
        };
        behavior_log_probs.push(behavior);
        let probs = log_probs.exp();
        entropies.push(-(probs * log_probs).sum_rows().mean());
    }
    ReplayedPolicy { behavior_log_probs, entropies }
}

/// Opponent-side inputs to the shaping term, all step-indexed.
pub struct ShapingInputs<'a> {
    /// Shaper advantages per step (outer loss weights).
    pub advantages: &'a [Vec<f64>],
    /// Opponent rewards per step (the return being made differentiable).
    pub opp_rewards: &'a [Vec<f64>],
    /// Opponent advantages per step (credit weights in the corrections).
    pub opp_advantages: &'a [Vec<f64>],
    /// Opponent critic rows `[B, A]` at the opponent's observations.
    pub opp_critic_q: &'a [Tensor],
    /// Opponent actions per step.
    pub opp_actions: &'a [Vec<usize>],
}

/// Advantage-weighted actor loss with the opponent-shaping term, built from
/// an already-replayed policy.
///
/// Ascends `sum_t mean_B A_t [log pi(a_t|s_t) + log pi_hat(b_t|s_t)] +
/// beta * H`; the returned node is the negation, ready for a descent step.
/// With `spec.shaping` off the second log term is dropped.
pub fn loqa_actor_loss_core<'t>(
    tape: &'t Tape,
    policy: &ReplayedPolicy<'t>,
    inputs: &ShapingInputs<'_>,
    spec: &ActorLossSpec,
) -> Result<ActorLossParts<'t>, ShapingError> {
    let steps = policy.behavior_log_probs.len();
    for (what, len) in [
        ("advantages", inputs.advantages.len()),
        ("opp_rewards", inputs.opp_rewards.len()),
        ("opp_advantages", inputs.opp_advantages.len()),
        ("opp_critic_q", inputs.opp_critic_q.len()),
        ("opp_actions", inputs.opp_actions.len()),
    ] {
        if len != steps {
            return Err(ShapingError::LengthMismatch { what, expected: steps, got: len });
        }
    }

    let mut policy_term = tape.scalar(0.0);
    for t in 0..steps {
        let adv = tape.constant(Tensor::vector(inputs.advantages[t].clone()));
        policy_term = policy_term + (policy.behavior_log_probs[t] * adv).mean();
    }

    let mut shaping_term = tape.scalar(0.0);
    if spec.shaping {
        for t in 0..steps {
            // The bootstrap tail closes the truncated window with the
            // opponent critic's value at its realized action there.
            let tail: Option<Vec<f64>> = match (spec.dice.bootstrap_tail, spec.dice.credit_window) {
                (true, Some(n)) if t + n < steps => {
                    let edge = t + n;
                    let q = &inputs.opp_critic_q[edge];
                    Some(
                        inputs.opp_actions[edge]
                            .iter()
                            .enumerate()
                            .map(|(e, &b)| q.at2(e, b))
                            .collect(),
                    )
                }
                _ => None,
            };
            let q_hat = differentiable_return(
                tape,
                t,
                inputs.opp_rewards,
                &policy.behavior_log_probs,
                inputs.opp_advantages,
                tail.as_deref(),
                &spec.dice,
            )?;
            let log_pi_hat = opponent_log_prob(tape, q_hat, &inputs.opp_critic_q[t], &inputs.opp_actions[t]);
            let adv = tape.constant(Tensor::vector(inputs.advantages[t].clone()));
            shaping_term = shaping_term + (log_pi_hat * adv).mean();
        }
    }

    let mut entropy_term = tape.scalar(0.0);
    for e in &policy.entropies {
        entropy_term = entropy_term + *e;
    }

    let ascent = policy_term + shaping_term + entropy_term.mul_scalar(spec.entropy_beta);
    Ok(ActorLossParts {
        total: -ascent,
        policy_term: policy_term.item(),
        shaping_term: shaping_term.item(),
        entropy: entropy_term.item(),
    })
}

/// [`loqa_actor_loss_core`] with the actor replay folded in.
pub fn loqa_actor_loss<'t>(
    tape: &'t Tape,
    actor: &ActorVars<'t>,
    obs: &[Tensor],
    actions: &[Vec<usize>],
    inputs: &ShapingInputs<'_>,
    spec: &ActorLossSpec,
) -> Result<ActorLossParts<'t>, ShapingError> {
    let policy = replay_policy(tape, actor, obs, actions, spec.epsilon);
    loqa_actor_loss_core(tape, &policy, inputs, spec)
}

/// The advantage actor-critic loss: the shaping term removed, nothing else
/// changed.
pub fn naive_actor_loss<'t>(
    tape: &'t Tape,
    actor: &ActorVars<'t>,
    obs: &[Tensor],
    actions: &[Vec<usize>],
    inputs: &ShapingInputs<'_>,
    spec: &ActorLossSpec,
) -> Result<ActorLossParts<'t>, ShapingError> {
    let naive = ActorLossSpec { shaping: false, ..*spec };
    loqa_actor_loss(tape, actor, obs, actions, inputs, &naive)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forward_value_is_plain_discounted_return_for_any_lambda() {
        for lambda in [0.0, 0.5, 0.9, 1.0] {
            let tape = Tape::new();
            let lp: Vec<Var> = (0..2).map(|_| tape.input(Tensor::vector(vec![-0.7]))).collect();
            let rewards = vec![vec![1.0], vec![1.0]];
            let credit = vec![vec![0.3], vec![-0.2]];
            let spec = DiceSpec { gamma: 0.5, lambda, credit_window: None, bootstrap_tail: false, boxes_as_ones: false };
            let q = differentiable_return(&tape, 0, &rewards, &lp, &credit, None, &spec).unwrap();
            assert_eq!(q.value().data()[0], 1.5, "lambda {lambda}");
        }
    }

    #[test]
    fn out_of_range_step_errors() {
        let tape = Tape::new();
        let lp = [tape.input(Tensor::vector(vec![-0.7]))];
        let rewards = vec![vec![1.0]];
        let credit = vec![vec![0.0]];
        let spec = DiceSpec::loaded(0.9, 1.0);
        assert!(matches!(
            differentiable_return(&tape, 1, &rewards, &lp, &credit, None, &spec),
            Err(ShapingError::StepOutOfRange { t: 1, steps: 1 })
        ));
    }

    #[test]
    fn lambda_zero_gradient_is_single_step_credit() {
        // With lambda = 0 each correction only touches its own step's
        // log-prob: dQ/dl_k = gamma^(k-t) credit_k. Hand expansion for T=2.
        let tape = Tape::new();
        let l0 = tape.input(Tensor::vector(vec![-0.3]));
        let l1 = tape.input(Tensor::vector(vec![-1.1]));
        let rewards = vec![vec![2.0], vec![-1.0]];
        let credit = vec![vec![0.7], vec![-0.4]];
        let gamma = 0.9;
        let spec = DiceSpec { gamma, lambda: 0.0, credit_window: None, bootstrap_tail: false, boxes_as_ones: false };
        let q = differentiable_return(&tape, 0, &rewards, &[l0, l1], &credit, None, &spec).unwrap();
        let grads = tape.backward(q.sum()).unwrap();
        let g0 = grads.get(l0).unwrap().data()[0];
        let g1 = grads.get(l1).unwrap().data()[0];
        assert!((g0 - 0.7).abs() < 1e-12);
        assert!((g1 - gamma * -0.4).abs() < 1e-12);
    }

    #[test]
    fn lambda_does_not_change_first_order_gradient() {
        // box(w_k) - box(w_k - l_k) contributes exactly d l_k at first
        // order, so lambda only matters beyond first order.
        let grad_for = |lambda: f64| {
            let tape = Tape::new();
            let l0 = tape.input(Tensor::vector(vec![-0.3]));
            let l1 = tape.input(Tensor::vector(vec![-1.1]));
            let l2 = tape.input(Tensor::vector(vec![-0.6]));
            let rewards = vec![vec![2.0], vec![-1.0], vec![0.5]];
            let credit = vec![vec![0.7], vec![-0.4], vec![1.2]];
            let spec = DiceSpec { gamma: 0.9, lambda, credit_window: None, bootstrap_tail: false, boxes_as_ones: false };
            let q = differentiable_return(&tape, 0, &rewards, &[l0, l1, l2], &credit, None, &spec).unwrap();
            let grads = tape.backward(q.sum()).unwrap();
            [l0, l1, l2].map(|l| grads.get(l).unwrap().data()[0])
        };
        let a = grad_for(0.0);
        let b = grad_for(0.9);
        for i in 0..3 {
            assert!((a[i] - b[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn credit_window_truncates_credit_not_value() {
        let tape = Tape::new();
        let lp: Vec<Var> = (0..4).map(|_| tape.input(Tensor::vector(vec![-0.5]))).collect();
        let rewards = vec![vec![1.0]; 4];
        let credit = vec![vec![1.0]; 4];
        let spec = DiceSpec::n_step(0.5, 2);
        let q = differentiable_return(&tape, 0, &rewards, &lp, &credit, None, &spec).unwrap();
        // full discounted value: 1 + 0.5 + 0.25 + 0.125
        assert!((q.value().data()[0] - 1.875).abs() < 1e-12);
        let grads = tape.backward(q.sum()).unwrap();
        assert!(grads.get(lp[0]).is_some());
        assert!(grads.get(lp[1]).is_some());
        assert!(grads.get(lp[2]).is_none(), "outside the 2-step credit window");
        assert!(grads.get(lp[3]).is_none());
    }

    #[test]
    fn opponent_model_binary_symmetric_case() {
        let tape = Tape::new();
        let q_hat = tape.input(Tensor::vector(vec![0.0]));
        let critic = Tensor::matrix(1, 2, vec![0.0, 0.0]);
        let lp = opponent_log_prob(&tape, q_hat, &critic, &[0]);
        assert!((lp.value().data()[0].exp() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn opponent_model_two_vs_zero() {
        let tape = Tape::new();
        let q_hat = tape.input(Tensor::vector(vec![2.0]));
        let critic = Tensor::matrix(1, 2, vec![999.0, 0.0]); // taken slot ignored
        let lp = opponent_log_prob(&tape, q_hat, &critic, &[0]);
        let expect = (2.0f64.exp() / (2.0f64.exp() + 1.0)).ln();
        assert!((lp.value().data()[0] - expect).abs() < 1e-12);
        assert!((lp.value().data()[0].exp() - 0.88080).abs() < 1e-5);
    }

    #[test]
    fn matching_critic_reduces_to_softmax() {
        // If the return estimate equals the critic's own value the model is
        // exactly the softmax of the critic's row.
        let row = [0.4, -1.2, 0.9, 0.1];
        let taken = 2;
        let tape = Tape::new();
        let q_hat = tape.input(Tensor::vector(vec![row[taken]]));
        let critic = Tensor::matrix(1, 4, row.to_vec());
        let lp = opponent_log_prob(&tape, q_hat, &critic, &[taken]);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
        let expect = ((row[taken] - m).exp() / z).ln();
        assert!((lp.value().data()[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn implied_distribution_normalizes() {
        let probs = implied_opponent_distribution(1.7, &[0.2, -0.4, 0.9], 1);
        assert!((probs.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        // huge estimates stay finite through the shift
        let probs = implied_opponent_distribution(1000.0, &[0.2, -0.4, 0.9], 0);
        assert!(probs.iter().all(|p| p.is_finite()));
        assert!((probs.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
    }
}
