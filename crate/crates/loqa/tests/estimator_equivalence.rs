//! Exact-expectation checks of the differentiable-return and actor-loss
//! gradients against enumeration oracles with closed-form scores.

use loqa::graphdiff::{Tape, Tensor};
use loqa::rng;
use loqa::shaping::oracle::{
    batch_of, enumerate_trajectories, exact_values, fixtures, reinforce_oracle, rewards_to_go,
    sample_trajectory, tabular_behavior_log_probs, tabular_replay, Start, TabularBatch,
    TabularGame, TabularPolicy,
};
use loqa::shaping::{
    differentiable_return, implied_opponent_distribution, loqa_actor_loss_core, ActorLossSpec,
    DiceSpec, ShapingInputs,
};

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs() + 1e-12)
}

fn max_rel(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(&x, &y)| rel_err(x, y)).fold(0.0, f64::max)
}

fn policy(theta: &[[f64; 2]], epsilon: f64) -> TabularPolicy {
    let s = theta.len();
    let data: Vec<f64> = theta.iter().flat_map(|row| row.iter().copied()).collect();
    TabularPolicy { theta: Tensor::matrix(s, 2, data), epsilon }
}

/// Per-episode discounted rewards-to-go over a `[T][B]` reward table.
fn to_go_columns(gamma: f64, rewards: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let steps = rewards.len();
    let batch = rewards[0].len();
    let mut out = rewards.to_vec();
    for e in 0..batch {
        let col: Vec<f64> = (0..steps).map(|t| rewards[t][e]).collect();
        let gg = rewards_to_go(gamma, &col);
        for t in 0..steps {
            out[t][e] = gg[t];
        }
    }
    out
}

/// TD-0 advantages per step and episode from an exact value table.
fn td0_columns(game: &TabularGame, values: &[Vec<f64>], batch: &TabularBatch, rewards: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let steps = game.horizon;
    let b = batch.probs.len();
    let mut out = vec![vec![0.0; b]; steps];
    for e in 0..b {
        for t in 0..steps {
            let v_now = values[t][batch.states[t][e]];
            let v_next = if t + 1 < steps { values[t + 1][batch.states[t + 1][e]] } else { 0.0 };
            out[t][e] = rewards[t][e] + game.gamma * v_next - v_now;
        }
    }
    out
}

/// Opponent critic rows `[B, A]` for each step from the exact Q table.
fn critic_rows(game: &TabularGame, q: &[Vec<Vec<f64>>], batch: &TabularBatch) -> Vec<Tensor> {
    let b = batch.probs.len();
    (0..game.horizon)
        .map(|t| {
            let mut data = Vec::with_capacity(b * game.actions);
            for e in 0..b {
                data.extend_from_slice(&q[t][batch.states[t][e]]);
            }
            Tensor::matrix(b, game.actions, data)
        })
        .collect()
}

/// Expectation of the differentiable-return gradient over every conditioned
/// trajectory, by probability-weighted tape backward.
fn expected_diff_return_grad(
    game: &TabularGame,
    p1: &TabularPolicy,
    p2: &TabularPolicy,
    s0: usize,
    b0: usize,
    spec: &DiceSpec,
    credit_mode: CreditMode,
) -> Tensor {
    let trajs = enumerate_trajectories(game, p1, p2, Start::Conditioned { state: s0, opponent_action: b0 }).unwrap();
    let batch = batch_of(game, &trajs);
    let credit = match credit_mode {
        CreditMode::RewardsToGo => to_go_columns(game.gamma, &batch.rewards2),
        CreditMode::ExactTd0 => {
            let tables = exact_values(game, p1, p2);
            td0_columns(game, &tables.v2, &batch, &batch.rewards2)
        }
    };

    let tape = Tape::new();
    let theta = tape.input(p1.theta.clone());
    let log_probs = tabular_behavior_log_probs(&tape, theta, &batch.obs, &batch.actions1, p1.epsilon);
    let q_hat = differentiable_return(&tape, 0, &batch.rewards2, &log_probs, &credit, None, spec).unwrap();
    let weights = tape.constant(Tensor::vector(batch.probs.clone()));
    let expectation = (q_hat * weights).sum();
    let grads = tape.backward(expectation).unwrap();
    grads.get_or_zeros(theta, p1.theta.shape())
}

enum CreditMode {
    RewardsToGo,
    ExactTd0,
}

#[test]
fn diff_return_expectation_equals_reinforce_oracle() {
    let game = fixtures::two_state_game(3);
    let p1 = policy(&[[0.3, -0.2], [0.1, 0.4]], 0.0);
    let p2 = policy(&[[-0.1, 0.25], [0.2, -0.3]], 0.0);
    let (s0, b0) = (0, 1);

    let oracle = reinforce_oracle(&game, &p1, &p2, s0, b0).unwrap().q2_wrt_theta1;
    let spec = DiceSpec::loaded(game.gamma, 1.0);
    let est = expected_diff_return_grad(&game, &p1, &p2, s0, b0, &spec, CreditMode::RewardsToGo);
    let err = max_rel(&est, &oracle);
    assert!(err <= 1e-6, "rewards-to-go credit: rel err {err}");

    let est_td0 = expected_diff_return_grad(&game, &p1, &p2, s0, b0, &spec, CreditMode::ExactTd0);
    let err = max_rel(&est_td0, &oracle);
    assert!(err <= 1e-6, "exact TD-0 credit: rel err {err}");
}

#[test]
fn diff_return_expectation_with_exploration_mix() {
    // With eps > 0 both the sampling measure and the scores use the mixed
    // behavior policy; the identity must still hold exactly.
    let game = fixtures::two_state_game(3);
    let p1 = policy(&[[0.5, -0.4], [-0.2, 0.3]], 0.2);
    let p2 = policy(&[[0.0, 0.1], [0.4, -0.1]], 0.2);
    let oracle = reinforce_oracle(&game, &p1, &p2, 1, 0).unwrap().q2_wrt_theta1;
    let spec = DiceSpec::loaded(game.gamma, 1.0);
    let est = expected_diff_return_grad(&game, &p1, &p2, 1, 0, &spec, CreditMode::RewardsToGo);
    let err = max_rel(&est, &oracle);
    assert!(err <= 1e-6, "rel err {err}");
}

#[test]
fn lambda_and_window_do_not_bias_the_expectation() {
    // First-order credit is per-step regardless of lambda; the window only
    // truncates which steps receive it. With full window the expectation is
    // invariant to lambda.
    let game = fixtures::two_state_game(2);
    let p1 = policy(&[[0.2, -0.1], [-0.3, 0.2]], 0.0);
    let p2 = policy(&[[0.1, 0.1], [0.0, -0.2]], 0.0);
    let base = expected_diff_return_grad(
        &game, &p1, &p2, 0, 0,
        &DiceSpec::loaded(game.gamma, 1.0),
        CreditMode::RewardsToGo,
    );
    for lambda in [0.0, 0.5, 0.9] {
        let est = expected_diff_return_grad(
            &game, &p1, &p2, 0, 0,
            &DiceSpec::loaded(game.gamma, lambda),
            CreditMode::RewardsToGo,
        );
        let err = max_rel(&est, &base);
        assert!(err <= 1e-9, "lambda {lambda}: rel err {err}");
    }
}

#[test]
fn reinforce_oracle_matches_closed_form_matrix_game() {
    // One step: V1 = sum_{a,b} pi1(a) pi2(b) r1(a,b); differentiate the
    // opponent's softmax directly.
    let game = fixtures::dilemma_matrix_game();
    let p1 = policy(&[[0.4, -0.1]], 0.0);
    let p2 = policy(&[[-0.3, 0.2]], 0.0);
    let oracle = reinforce_oracle(&game, &p1, &p2, 0, 0).unwrap();

    let pa = p1.probs(0);
    let pb = p2.raw_probs(0);
    let mut expect = [0.0f64; 2];
    for j in 0..2 {
        for (b, &pbv) in pb.iter().enumerate() {
            let delta = if b == j { 1.0 } else { 0.0 };
            let dpb = pbv * (delta - pb[j]);
            for (a, &pav) in pa.iter().enumerate() {
                expect[j] += pav * dpb * game.rewards1[0][a][b];
            }
        }
    }
    for j in 0..2 {
        assert!(rel_err(oracle.v1_wrt_theta2.data()[j], expect[j]) <= 1e-12);
    }
}

#[test]
fn oracle_gradient_zero_when_opponent_cannot_influence() {
    // Rewards and transitions ignore the opponent's action, so theta2 has no
    // effect on V1.
    let mut game = fixtures::two_state_game(2);
    for s in 0..2 {
        for a in 0..2 {
            game.rewards1[s][a][1] = game.rewards1[s][a][0];
            game.transition[s][a][1] = game.transition[s][a][0].clone();
        }
    }
    let p1 = policy(&[[0.2, -0.2], [0.1, 0.3]], 0.0);
    let p2 = policy(&[[0.4, -0.5], [-0.1, 0.2]], 0.0);
    let oracle = reinforce_oracle(&game, &p1, &p2, 0, 0).unwrap();
    for &g in oracle.v1_wrt_theta2.data() {
        assert!(g.abs() < 1e-12, "got {g}");
    }
}

#[test]
fn monte_carlo_reinforce_mean_within_3_sigma_of_oracle() {
    let game = fixtures::dilemma_matrix_game();
    let p1 = policy(&[[0.3, -0.3]], 0.0);
    let p2 = policy(&[[0.1, 0.0]], 0.0);
    let (s0, b0) = (0, 0);
    let oracle = reinforce_oracle(&game, &p1, &p2, s0, b0).unwrap().q2_wrt_theta1;

    let n = 1_000_000usize;
    let mut rng = rng::stream(97, rng::DOMAIN_ROLLOUT, 0, 0);
    let dim = 2;
    let mut sum = vec![0.0; dim];
    let mut sum_sq = vec![0.0; dim];
    for _ in 0..n {
        let traj = sample_trajectory(&game, &p1, &p2, Start::Conditioned { state: s0, opponent_action: b0 }, &mut rng);
        let ret2 = traj.discounted_return2(game.gamma);
        let score = p1.score(traj.states[0], traj.actions1[0]);
        for j in 0..dim {
            let x = ret2 * score[j];
            sum[j] += x;
            sum_sq[j] += x * x;
        }
    }
    for j in 0..dim {
        let mean = sum[j] / n as f64;
        let var = (sum_sq[j] / n as f64 - mean * mean).max(0.0);
        let sigma_of_mean = (var / n as f64).sqrt();
        let dev = (mean - oracle.data()[j]).abs();
        assert!(dev <= 3.0 * sigma_of_mean, "coord {j}: dev {dev} > 3 sigma {}", 3.0 * sigma_of_mean);
    }
}

/// Hand-assembled expectation of the ascent gradient: analytic scores and
/// the chain rule through the opponent model, no tape anywhere.
fn hand_actor_ascent_gradient(
    game: &TabularGame,
    p1: &TabularPolicy,
    p2: &TabularPolicy,
    window: Option<usize>,
) -> Tensor {
    let tables = exact_values(game, p1, p2);
    let trajs = enumerate_trajectories(game, p1, p2, Start::Initial).unwrap();
    let dim = game.states * game.actions;
    let mut grad = vec![0.0; dim];
    for traj in &trajs {
        let a1 = loqa::shaping::oracle::td0_from_tables(game, &tables.v1, traj, &traj.rewards1);
        let a2 = loqa::shaping::oracle::td0_from_tables(game, &tables.v2, traj, &traj.rewards2);
        let go2 = rewards_to_go(game.gamma, &traj.rewards2);
        for t in 0..game.horizon {
            let s_t = traj.states[t];
            // own-policy term
            let score_own = p1.score(s_t, traj.actions1[t]);
            for j in 0..dim {
                grad[j] += traj.prob * a1[t] * score_own[j];
            }
            // shaping term: (1 - pi_hat) * sum over credited steps
            let b_t = traj.actions2[t];
            let pi_hat = implied_opponent_distribution(go2[t], &tables.q2[t][s_t], b_t)[b_t];
            let end = window.map_or(game.horizon, |n| game.horizon.min(t + n));
            for k in t..end {
                let score_k = p1.score(traj.states[k], traj.actions1[k]);
                let w = traj.prob * a1[t] * (1.0 - pi_hat) * game.gamma.powi((k - t) as i32) * a2[k];
                for j in 0..dim {
                    grad[j] += w * score_k[j];
                }
            }
        }
    }
    Tensor::matrix(game.states, game.actions, grad)
}

/// Tape-computed expectation of the same ascent gradient through the full
/// actor loss.
fn tape_actor_ascent_gradient(
    game: &TabularGame,
    p1: &TabularPolicy,
    p2: &TabularPolicy,
    window: Option<usize>,
    lambda: f64,
) -> Tensor {
    let tables = exact_values(game, p1, p2);
    let trajs = enumerate_trajectories(game, p1, p2, Start::Initial).unwrap();
    let batch = batch_of(game, &trajs);
    let n = batch.probs.len() as f64;

    // Outer advantages absorb the probability weights (scaled by B so the
    // loss's batch mean turns into the probability-weighted sum).
    let a1 = td0_columns(game, &tables.v1, &batch, &batch.rewards1);
    let weighted_a1: Vec<Vec<f64>> = a1
        .iter()
        .map(|row| row.iter().zip(&batch.probs).map(|(&a, &p)| a * p * n).collect())
        .collect();
    let a2 = td0_columns(game, &tables.v2, &batch, &batch.rewards2);
    let q_rows = critic_rows(game, &tables.q2, &batch);

    let tape = Tape::new();
    let theta = tape.input(p1.theta.clone());
    let replayed = tabular_replay(&tape, theta, &batch.obs, &batch.actions1, p1.epsilon);
    let spec = ActorLossSpec {
        dice: DiceSpec { gamma: game.gamma, lambda, credit_window: window, bootstrap_tail: false, boxes_as_ones: false },
        epsilon: p1.epsilon,
        entropy_beta: 0.0,
        shaping: true,
    };
    let inputs = ShapingInputs {
        advantages: &weighted_a1,
        opp_rewards: &batch.rewards2,
        opp_advantages: &a2,
        opp_critic_q: &q_rows,
        opp_actions: &batch.actions2,
    };
    let parts = loqa_actor_loss_core(&tape, &replayed, &inputs, &spec).unwrap();
    let grads = tape.backward(parts.total).unwrap();
    let mut g = grads.get_or_zeros(theta, p1.theta.shape());
    g.scale_in_place(-1.0); // minimization node -> ascent gradient
    g
}

#[test]
fn full_actor_loss_gradient_matches_hand_enumeration() {
    let game = fixtures::two_state_game(3);
    let p1 = policy(&[[0.3, -0.2], [0.1, 0.4]], 0.0);
    let p2 = policy(&[[-0.1, 0.25], [0.2, -0.3]], 0.0);

    for (window, lambda) in [(None, 0.9), (None, 1.0), (Some(2), 1.0)] {
        let hand = hand_actor_ascent_gradient(&game, &p1, &p2, window);
        let tape_grad = tape_actor_ascent_gradient(&game, &p1, &p2, window, lambda);
        let err = max_rel(&tape_grad, &hand);
        assert!(err <= 1e-6, "window {window:?} lambda {lambda}: rel err {err}");
    }
}

#[test]
fn full_actor_loss_gradient_matches_with_exploration() {
    let game = fixtures::two_state_game(2);
    let p1 = policy(&[[0.5, -0.4], [-0.2, 0.3]], 0.2);
    let p2 = policy(&[[0.0, 0.1], [0.4, -0.1]], 0.2);
    let hand = hand_actor_ascent_gradient(&game, &p1, &p2, None);
    let tape_grad = tape_actor_ascent_gradient(&game, &p1, &p2, None, 0.9);
    let err = max_rel(&tape_grad, &hand);
    assert!(err <= 1e-6, "rel err {err}");
}

/// The shaping component of the ascent gradient alone, by enumeration on a
/// tape (total minus the naive part).
fn shaping_only_gradient(game: &TabularGame, p1: &TabularPolicy, p2: &TabularPolicy) -> Tensor {
    let full = tape_actor_ascent_gradient(game, p1, p2, None, 1.0);
    // Rebuild with shaping off.
    let tables = exact_values(game, p1, p2);
    let trajs = enumerate_trajectories(game, p1, p2, Start::Initial).unwrap();
    let batch = batch_of(game, &trajs);
    let n = batch.probs.len() as f64;
    let a1 = td0_columns(game, &tables.v1, &batch, &batch.rewards1);
    let weighted_a1: Vec<Vec<f64>> = a1
        .iter()
        .map(|row| row.iter().zip(&batch.probs).map(|(&a, &p)| a * p * n).collect())
        .collect();
    let a2 = td0_columns(game, &tables.v2, &batch, &batch.rewards2);
    let q_rows = critic_rows(game, &tables.q2, &batch);

    let tape = Tape::new();
    let theta = tape.input(p1.theta.clone());
    let replayed = tabular_replay(&tape, theta, &batch.obs, &batch.actions1, p1.epsilon);
    let spec = ActorLossSpec {
        dice: DiceSpec::loaded(game.gamma, 1.0),
        epsilon: p1.epsilon,
        entropy_beta: 0.0,
        shaping: false,
    };
    let inputs = ShapingInputs {
        advantages: &weighted_a1,
        opp_rewards: &batch.rewards2,
        opp_advantages: &a2,
        opp_critic_q: &q_rows,
        opp_actions: &batch.actions2,
    };
    let parts = loqa_actor_loss_core(&tape, &replayed, &inputs, &spec).unwrap();
    let grads = tape.backward(parts.total).unwrap();
    let mut naive = grads.get_or_zeros(theta, p1.theta.shape());
    naive.scale_in_place(-1.0);

    let mut out = full;
    out.axpy(-1.0, &naive);
    out
}

/// Repeated dilemma stage game where the state records the opponent's
/// previous action, so retaliation is expressible.
fn memory_dilemma(rewards1: [[f64; 2]; 2], rewards2: [[f64; 2]; 2]) -> TabularGame {
    // state = opponent's previous action (0 after C, 1 after D); next state
    // is the opponent's current action, deterministically.
    let to_state = |b: usize| {
        let mut d = vec![0.0, 0.0];
        d[b] = 1.0;
        d
    };
    let r = |table: [[f64; 2]; 2]| {
        vec![
            vec![vec![table[0][0], table[0][1]], vec![table[1][0], table[1][1]]],
            vec![vec![table[0][0], table[0][1]], vec![table[1][0], table[1][1]]],
        ]
    };
    TabularGame {
        states: 2,
        actions: 2,
        horizon: 2,
        gamma: 1.0,
        initial: vec![1.0, 0.0],
        transition: vec![
            vec![vec![to_state(0), to_state(1)], vec![to_state(0), to_state(1)]],
            vec![vec![to_state(0), to_state(1)], vec![to_state(0), to_state(1)]],
        ],
        rewards1: r(rewards1),
        rewards2: r(rewards2),
    }
}

#[test]
fn shaping_direction_follows_the_agents_interest() {
    // Classic payoffs: the opponent cooperating always helps agent one, so
    // one ascent step along the shaping gradient must raise the opponent's
    // action-value gap in favor of cooperation. Flipping agent one's payoffs
    // must reverse the direction. Gap changes are computed by exact
    // re-evaluation, not sampling.
    let dilemma_r1 = [[-1.0, -3.0], [0.0, -2.0]];
    let dilemma_r2 = [[-1.0, 0.0], [-3.0, -2.0]];
    let flipped_r1 = [[-3.0, -1.0], [-2.0, 0.0]];

    for (r1, expect_up) in [(dilemma_r1, true), (flipped_r1, false)] {
        let game = memory_dilemma(r1, dilemma_r2);
        let p1 = policy(&[[0.0, 0.0], [0.0, 0.0]], 0.0);
        let p2 = policy(&[[0.0, 0.0], [0.0, 0.0]], 0.0);

        let gap = |p1: &TabularPolicy| {
            let tables = exact_values(&game, p1, &p2);
            tables.q2[0][0][0] - tables.q2[0][0][1]
        };
        let before = gap(&p1);
        let g = shaping_only_gradient(&game, &p1, &p2);
        let mut stepped = p1.clone();
        stepped.theta.axpy(0.05, &g);
        let after = gap(&stepped);
        if expect_up {
            assert!(after > before + 1e-9, "gap should rise: {before} -> {after}");
        } else {
            assert!(after < before - 1e-9, "gap should fall: {before} -> {after}");
        }
    }
}

#[test]
fn loaded_dice_variance_at_most_plain_reinforce() {
    // Fixed two-step game, 1000 batches of 64 sampled trajectories.
    let game = fixtures::chain_game();
    let p1 = policy(&[[0.2, -0.1], [-0.3, 0.4]], 0.0);
    let p2 = policy(&[[0.1, 0.2], [0.0, -0.1]], 0.0);
    let (s0, b0) = (0, 0);
    let tables = exact_values(&game, &p1, &p2);
    let dim = 4;

    let batches = 1000;
    let batch_size = 64;
    let mut dice_means: Vec<Vec<f64>> = Vec::with_capacity(batches);
    let mut reinforce_means: Vec<Vec<f64>> = Vec::with_capacity(batches);
    for bi in 0..batches {
        let mut rng = rng::stream(1234, rng::DOMAIN_ROLLOUT, bi as u64, 0);
        let trajs: Vec<_> = (0..batch_size)
            .map(|_| {
                let mut t = sample_trajectory(&game, &p1, &p2, Start::Conditioned { state: s0, opponent_action: b0 }, &mut rng);
                t.prob = 1.0 / batch_size as f64;
                t
            })
            .collect();
        let batch = batch_of(&game, &trajs);

        // plain REINFORCE: full return times summed scores
        let mut rf = vec![0.0; dim];
        for traj in &trajs {
            let ret2 = traj.discounted_return2(game.gamma);
            for (t, (&s, &a)) in traj.states.iter().zip(&traj.actions1).enumerate() {
                let _ = t;
                for (j, v) in p1.score(s, a).into_iter().enumerate() {
                    rf[j] += ret2 * v / batch_size as f64;
                }
            }
        }
        reinforce_means.push(rf);

        // loaded credit with TD-0 advantages
        let credit = td0_columns(&game, &tables.v2, &batch, &batch.rewards2);
        let tape = Tape::new();
        let theta = tape.input(p1.theta.clone());
        let lp = tabular_behavior_log_probs(&tape, theta, &batch.obs, &batch.actions1, 0.0);
        let spec = DiceSpec::loaded(game.gamma, 0.9);
        let q_hat = differentiable_return(&tape, 0, &batch.rewards2, &lp, &credit, None, &spec).unwrap();
        let grads = tape.backward(q_hat.mean()).unwrap();
        dice_means.push(grads.get_or_zeros(theta, p1.theta.shape()).data().to_vec());
    }

    let trace_var = |rows: &[Vec<f64>]| -> f64 {
        let n = rows.len() as f64;
        (0..dim)
            .map(|j| {
                let mean: f64 = rows.iter().map(|r| r[j]).sum::<f64>() / n;
                rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n
            })
            .sum()
    };
    let v_dice = trace_var(&dice_means);
    let v_rf = trace_var(&reinforce_means);
    assert!(v_dice <= v_rf, "loaded-DiCE variance {v_dice} should not exceed REINFORCE {v_rf}");
}

#[test]
fn enumeration_cap_is_enforced() {
    let game = fixtures::two_state_game(8);
    let p1 = policy(&[[0.0, 0.0], [0.0, 0.0]], 0.0);
    let p2 = policy(&[[0.0, 0.0], [0.0, 0.0]], 0.0);
    let err = enumerate_trajectories(&game, &p1, &p2, Start::Initial);
    assert!(err.is_err(), "horizon-8 stochastic game must exceed the cap");
}
