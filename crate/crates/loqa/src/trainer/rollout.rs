//! Batched episode generation under epsilon-mixed behavior policies.

use crate::agents::{policy_entropy, sample_action, ActorParams};
use crate::envs::{Environment, Seat, Trajectory};
use crate::graphdiff::{Tape, Tensor};
use crate::rng;

/// One rollout's record plus the per-step policy distributions (needed later
/// for state values) and mean entropies.
pub struct RolloutData {
    pub traj: Trajectory,
    /// Per step, `[B, A]` probabilities under each seat's unmixed policy.
    pub probs1: Vec<Tensor>,
    pub probs2: Vec<Tensor>,
    pub entropy1: f64,
    pub entropy2: f64,
}

fn encode_batch<E: Environment>(env: &E, states: &[E::State], seat: Seat) -> Tensor {
    let dim = env.obs_dim();
    let mut data = Vec::with_capacity(states.len() * dim);
    for s in states {
        data.extend_from_slice(&env.encode(s, seat));
    }
    Tensor::matrix(states.len(), dim, data)
}

/// Run both policies for `steps` timesteps in `batch` independent episodes.
///
/// Every episode draws from its own RNG stream derived from
/// `(master_seed, lane, episode)`, in a fixed order: reset draws first, then
/// per step the seat-one action, the seat-two action, and the environment
/// transition. Identical inputs give bit-identical trajectories.
pub fn rollout_batch<E: Environment>(
    env: &E,
    actor1: &ActorParams,
    actor2: &ActorParams,
    epsilon: f64,
    steps: usize,
    batch: usize,
    master_seed: u64,
    lane: u64,
) -> RolloutData {
    let actions = env.num_actions();
    let mut rngs: Vec<_> =
        (0..batch).map(|e| rng::stream(master_seed, rng::DOMAIN_ROLLOUT, lane, e as u64)).collect();
    let mut states: Vec<E::State> = rngs.iter_mut().map(|r| env.reset(r)).collect();

    let tape = Tape::new();
    let v1 = actor1.insert(&tape, false);
    let v2 = actor2.insert(&tape, false);
    let mut h1 = v1.initial_hidden(&tape, batch);
    let mut h2 = v2.initial_hidden(&tape, batch);

    let mut traj = Trajectory::with_capacity(steps, batch, env.obs_dim());
    let mut probs1 = Vec::with_capacity(steps);
    let mut probs2 = Vec::with_capacity(steps);
    let mut entropy_sum = [0.0f64; 2];

    for _t in 0..steps {
        let obs1 = encode_batch(env, &states, Seat::One);
        let obs2 = encode_batch(env, &states, Seat::Two);
        let (lp1, h1n) = v1.step(&tape, tape.constant(obs1.clone()), h1);
        let (lp2, h2n) = v2.step(&tape, tape.constant(obs2.clone()), h2);
        h1 = h1n;
        h2 = h2n;
        let lp1v = lp1.value();
        let lp2v = lp2.value();

        let mut acts1 = Vec::with_capacity(batch);
        let mut acts2 = Vec::with_capacity(batch);
        for e in 0..batch {
            let row1 = &lp1v.data()[e * actions..(e + 1) * actions];
            let row2 = &lp2v.data()[e * actions..(e + 1) * actions];
            acts1.push(sample_action(row1, epsilon, &mut rngs[e]));
            acts2.push(sample_action(row2, epsilon, &mut rngs[e]));
            entropy_sum[0] += policy_entropy(row1);
            entropy_sum[1] += policy_entropy(row2);
        }

        let mut r1 = Vec::with_capacity(batch);
        let mut r2 = Vec::with_capacity(batch);
        for e in 0..batch {
            let (next, rew1, rew2) = env.step(&states[e], acts1[e], acts2[e], &mut rngs[e]);
            states[e] = next;
            r1.push(rew1);
            r2.push(rew2);
        }

        probs1.push(lp1v.map(f64::exp));
        probs2.push(lp2v.map(f64::exp));
        traj.obs1.push(obs1);
        traj.obs2.push(obs2);
        traj.actions1.push(acts1);
        traj.actions2.push(acts2);
        traj.rewards1.push(r1);
        traj.rewards2.push(r2);
    }
    traj.validate();

    let denom = (steps * batch) as f64;
    RolloutData {
        traj,
        probs1,
        probs2,
        entropy1: entropy_sum[0] / denom,
        entropy2: entropy_sum[1] / denom,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::LogitActor;
    use crate::envs::IpdEnv;
    use crate::graphdiff::Tensor as T;

    fn fixed_ipd_actor(coop_logit: f64) -> ActorParams {
        ActorParams::Logit(LogitActor { logits: T::vector(vec![coop_logit; 5]) })
    }

    #[test]
    fn always_cooperate_vs_always_defect_rewards() {
        // Saturated logits with eps = 0: pure policies; every step pays
        // (-3, 0).
        let env = IpdEnv;
        let ac = fixed_ipd_actor(60.0);
        let ad = fixed_ipd_actor(-60.0);
        let data = rollout_batch(&env, &ac, &ad, 0.0, 4, 8, 42, 0);
        for t in 0..4 {
            assert!(data.traj.rewards1[t].iter().all(|&r| r == -3.0));
            assert!(data.traj.rewards2[t].iter().all(|&r| r == 0.0));
        }
    }

    #[test]
    fn same_seed_bit_identical() {
        let env = IpdEnv;
        let a = fixed_ipd_actor(0.3);
        let b = fixed_ipd_actor(-0.2);
        let one = rollout_batch(&env, &a, &b, 0.2, 6, 16, 7, 3);
        let two = rollout_batch(&env, &a, &b, 0.2, 6, 16, 7, 3);
        assert_eq!(one.traj.actions1, two.traj.actions1);
        assert_eq!(one.traj.actions2, two.traj.actions2);
        for t in 0..6 {
            assert_eq!(one.traj.rewards1[t], two.traj.rewards1[t]);
            assert_eq!(one.traj.obs1[t], two.traj.obs1[t]);
        }
    }

    #[test]
    fn random_vs_random_mean_return_within_3_sigma() {
        // Uniform play picks each payoff cell equally: mean per-step reward
        // -1.5, discounted episode return -1.5 * sum gamma^t.
        let env = IpdEnv;
        let uniform = fixed_ipd_actor(0.0);
        let steps = 8;
        let batch = 4096;
        let gamma: f64 = 0.96;
        let data = rollout_batch(&env, &uniform, &uniform, 0.0, steps, batch, 11, 0);
        let horizon_weight: f64 = (0..steps).map(|t| gamma.powi(t as i32)).sum();
        let expect = -1.5 * horizon_weight;
        let mut returns = Vec::with_capacity(batch);
        for e in 0..batch {
            let ret: f64 =
                (0..steps).map(|t| gamma.powi(t as i32) * data.traj.rewards1[t][e]).sum();
            returns.push(ret);
        }
        let mean: f64 = returns.iter().sum::<f64>() / batch as f64;
        let var: f64 = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / batch as f64;
        let sigma_mean = (var / batch as f64).sqrt();
        assert!(
            (mean - expect).abs() <= 3.0 * sigma_mean,
            "mean {mean} expect {expect} sigma {sigma_mean}"
        );
    }

    #[test]
    fn episode_length_exact() {
        let env = IpdEnv;
        let a = fixed_ipd_actor(0.0);
        let data = rollout_batch(&env, &a, &a, 0.0, 13, 3, 1, 0);
        assert_eq!(data.traj.steps, 13);
        assert!(data.traj.terminal);
        assert_eq!(data.traj.obs1.len(), 13);
    }
}
