use loqa::agents::{q_values, ActorParams};
use loqa::config::preset;
use loqa::graphdiff::{Tape, Tensor};
use loqa::shaping::{loqa_actor_loss, ActorLossSpec, DiceSpec, ShapingInputs};
use loqa::trainer::{rollout_batch, Trainer};

fn critic_rows(critic: &loqa::agents::GruNet, obs: &[Tensor]) -> Vec<Tensor> {
    let mut rows = Vec::new();
    let mut hidden: Option<Tensor> = None;
    for o in obs {
        let tape = Tape::new();
        let (q, h) = q_values(&tape, critic, o, hidden.as_ref()).unwrap();
        hidden = Some(h);
        rows.push(q);
    }
    rows
}

fn td0(q: &[Tensor], probs: &[Tensor], rewards: &[Vec<f64>], gamma: f64) -> Vec<Vec<f64>> {
    let steps = q.len();
    let batch = q[0].rows();
    let actions = q[0].cols();
    let mut values = vec![vec![0.0; batch]; steps + 1];
    for t in 0..steps {
        for e in 0..batch {
            values[t][e] = (0..actions).map(|a| probs[t].at2(e, a) * q[t].at2(e, a)).sum();
        }
    }
    (0..steps).map(|t| (0..batch).map(|e| rewards[t][e] + gamma * values[t + 1][e] - values[t][e]).collect()).collect()
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let warm: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(300);
    let critic_lr: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0.05);
    let ema: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(0.9);
    let mut cfg = preset("ipd-desk").unwrap();
    cfg.train.iterations = warm + 1;
    cfg.train.critic_lr = critic_lr;
    cfg.train.ema_decay = ema;
    let mut tr = Trainer::new(cfg.train.clone()).unwrap();
    for _ in 0..warm {
        tr.train_iteration().unwrap();
    }
    let t = &cfg.train;
    // big diagnostic batch
    let data = rollout_batch(&loqa::envs::IpdEnv, &tr.live.actor, &tr.live.actor, t.epsilon, t.game_length, 4096, 999, 0);
    let q1 = critic_rows(&tr.live.critic, &data.traj.obs1);
    let a1 = td0(&q1, &data.probs1, &data.traj.rewards1, t.reward_discount);
    let q2 = critic_rows(&tr.live.critic, &data.traj.obs2);
    let a2 = td0(&q2, &data.probs2, &data.traj.rewards2, t.reward_discount);

    let grad_of = |shaping: bool| -> Vec<f64> {
        let tape = Tape::new();
        let vars = tr.live.actor.insert(&tape, true);
        let spec = ActorLossSpec {
            dice: DiceSpec::n_step(t.reward_discount, 2),
            epsilon: t.epsilon,
            entropy_beta: 0.0,
            shaping,
        };
        let inputs = ShapingInputs {
            advantages: &a1,
            opp_rewards: &data.traj.rewards2,
            opp_advantages: &a2,
            opp_critic_q: &q2,
            opp_actions: &data.traj.actions2,
        };
        let parts = loqa_actor_loss(&tape, &vars, &data.traj.obs1, &data.traj.actions1, &inputs, &spec).unwrap();
        println!("  shaping={shaping}: policy_term {:+.4} shaping_term {:+.4}", parts.policy_term, parts.shaping_term);
        let grads = tape.backward(parts.total).unwrap();
        grads.get(vars.vars()[0]).unwrap().data().to_vec()
    };
    println!("after {warm} warm iterations:");
    let full = grad_of(true);
    let naive = grad_of(false);
    let states = ["start", "cc", "cd", "dc", "dd"];
    println!("logit-gradients of the MINIMIZED loss (negative = pushes logit up = more cooperation)");
    for i in 0..5 {
        let shaped = full[i] - naive[i];
        println!(
            "{:>5}: naive {:+.5}  shaping {:+.5}  total {:+.5}",
            states[i], naive[i], shaped, full[i]
        );
    }
    if let ActorParams::Logit(l) = &tr.live.actor {
        println!("P(C): {:?}", l.cooperate_probs().iter().map(|p| (p * 1000.0).round() / 1000.0).collect::<Vec<_>>());
    }
}
