use loqa::agents::{q_values, ActorParams};
use loqa::config::preset;
use loqa::graphdiff::{Tape, Tensor};
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
    let warm: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(300);
    let critic_lr: f64 = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(0.01);
    let ema: f64 = std::env::args().nth(3).and_then(|s| s.parse().ok()).unwrap_or(0.99);
    let mut cfg = preset("ipd-desk").unwrap();
    cfg.train.iterations = warm + 1;
    cfg.train.critic_lr = critic_lr;
    cfg.train.ema_decay = ema;
    let mut tr = Trainer::new(cfg.train.clone()).unwrap();
    for _ in 0..warm {
        tr.train_iteration().unwrap();
    }
    let t = &cfg.train;
    let data = rollout_batch(&loqa::envs::IpdEnv, &tr.live.actor, &tr.live.actor, t.epsilon, t.game_length, 4096, 999, 0);
    let q1 = critic_rows(&tr.live.critic, &data.traj.obs1);
    let a1 = td0(&q1, &data.probs1, &data.traj.rewards1, t.reward_discount);
    let q2 = critic_rows(&tr.live.critic, &data.traj.obs2);
    let a2 = td0(&q2, &data.probs2, &data.traj.rewards2, t.reward_discount);

    // per joint action at state CC (seat-1 view: obs1 one-hot index 1)
    let mut stats = vec![(0usize, 0.0f64, 0.0f64); 4]; // count, mean a1, mean a2
    for time in 1..t.game_length {
        for e in 0..4096 {
            if data.traj.obs1[time].at2(e, 1) == 1.0 {
                let joint = data.traj.actions1[time][e] * 2 + data.traj.actions2[time][e];
                stats[joint].0 += 1;
                stats[joint].1 += a1[time][e];
                stats[joint].2 += a2[time][e];
            }
        }
    }
    println!("at state CC (seat-1 view):");
    for (j, name) in ["(C,C)", "(C,D)", "(D,C)", "(D,D)"].iter().enumerate() {
        let (n, sa1, sa2) = stats[j];
        println!("{name}: n {:6}  E[A1] {:+.3}  E[A2] {:+.3}", n, sa1 / n as f64, sa2 / n as f64);
    }
    // value scale sanity
    println!("critic Q rows at t=0, episode 0 (seat1): {:?}", q1[0].data()[0..2].to_vec());
    println!("critic Q rows at t=8, episode 0 (seat1): {:?}", &q1[8].data()[0..2]);
    println!("mean |A1| {:.3}", a1.iter().flatten().map(|a| a.abs()).sum::<f64>() / (16.0 * 4096.0));
    let _ = ActorParams::Logit;
}
