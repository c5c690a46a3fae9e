use loqa::agents::ActorParams;
use loqa::config::preset;
use loqa::trainer::Trainer;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let iters: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(3000);
    let seed: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(42);
    let critic_lr: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(0.01);
    let ema: f64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(0.9);
    let actor_lr: f64 = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(0.001);
    let eps: f64 = args.get(6).and_then(|s| s.parse().ok()).unwrap_or(0.2);
    let mut cfg = preset("ipd-desk").unwrap();
    cfg.train.seed = seed;
    cfg.train.iterations = iters;
    cfg.train.critic_lr = critic_lr;
    cfg.train.ema_decay = ema;
    cfg.train.actor_lr = actor_lr;
    cfg.train.epsilon = eps;
    let mut tr = Trainer::new(cfg.train.clone()).unwrap();
    for i in 0..iters {
        let m = tr.train_iteration().unwrap();
        if i % 500 == 0 || i == iters - 1 {
            let probs = match &tr.live.actor {
                ActorParams::Logit(l) => l.cooperate_probs(),
                _ => vec![],
            };
            println!(
                "iter {:4} ret ({:+.3},{:+.3}) qloss {:7.3} | P(C): start {:.3} cc {:.3} cd {:.3} dc {:.3} dd {:.3}",
                m.iteration, m.ret_agent1, m.ret_agent2, m.q_loss1,
                probs[0], probs[1], probs[2], probs[3], probs[4],
            );
        }
    }
}
