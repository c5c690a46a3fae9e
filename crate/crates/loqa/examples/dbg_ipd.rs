use loqa::agents::ActorParams;
use loqa::config::preset;
use loqa::trainer::Trainer;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let iters: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(500);
    let seed: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(42);
    let mut cfg = preset("ipd-desk").unwrap();
    cfg.train.seed = seed;
    cfg.train.iterations = iters;
    let mut tr = Trainer::new(cfg.train.clone()).unwrap();
    let t0 = std::time::Instant::now();
    for i in 0..iters {
        let m = tr.train_iteration().unwrap();
        if i % 100 == 0 || i == iters - 1 {
            let probs = match &tr.live.actor {
                ActorParams::Logit(l) => l.cooperate_probs(),
                _ => vec![],
            };
            println!(
                "iter {:4} ret ({:+.3},{:+.3}) qloss {:.4} aloss {:+.4} | P(C): start {:.3} cc {:.3} cd {:.3} dc {:.3} dd {:.3} | {:.3}s/iter",
                m.iteration, m.ret_agent1, m.ret_agent2, m.q_loss1, m.actor_loss1,
                probs[0], probs[1], probs[2], probs[3], probs[4],
                t0.elapsed().as_secs_f64() / (i + 1) as f64
            );
        }
    }
}
