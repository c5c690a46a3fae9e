use loqa::agents::q_values;
use loqa::config::preset;
use loqa::graphdiff::Tape;
use loqa::trainer::Trainer;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let iters: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(1000);
    let critic_lr: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0.01);
    let ema: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(0.99);
    let mut cfg = preset("ipd-desk").unwrap();
    cfg.train.iterations = iters;
    cfg.train.critic_lr = critic_lr;
    cfg.train.ema_decay = ema;
    cfg.train.actor_lr = 1e-12; // effectively frozen actor: critic-only dynamics
    let mut tr = Trainer::new(cfg.train.clone()).unwrap();
    for i in 0..iters {
        let m = tr.train_iteration().unwrap();
        if i % 100 == 0 || i == iters - 1 {
            let tape = Tape::new();
            let obs = loqa::graphdiff::Tensor::matrix(1, 5, vec![1.0, 0.0, 0.0, 0.0, 0.0]);
            let (q, _) = q_values(&tape, &tr.live.critic, &obs, None).unwrap();
            println!("iter {:4} qloss {:7.3} Q(start) = [{:+.3}, {:+.3}]", m.iteration, m.q_loss1, q.at2(0,0), q.at2(0,1));
        }
    }
}
