//! Bounded FIFO store of past agent snapshots, sampled uniformly as
//! training opponents.

use std::collections::VecDeque;

use rand::{Rng, RngCore};

use crate::agents::checkpoint::AgentSnapshot;

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    snapshots: VecDeque<AgentSnapshot>,
    capacity: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1, "replay capacity must be at least 1");
        ReplayBuffer { snapshots: VecDeque::new(), capacity }
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    /// Pushes happen exactly at iterations that are multiples of the push
    /// frequency, iteration 0 included (so sampling never sees an empty
    /// buffer).
    pub fn due(iteration: u64, push_every: usize) -> bool {
        iteration % push_every.max(1) as u64 == 0
    }

    pub fn push(&mut self, snapshot: AgentSnapshot) {
        if self.snapshots.len() == self.capacity {
            self.snapshots.pop_front();
        }
        self.snapshots.push_back(snapshot);
    }

    /// Uniform draw over stored snapshots.
    pub fn sample(&self, rng: &mut dyn RngCore) -> Option<&AgentSnapshot> {
        if self.snapshots.is_empty() {
            return None;
        }
        let i = rng.gen_range(0..self.snapshots.len());
        self.snapshots.get(i)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{ActorParams, GruNet, LogitActor};
    use crate::graphdiff::Tensor;
    use crate::rng;

    fn snap(tag: f64) -> AgentSnapshot {
        AgentSnapshot {
            actor: ActorParams::Logit(LogitActor { logits: Tensor::vector(vec![tag]) }),
            critic: GruNet::zeros(1, 1, 1),
        }
    }

    fn tag_of(s: &AgentSnapshot) -> f64 {
        match &s.actor {
            ActorParams::Logit(l) => l.logits.data()[0],
            _ => unreachable!(),
        }
    }

    #[test]
    fn push_schedule_counts() {
        // 35 iterations with pushes every 10: iterations 0, 10, 20, 30.
        let mut buf = ReplayBuffer::new(100);
        for it in 0..35u64 {
            if ReplayBuffer::due(it, 10) {
                buf.push(snap(it as f64));
            }
        }
        assert_eq!(buf.len(), 4);
    }

    #[test]
    fn fifo_eviction() {
        let mut buf = ReplayBuffer::new(2);
        buf.push(snap(1.0));
        buf.push(snap(2.0));
        buf.push(snap(3.0));
        assert_eq!(buf.len(), 2);
        let tags: Vec<f64> = buf.snapshots.iter().map(tag_of).collect();
        assert_eq!(tags, vec![2.0, 3.0]);
    }

    #[test]
    fn sampling_uniform_within_3_sigma() {
        let mut buf = ReplayBuffer::new(8);
        for i in 0..8 {
            buf.push(snap(i as f64));
        }
        let n = 100_000;
        let mut counts = [0usize; 8];
        let mut r = rng::stream(5, rng::DOMAIN_PAIRING, 0, 0);
        for _ in 0..n {
            counts[tag_of(buf.sample(&mut r).unwrap()) as usize] += 1;
        }
        let p = 1.0 / 8.0;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        for &c in &counts {
            assert!((c as f64 - n as f64 * p).abs() <= 3.0 * sigma, "count {c}");
        }
    }

    #[test]
    fn empty_sample_is_none() {
        let buf = ReplayBuffer::new(4);
        let mut r = rng::stream(5, rng::DOMAIN_PAIRING, 1, 0);
        assert!(buf.sample(&mut r).is_none());
    }
}
