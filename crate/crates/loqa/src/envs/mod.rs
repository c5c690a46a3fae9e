//! Benchmark environments behind one batched step interface, plus the
//! normalized-return utilities used by the evaluation harness.

mod coin;
mod ipd;

pub use coin::{CoinEnv, CoinState, COIN_MOVES, MOVE_DOWN, MOVE_LEFT, MOVE_RIGHT, MOVE_UP};
pub use ipd::{ipd_reset, ipd_step, IpdEnv, IpdState, IpdTag, COOPERATE, DEFECT};

use crate::graphdiff::Tensor;
use rand::RngCore;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("grid size must be at least 2, got {0}")]
    GridTooSmall(usize),
    #[error("discount {name} = {value} outside [0, 1]")]
    BadDiscount { name: &'static str, value: f64 },
}

/// Which side of a two-player episode an agent occupies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Seat {
    One,
    Two,
}

impl Seat {
    pub fn other(self) -> Seat {
        match self {
            Seat::One => Seat::Two,
            Seat::Two => Seat::One,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Seat::One => 0,
            Seat::Two => 1,
        }
    }
}

/// Reward discount and dependency (action) discount, both in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscountSpec {
    pub reward: f64,
    pub dice: f64,
}

impl DiscountSpec {
    pub fn new(reward: f64, dice: f64) -> Result<Self, EnvError> {
        if !(0.0..=1.0).contains(&reward) {
            return Err(EnvError::BadDiscount { name: "reward", value: reward });
        }
        if !(0.0..=1.0).contains(&dice) {
            return Err(EnvError::BadDiscount { name: "dice", value: dice });
        }
        Ok(DiscountSpec { reward, dice })
    }
}

/// Pure state-transition interface shared by both environments.
///
/// Environments are stateless values; all episode state lives in
/// `Self::State` and all randomness comes through the explicit RNG.
pub trait Environment {
    type State: Clone;

    fn reset(&self, rng: &mut dyn RngCore) -> Self::State;
    /// Advance one step under the joint action; returns the next state and
    /// both agents' rewards (seat one first).
    fn step(&self, state: &Self::State, a: usize, b: usize, rng: &mut dyn RngCore) -> (Self::State, f64, f64);
    /// Egocentric flat observation for the given seat.
    fn encode(&self, state: &Self::State, seat: Seat) -> Vec<f64>;
    fn obs_dim(&self) -> usize;
    fn num_actions(&self) -> usize;
    fn name(&self) -> &'static str;
}

/// Batched record of one rollout: per step, both seats' observation
/// encodings, actions and rewards. The sole interchange format between
/// environments, losses and evaluators.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub steps: usize,
    pub batch: usize,
    pub obs_dim: usize,
    /// Per step, a `[batch, obs_dim]` matrix of seat-one observations.
    pub obs1: Vec<Tensor>,
    pub obs2: Vec<Tensor>,
    /// Per step, seat-one actions for each episode in the batch.
    pub actions1: Vec<Vec<usize>>,
    pub actions2: Vec<Vec<usize>>,
    pub rewards1: Vec<Vec<f64>>,
    pub rewards2: Vec<Vec<f64>>,
    /// Fixed horizon: episodes terminate exactly at `steps`.
    pub terminal: bool,
}

impl Trajectory {
    pub fn with_capacity(steps: usize, batch: usize, obs_dim: usize) -> Self {
        Trajectory {
            steps,
            batch,
            obs_dim,
            obs1: Vec::with_capacity(steps),
            obs2: Vec::with_capacity(steps),
            actions1: Vec::with_capacity(steps),
            actions2: Vec::with_capacity(steps),
            rewards1: Vec::with_capacity(steps),
            rewards2: Vec::with_capacity(steps),
            terminal: true,
        }
    }

    /// All per-step arrays share length `steps` and every reward is finite.
    pub fn validate(&self) {
        for v in [self.obs1.len(), self.obs2.len(), self.actions1.len(), self.actions2.len(), self.rewards1.len(), self.rewards2.len()] {
            assert_eq!(v, self.steps, "trajectory arrays must share length T");
        }
        for t in 0..self.steps {
            assert!(self.rewards1[t].iter().all(|r| r.is_finite()), "non-finite reward");
            assert!(self.rewards2[t].iter().all(|r| r.is_finite()), "non-finite reward");
        }
    }

    pub fn obs(&self, seat: Seat, t: usize) -> &Tensor {
        match seat {
            Seat::One => &self.obs1[t],
            Seat::Two => &self.obs2[t],
        }
    }

    pub fn actions(&self, seat: Seat, t: usize) -> &[usize] {
        match seat {
            Seat::One => &self.actions1[t],
            Seat::Two => &self.actions2[t],
        }
    }

    pub fn rewards(&self, seat: Seat, t: usize) -> &[f64] {
        match seat {
            Seat::One => &self.rewards1[t],
            Seat::Two => &self.rewards2[t],
        }
    }

    /// Mean per-step reward for a seat over the whole batch.
    pub fn mean_step_reward(&self, seat: Seat) -> f64 {
        let total: f64 = (0..self.steps).map(|t| self.rewards(seat, t).iter().sum::<f64>()).sum();
        total / (self.steps * self.batch) as f64
    }
}

/// Torus Manhattan distance: per axis, the shorter way around.
pub fn wrapped_manhattan(p: (usize, usize), q: (usize, usize), g: usize) -> usize {
    let axis = |a: usize, b: usize| {
        let d = a.abs_diff(b);
        d.min(g - d)
    };
    axis(p.0, q.0) + axis(p.1, q.1)
}

/// Grid-size normalization constant: the wrapped Manhattan distance between
/// the grid's center cell and a corner, `2 * floor((g - 1) / 2)`.
pub fn normalization_constant(g: usize) -> usize {
    assert!(g >= 2, "grid size must be at least 2");
    let c = (g - 1) / 2;
    wrapped_manhattan((c, c), (0, 0), g)
}

/// Scale an average per-step return by the grid's normalization constant so
/// thresholds compare across grid sizes.
pub fn normalized_return(avg_step_return: f64, g: usize) -> f64 {
    avg_step_return * normalization_constant(g) as f64
}
