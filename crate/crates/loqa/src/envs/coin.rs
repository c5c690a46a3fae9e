//! Wrapped-grid Coin Game.
//!
//! Two agents (seat one owns red, seat two owns blue) move simultaneously on
//! a torus holding exactly one coin. Landing on the coin picks it up: the
//! picker is rewarded, and if the coin belonged to the other agent that agent
//! is punished. On any pickup a new coin spawns on a free cell with the
//! opposite color.

use super::{EnvError, Environment, Seat};
use rand::{Rng, RngCore};

pub const MOVE_UP: usize = 0;
pub const MOVE_DOWN: usize = 1;
pub const MOVE_LEFT: usize = 2;
pub const MOVE_RIGHT: usize = 3;
pub const COIN_MOVES: usize = 4;

pub type Cell = (usize, usize);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoinState {
    pub agent1: Cell,
    pub agent2: Cell,
    pub coin: Cell,
    /// true: the coin belongs to seat one (red); false: seat two (blue).
    pub coin_red: bool,
    /// Previous joint action (seat one, seat two); `None` at t = 0.
    pub prev_actions: Option<(usize, usize)>,
    pub t: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct CoinEnv {
    grid: usize,
    /// Reward to any agent that picks up any coin.
    pub pickup_reward: f64,
    /// Reward to the owner of a coin picked up by the other agent.
    pub other_color_penalty: f64,
}

impl CoinEnv {
    pub fn new(grid: usize) -> Result<Self, EnvError> {
        Self::with_rewards(grid, 1.0, -2.0)
    }

    pub fn with_rewards(grid: usize, pickup_reward: f64, other_color_penalty: f64) -> Result<Self, EnvError> {
        if grid < 2 {
            return Err(EnvError::GridTooSmall(grid));
        }
        Ok(CoinEnv { grid, pickup_reward, other_color_penalty })
    }

    pub fn grid(&self) -> usize {
        self.grid
    }

    pub fn apply_move(&self, pos: Cell, mv: usize) -> Cell {
        let g = self.grid;
        match mv {
            MOVE_UP => ((pos.0 + g - 1) % g, pos.1),
            MOVE_DOWN => ((pos.0 + 1) % g, pos.1),
            MOVE_LEFT => (pos.0, (pos.1 + g - 1) % g),
            MOVE_RIGHT => (pos.0, (pos.1 + 1) % g),
            _ => panic!("invalid move {mv}"),
        }
    }

    /// Uniform draw over the grid cells not in `exclude`, scanning row-major.
    fn free_cell(&self, exclude: &[Cell], rng: &mut dyn RngCore) -> Cell {
        let g = self.grid;
        let free = g * g - exclude.len();
        let mut k = rng.gen_range(0..free);
        for r in 0..g {
            for c in 0..g {
                if exclude.contains(&(r, c)) {
                    continue;
                }
                if k == 0 {
                    return (r, c);
                }
                k -= 1;
            }
        }
        unreachable!("free cell draw out of range");
    }
}

impl Environment for CoinEnv {
    type State = CoinState;

    /// Agents and coin start on three distinct uniform-random cells; the
    /// coin color is a fair draw.
    fn reset(&self, rng: &mut dyn RngCore) -> CoinState {
        let agent1 = self.free_cell(&[], rng);
        let agent2 = self.free_cell(&[agent1], rng);
        let coin = self.free_cell(&[agent1, agent2], rng);
        let coin_red = rng.gen_range(0..2) == 0;
        CoinState { agent1, agent2, coin, coin_red, prev_actions: None, t: 0 }
    }

    fn step(&self, state: &CoinState, a: usize, b: usize, rng: &mut dyn RngCore) -> (CoinState, f64, f64) {
        let agent1 = self.apply_move(state.agent1, a);
        let agent2 = self.apply_move(state.agent2, b);
        let pick1 = agent1 == state.coin;
        let pick2 = agent2 == state.coin;

        let mut r1 = 0.0;
        let mut r2 = 0.0;
        if pick1 {
            r1 += self.pickup_reward;
            if !state.coin_red {
                r2 += self.other_color_penalty;
            }
        }
        if pick2 {
            r2 += self.pickup_reward;
            if state.coin_red {
                r1 += self.other_color_penalty;
            }
        }

        let (coin, coin_red) = if pick1 || pick2 {
            // Respawn on a free cell with the alternate color.
            let exclude = if agent1 == agent2 { vec![agent1] } else { vec![agent1, agent2] };
            (self.free_cell(&exclude, rng), !state.coin_red)
        } else {
            (state.coin, state.coin_red)
        };

        let next = CoinState { agent1, agent2, coin, coin_red, prev_actions: Some((a, b)), t: state.t + 1 };
        (next, r1, r2)
    }

    /// Four stacked position planes (self, other, own-color coin, other-color
    /// coin) flattened row-major, then both previous actions one-hot (own
    /// first); action slots are all-zero at t = 0.
    fn encode(&self, state: &CoinState, seat: Seat) -> Vec<f64> {
        let g = self.grid;
        let mut obs = vec![0.0; self.obs_dim()];
        let plane = |idx: usize, cell: Cell| idx * g * g + cell.0 * g + cell.1;

        let (me, other, own_coin) = match seat {
            Seat::One => (state.agent1, state.agent2, state.coin_red),
            Seat::Two => (state.agent2, state.agent1, !state.coin_red),
        };
        obs[plane(0, me)] = 1.0;
        obs[plane(1, other)] = 1.0;
        let coin_plane = if own_coin { 2 } else { 3 };
        obs[plane(coin_plane, state.coin)] = 1.0;

        if let Some((a1, a2)) = state.prev_actions {
            let (own_act, other_act) = match seat {
                Seat::One => (a1, a2),
                Seat::Two => (a2, a1),
            };
            obs[4 * g * g + own_act] = 1.0;
            obs[4 * g * g + COIN_MOVES + other_act] = 1.0;
        }
        obs
    }

    fn obs_dim(&self) -> usize {
        4 * self.grid * self.grid + 2 * COIN_MOVES
    }

    fn num_actions(&self) -> usize {
        COIN_MOVES
    }

    fn name(&self) -> &'static str {
        "coin"
    }
}
