//! One-step-history Iterated Prisoner's Dilemma.

use super::{Environment, Seat};
use rand::RngCore;

pub const COOPERATE: usize = 0;
pub const DEFECT: usize = 1;

/// The five observable histories: the start state plus the previous joint
/// action, recorded as (seat-one action, seat-two action).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IpdTag {
    Start,
    CC,
    CD,
    DC,
    DD,
}

impl IpdTag {
    pub fn index(self) -> usize {
        match self {
            IpdTag::Start => 0,
            IpdTag::CC => 1,
            IpdTag::CD => 2,
            IpdTag::DC => 3,
            IpdTag::DD => 4,
        }
    }

    /// The same history seen from the other seat: own/other actions swap.
    pub fn swapped(self) -> IpdTag {
        match self {
            IpdTag::CD => IpdTag::DC,
            IpdTag::DC => IpdTag::CD,
            other => other,
        }
    }

    fn from_joint(a: usize, b: usize) -> IpdTag {
        match (a, b) {
            (COOPERATE, COOPERATE) => IpdTag::CC,
            (COOPERATE, DEFECT) => IpdTag::CD,
            (DEFECT, COOPERATE) => IpdTag::DC,
            (DEFECT, DEFECT) => IpdTag::DD,
            _ => panic!("invalid joint action ({a}, {b})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IpdState {
    pub tag: IpdTag,
    pub t: usize,
}

/// Payoffs: mutual cooperation (-1, -1); unilateral defection (0, -3) for
/// the defector; mutual defection (-2, -2).
pub fn ipd_step(state: IpdState, a: usize, b: usize) -> (IpdState, f64, f64) {
    let (r1, r2) = match (a, b) {
        (COOPERATE, COOPERATE) => (-1.0, -1.0),
        (COOPERATE, DEFECT) => (-3.0, 0.0),
        (DEFECT, COOPERATE) => (0.0, -3.0),
        (DEFECT, DEFECT) => (-2.0, -2.0),
        _ => panic!("invalid joint action ({a}, {b})"),
    };
    (IpdState { tag: IpdTag::from_joint(a, b), t: state.t + 1 }, r1, r2)
}

pub fn ipd_reset() -> IpdState {
    IpdState { tag: IpdTag::Start, t: 0 }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct IpdEnv;

impl Environment for IpdEnv {
    type State = IpdState;

    fn reset(&self, _rng: &mut dyn RngCore) -> IpdState {
        ipd_reset()
    }

    fn step(&self, state: &IpdState, a: usize, b: usize, _rng: &mut dyn RngCore) -> (IpdState, f64, f64) {
        ipd_step(*state, a, b)
    }

    fn encode(&self, state: &IpdState, seat: Seat) -> Vec<f64> {
        let tag = match seat {
            Seat::One => state.tag,
            Seat::Two => state.tag.swapped(),
        };
        let mut obs = vec![0.0; 5];
        obs[tag.index()] = 1.0;
        obs
    }

    fn obs_dim(&self) -> usize {
        5
    }

    fn num_actions(&self) -> usize {
        2
    }

    fn name(&self) -> &'static str {
        "ipd"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn payoff_table_exact() {
        let s = ipd_reset();
        assert_eq!(ipd_step(s, COOPERATE, COOPERATE), (IpdState { tag: IpdTag::CC, t: 1 }, -1.0, -1.0));
        assert_eq!(ipd_step(s, DEFECT, COOPERATE), (IpdState { tag: IpdTag::DC, t: 1 }, 0.0, -3.0));
        assert_eq!(ipd_step(s, COOPERATE, DEFECT), (IpdState { tag: IpdTag::CD, t: 1 }, -3.0, 0.0));
        assert_eq!(ipd_step(s, DEFECT, DEFECT), (IpdState { tag: IpdTag::DD, t: 1 }, -2.0, -2.0));
    }

    #[test]
    fn reset_is_start() {
        let s = ipd_reset();
        assert_eq!(s.tag, IpdTag::Start);
        assert_eq!(s.t, 0);
    }

    #[test]
    fn start_encoding_one_hot() {
        let env = IpdEnv;
        assert_eq!(env.encode(&ipd_reset(), Seat::One), vec![1.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn seat_two_sees_swapped_history() {
        let env = IpdEnv;
        let (s, _, _) = ipd_step(ipd_reset(), COOPERATE, DEFECT);
        assert_eq!(s.tag, IpdTag::CD);
        // Seat two defected while seat one cooperated: from its own view the
        // history reads DC.
        assert_eq!(env.encode(&s, Seat::Two)[IpdTag::DC.index()], 1.0);
    }
}
