//! Tabular sigmoid-over-logits actor for the one-step-history IPD.

use crate::graphdiff::{Tape, Tensor, Var};

use super::ParamSet;

/// One real logit per observable state; the probability of cooperating in
/// state `s` is `sigmoid(logits[s])`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitActor {
    pub logits: Tensor,
}

impl LogitActor {
    /// Zero logits: a uniform policy in every state.
    pub fn new(states: usize) -> Self {
        LogitActor { logits: Tensor::vector(vec![0.0; states]) }
    }

    pub fn states(&self) -> usize {
        self.logits.numel()
    }

    /// Probability of cooperating in each state.
    pub fn cooperate_probs(&self) -> Vec<f64> {
        self.logits.data().iter().map(|&l| 1.0 / (1.0 + (-l).exp())).collect()
    }

    pub fn insert<'t>(&self, tape: &'t Tape, diff: bool) -> LogitVars<'t> {
        let v = self.logits.clone();
        LogitVars { logits: if diff { tape.input(v) } else { tape.constant(v) } }
    }
}

impl ParamSet for LogitActor {
    fn fields(&self) -> Vec<(&'static str, &Tensor)> {
        vec![("logits", &self.logits)]
    }

    fn fields_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        vec![("logits", &mut self.logits)]
    }
}

pub struct LogitVars<'t> {
    pub logits: Var<'t>,
}

impl<'t> LogitVars<'t> {
    pub fn vars(&self) -> Vec<Var<'t>> {
        vec![self.logits]
    }

    /// Log-probabilities `[B, 2]` (cooperate column first) from one-hot
    /// state observations `[B, S]`.
    pub fn step(&self, obs: Var<'t>, tape: &'t Tape) -> Var<'t> {
        let batch = obs.shape()[0];
        let states = self.logits.shape()[0];
        // One-hot dot logits selects the state's logit; pair it with a fixed
        // zero so the softmax reduces to a sigmoid.
        let selected = obs.matmul(self.logits.reshape(&[states, 1]));
        let zeros = tape.constant(Tensor::zeros(&[batch, 1]));
        selected.concat(zeros).log_softmax()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_logit_means_half_cooperate() {
        let actor = LogitActor::new(5);
        let tape = Tape::new();
        let vars = actor.insert(&tape, false);
        // state CC = index 1
        let obs = tape.constant(Tensor::matrix(1, 5, vec![0.0, 1.0, 0.0, 0.0, 0.0]));
        let lp = vars.step(obs, &tape).value();
        assert!((lp.at2(0, 0).exp() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn logit_sign_moves_cooperation() {
        let mut actor = LogitActor::new(5);
        actor.logits.data_mut()[2] = 3.0;
        let p = actor.cooperate_probs();
        assert!(p[2] > 0.95);
        assert!((p[0] - 0.5).abs() < 1e-12);
    }
}
