//! GRU network: two dense layers in front of a GRU cell, one linear head.
//!
//! Cell convention (single combined bias per gate):
//!   z = sigmoid(x W_z + h U_z + b_z)
//!   r = sigmoid(x W_r + h U_r + b_r)
//!   n = tanh(x W_n + r * (h U_n) + b_n)
//!   h' = (1 - z) * n + z * h
//! The head reads the updated hidden state.

use crate::graphdiff::{Tape, Tensor, Var};
use rand::{Rng, RngCore};

use super::ParamSet;

/// Weights are stored `[fan_in, fan_out]` so a batched forward pass is
/// `X [B, in] x W [in, out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GruNet {
    pub d1_w: Tensor,
    pub d1_b: Tensor,
    pub d2_w: Tensor,
    pub d2_b: Tensor,
    pub wz: Tensor,
    pub uz: Tensor,
    pub bz: Tensor,
    pub wr: Tensor,
    pub ur: Tensor,
    pub br: Tensor,
    pub wn: Tensor,
    pub un: Tensor,
    pub bn: Tensor,
    pub head_w: Tensor,
    pub head_b: Tensor,
}

fn uniform_fan_in(rows: usize, cols: usize, rng: &mut dyn RngCore) -> Tensor {
    let bound = 1.0 / (rows as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::matrix(rows, cols, data)
}

impl GruNet {
    /// Fan-in-scaled uniform weights, zero biases.
    pub fn init(obs_dim: usize, hidden: usize, out_dim: usize, rng: &mut dyn RngCore) -> Self {
        GruNet {
            d1_w: uniform_fan_in(obs_dim, hidden, rng),
            d1_b: Tensor::zeros(&[hidden]),
            d2_w: uniform_fan_in(hidden, hidden, rng),
            d2_b: Tensor::zeros(&[hidden]),
            wz: uniform_fan_in(hidden, hidden, rng),
            uz: uniform_fan_in(hidden, hidden, rng),
            bz: Tensor::zeros(&[hidden]),
            wr: uniform_fan_in(hidden, hidden, rng),
            ur: uniform_fan_in(hidden, hidden, rng),
            br: Tensor::zeros(&[hidden]),
            wn: uniform_fan_in(hidden, hidden, rng),
            un: uniform_fan_in(hidden, hidden, rng),
            bn: Tensor::zeros(&[hidden]),
            head_w: uniform_fan_in(hidden, out_dim, rng),
            head_b: Tensor::zeros(&[out_dim]),
        }
    }

    pub fn zeros(obs_dim: usize, hidden: usize, out_dim: usize) -> Self {
        let mut z = Self::init(obs_dim, hidden, out_dim, &mut crate::rng::stream(0, 0, 0, 0));
        for (_, t) in z.fields_mut() {
            t.data_mut().fill(0.0);
        }
        z
    }

    pub fn obs_dim(&self) -> usize {
        self.d1_w.rows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.d1_w.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.head_w.cols()
    }

    /// Record the parameters on a tape; `diff` decides whether gradients
    /// will accumulate into them.
    pub fn insert<'t>(&self, tape: &'t Tape, diff: bool) -> GruVars<'t> {
        let put = |t: &Tensor| if diff { tape.input(t.clone()) } else { tape.constant(t.clone()) };
        GruVars {
            d1_w: put(&self.d1_w),
            d1_b: put(&self.d1_b),
            d2_w: put(&self.d2_w),
            d2_b: put(&self.d2_b),
            wz: put(&self.wz),
            uz: put(&self.uz),
            bz: put(&self.bz),
            wr: put(&self.wr),
            ur: put(&self.ur),
            br: put(&self.br),
            wn: put(&self.wn),
            un: put(&self.un),
            bn: put(&self.bn),
            head_w: put(&self.head_w),
            head_b: put(&self.head_b),
        }
    }
}

impl ParamSet for GruNet {
    fn fields(&self) -> Vec<(&'static str, &Tensor)> {
        vec![
            ("d1_w", &self.d1_w),
            ("d1_b", &self.d1_b),
            ("d2_w", &self.d2_w),
            ("d2_b", &self.d2_b),
            ("wz", &self.wz),
            ("uz", &self.uz),
            ("bz", &self.bz),
            ("wr", &self.wr),
            ("ur", &self.ur),
            ("br", &self.br),
            ("wn", &self.wn),
            ("un", &self.un),
            ("bn", &self.bn),
            ("head_w", &self.head_w),
            ("head_b", &self.head_b),
        ]
    }

    fn fields_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        vec![
            ("d1_w", &mut self.d1_w),
            ("d1_b", &mut self.d1_b),
            ("d2_w", &mut self.d2_w),
            ("d2_b", &mut self.d2_b),
            ("wz", &mut self.wz),
            ("uz", &mut self.uz),
            ("bz", &mut self.bz),
            ("wr", &mut self.wr),
            ("ur", &mut self.ur),
            ("br", &mut self.br),
            ("wn", &mut self.wn),
            ("un", &mut self.un),
            ("bn", &mut self.bn),
            ("head_w", &mut self.head_w),
            ("head_b", &mut self.head_b),
        ]
    }
}

/// Tape handles for one inserted [`GruNet`], in [`ParamSet`] field order.
pub struct GruVars<'t> {
    pub d1_w: Var<'t>,
    pub d1_b: Var<'t>,
    pub d2_w: Var<'t>,
    pub d2_b: Var<'t>,
    pub wz: Var<'t>,
    pub uz: Var<'t>,
    pub bz: Var<'t>,
    pub wr: Var<'t>,
    pub ur: Var<'t>,
    pub br: Var<'t>,
    pub wn: Var<'t>,
    pub un: Var<'t>,
    pub bn: Var<'t>,
    pub head_w: Var<'t>,
    pub head_b: Var<'t>,
}

impl<'t> GruVars<'t> {
    pub fn vars(&self) -> Vec<Var<'t>> {
        vec![
            self.d1_w, self.d1_b, self.d2_w, self.d2_b, self.wz, self.uz, self.bz, self.wr,
            self.ur, self.br, self.wn, self.un, self.bn, self.head_w, self.head_b,
        ]
    }

    /// Zero hidden state for a fresh episode batch.
    pub fn initial_hidden(&self, tape: &'t Tape, batch: usize) -> Var<'t> {
        tape.constant(Tensor::zeros(&[batch, self.d1_w.shape()[1]]))
    }

    /// One recurrent step over a `[B, obs]` batch; returns head outputs
    /// `[B, out]` and the updated hidden state `[B, h]`.
    pub fn step(&self, obs: Var<'t>, hidden: Var<'t>) -> (Var<'t>, Var<'t>) {
        let x1 = obs.matmul(self.d1_w).add_row(self.d1_b).relu();
        let x2 = x1.matmul(self.d2_w).add_row(self.d2_b).relu();
        let z = (x2.matmul(self.wz) + hidden.matmul(self.uz)).add_row(self.bz).sigmoid();
        let r = (x2.matmul(self.wr) + hidden.matmul(self.ur)).add_row(self.br).sigmoid();
        let n = (x2.matmul(self.wn) + r * hidden.matmul(self.un)).add_row(self.bn).tanh();
        let one_minus_z = z.mul_scalar(-1.0).add_scalar(1.0);
        let h_new = one_minus_z * n + z * hidden;
        let out = h_new.matmul(self.head_w).add_row(self.head_b);
        (out, h_new)
    }
}
