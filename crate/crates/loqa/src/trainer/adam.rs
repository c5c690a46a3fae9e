//! Adam with bias correction, plus global-norm gradient clipping.

use crate::agents::ParamSet;
use crate::graphdiff::Tensor;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

/// First/second moment accumulators shaped like the parameters they update.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
}

impl AdamState {
    pub fn new<P: ParamSet>(params: &P) -> Self {
        let zeros: Vec<Tensor> = params.fields().iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        AdamState { m: zeros.clone(), v: zeros, step: 0 }
    }

    /// One bias-corrected update: `p -= lr * m_hat / (sqrt(v_hat) + eps)`.
    pub fn apply<P: ParamSet>(&mut self, params: &mut P, grads: &[Tensor], lr: f64) {
        self.step += 1;
        let bc1 = 1.0 - BETA1.powi(self.step as i32);
        let bc2 = 1.0 - BETA2.powi(self.step as i32);
        for ((field, grad), (m, v)) in
            params.fields_mut().into_iter().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let (_, p) = field;
            assert_eq!(p.shape(), grad.shape(), "gradient shape mismatch");
            for i in 0..p.numel() {
                let g = grad.data()[i];
                let mi = BETA1 * m.data()[i] + (1.0 - BETA1) * g;
                let vi = BETA2 * v.data()[i] + (1.0 - BETA2) * g * g;
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                let m_hat = mi / bc1;
                let v_hat = vi / bc2;
                p.data_mut()[i] -= lr * m_hat / (v_hat.sqrt() + EPS);
            }
        }
    }
}

/// Scale gradients so their global L2 norm is at most `max_norm`, preserving
/// direction. A non-positive `max_norm` disables clipping. Returns the
/// pre-clip norm.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads.iter().map(Tensor::sq_norm).sum::<f64>().sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            g.scale_in_place(scale);
        }
    }
    norm
}
