//! Central-finite-difference gradient checking.
//!
//! The numeric side only ever evaluates forward passes, so it stays
//! independent of the reverse rules it validates.

use super::{Tape, Tensor, Var};

pub const DEFAULT_EPS: f64 = 1e-4;

/// Evaluate `build` on a fresh tape; return the scalar loss and the analytic
/// gradient for every parameter (zeros where the loss has no dependence).
pub fn value_and_grads<F>(build: F, params: &[Tensor]) -> (f64, Vec<Tensor>)
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>,
{
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = params.iter().map(|p| tape.input(p.clone())).collect();
    let loss = build(&tape, &vars);
    let value = loss.item();
    let grads = tape.backward(loss).expect("scalar loss");
    let out = vars
        .iter()
        .zip(params)
        .map(|(v, p)| grads.get_or_zeros(*v, p.shape()))
        .collect();
    (value, out)
}

/// Forward evaluation only, for the numeric side.
pub fn value_of<F>(build: &F, params: &[Tensor]) -> f64
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>,
{
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = params.iter().map(|p| tape.input(p.clone())).collect();
    build(&tape, &vars).item()
}

/// Compare analytic gradients against central finite differences.
///
/// Returns the maximum over all parameter coordinates of
/// `|analytic - central| / (|analytic| + |central| + 1e-12)`.
/// `build` must be deterministic given the parameters.
pub fn finite_diff_check<F>(build: F, params: &[Tensor], eps: f64) -> f64
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>,
{
    let (_, analytic) = value_and_grads(&build, params);
    let mut worst = 0.0f64;
    let mut work: Vec<Tensor> = params.to_vec();
    for (pi, grad) in analytic.iter().enumerate() {
        for ci in 0..params[pi].numel() {
            let orig = work[pi].data()[ci];
            work[pi].data_mut()[ci] = orig + eps;
            let f_plus = value_of(&build, &work);
            work[pi].data_mut()[ci] = orig - eps;
            let f_minus = value_of(&build, &work);
            work[pi].data_mut()[ci] = orig;
            let central = (f_plus - f_minus) / (2.0 * eps);
            let a = grad.data()[ci];
            let rel = (a - central).abs() / (a.abs() + central.abs() + 1e-12);
            worst = worst.max(rel);
        }
    }
    worst
}


#[cfg(test)]
trait TestVarExt<'t> {
    fn take_per_row_vec(self) -> Var<'t>;
    fn sum_sq(self) -> Var<'t>;
}

#[cfg(test)]
impl<'t> TestVarExt<'t> for Var<'t> {
    /// Pick index 2 of a vector by reshaping to a single row.
    fn take_per_row_vec(self) -> Var<'t> {
        let n = self.shape()[0];
        self.reshape(&[1, n]).take_per_row(&[2]).sum()
    }

    fn sum_sq(self) -> Var<'t> {
        (self * self).sum()
    }
}
