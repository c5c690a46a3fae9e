//! Minimal reverse-mode automatic differentiation over scalar/vector/matrix
//! values.
//!
//! Operations are recorded on a [`Tape`] in execution order; [`Tape::backward`]
//! replays them in exact reverse order and accumulates cotangents. Everything
//! is 64-bit. A tape and its [`Var`] handles are confined to one thread;
//! parameters travel between threads as plain [`Tensor`] values.

mod ops;
mod tensor;

pub mod check;

pub use ops::PRIMITIVES;
pub use tensor::Tensor;

use std::cell::RefCell;
use std::ops::{Add, Mul, Neg, Sub};

use ops::{Node, Op};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    ShapeMismatch { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("backward: loss must be a scalar, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("{op}: {msg}")]
    Invalid { op: &'static str, msg: String },
}

/// Records primitives in topological (execution) order.
///
/// Rebuilt (or [`Tape::reset`]) once per training iteration; no graphs are
/// retained across iterations. The generation counter distinguishes handles
/// from earlier uses of a reused tape.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    generation: u64,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: RefCell::new(Vec::new()), generation: 0 }
    }

    /// Clear all recorded nodes, keeping the allocation for reuse.
    pub fn reset(&mut self) {
        self.nodes.get_mut().clear();
        self.generation += 1;
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    /// Record a differentiable leaf (a parameter or other input).
    pub fn input(&self, value: Tensor) -> Var<'_> {
        self.push("input", value, Op::Leaf).expect("finite input")
    }

    /// Record a non-differentiable leaf; gradients never accumulate into it.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push("constant", value, Op::Const).expect("finite constant")
    }

    pub fn scalar(&self, v: f64) -> Var<'_> {
        self.constant(Tensor::scalar(v))
    }

    fn push(&self, op_name: &'static str, value: Tensor, op: Op) -> Result<Var<'_>, GraphError> {
        if !value.is_finite() {
            return Err(GraphError::NonFinite { op: op_name });
        }
        let mut nodes = self.nodes.borrow_mut();
        let idx = nodes.len();
        nodes.push(Node { value, op });
        Ok(Var { tape: self, idx })
    }

    /// Reverse-mode sweep from a scalar loss. Every node reachable from the
    /// loss gets its cotangent; read them out of the returned [`Gradients`].
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients, GraphError> {
        let nodes = self.nodes.borrow();
        let loss_val = &nodes[loss.idx].value;
        if loss_val.numel() != 1 {
            return Err(GraphError::NonScalarLoss { shape: loss_val.shape().to_vec() });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[loss.idx] = Some(Tensor::full(loss_val.shape(), 1.0));
        for idx in (0..=loss.idx).rev() {
            if let Some(g) = grads[idx].take() {
                ops::backward_step(&nodes, &mut grads, idx, &g);
                grads[idx] = Some(g);
            }
        }
        Ok(Gradients { grads, generation: self.generation })
    }
}

/// Handle to a node on a tape. Cheap to copy; panics on misuse via the
/// operator sugar, while the functions in [`ops`] return structured errors.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    idx: usize,
}

/// Per-node cotangents produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    generation: u64,
}

impl Gradients {
    /// Gradient of the loss w.r.t. `v`, or `None` if the loss does not
    /// depend on it.
    pub fn get(&self, v: Var<'_>) -> Option<&Tensor> {
        assert_eq!(v.tape.generation, self.generation, "gradients from a stale tape generation");
        self.grads.get(v.idx).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or a zero tensor of the given shape.
    pub fn get_or_zeros(&self, v: Var<'_>, shape: &[usize]) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
}

macro_rules! unary_method {
    ($name:ident) => {
        pub fn $name(self) -> Var<'t> {
            ops::$name(self).unwrap_or_else(|e| panic!("{e}"))
        }
    };
}

impl<'t> Var<'t> {
    pub fn value(&self) -> Tensor {
        self.tape.nodes.borrow()[self.idx].value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.idx].value.shape().to_vec()
    }

    pub fn item(&self) -> f64 {
        self.tape.nodes.borrow()[self.idx].value.item()
    }

    /// Apply `f` to the stored value without cloning it.
    pub fn with_value<R>(&self, f: impl FnOnce(&Tensor) -> R) -> R {
        f(&self.tape.nodes.borrow()[self.idx].value)
    }

    unary_method!(sigmoid);
    unary_method!(tanh);
    unary_method!(relu);
    unary_method!(exp);
    unary_method!(log);
    unary_method!(softplus);
    unary_method!(softmax);
    unary_method!(log_softmax);
    unary_method!(huber);
    unary_method!(sum);
    unary_method!(mean);
    unary_method!(sum_rows);
    unary_method!(stop_gradient);

    pub fn add_scalar(self, c: f64) -> Var<'t> {
        ops::add_scalar(self, c).unwrap_or_else(|e| panic!("{e}"))
    }

    pub fn mul_scalar(self, c: f64) -> Var<'t> {
        ops::mul_scalar(self, c).unwrap_or_else(|e| panic!("{e}"))
    }

    pub fn matmul(self, rhs: Var<'t>) -> Var<'t> {
        ops::matmul(self, rhs).unwrap_or_else(|e| panic!("{e}"))
    }

    pub fn matvec(self, x: Var<'t>) -> Var<'t> {
        ops::matvec(self, x).unwrap_or_else(|e| panic!("{e}"))
    }

    pub fn add_row(self, bias: Var<'t>) -> Var<'t> {
        ops::add_row(self, bias).unwrap_or_else(|e| panic!("{e}"))
    }

    pub fn concat(self, rhs: Var<'t>) -> Var<'t> {
        ops::concat(self, rhs).unwrap_or_else(|e| panic!("{e}"))
    }

    pub fn discounted_cumsum(self, gamma: f64) -> Var<'t> {
        ops::discounted_cumsum(self, gamma).unwrap_or_else(|e| panic!("{e}"))
    }

    pub fn take_per_row(self, idx: &[usize]) -> Var<'t> {
        ops::take_per_row(self, idx).unwrap_or_else(|e| panic!("{e}"))
    }

    pub fn reshape(self, shape: &[usize]) -> Var<'t> {
        ops::reshape(self, shape).unwrap_or_else(|e| panic!("{e}"))
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        ops::add(self, rhs).unwrap_or_else(|e| panic!("{e}"))
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        ops::sub(self, rhs).unwrap_or_else(|e| panic!("{e}"))
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        ops::mul(self, rhs).unwrap_or_else(|e| panic!("{e}"))
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        ops::neg(self).unwrap_or_else(|e| panic!("{e}"))
    }
}

/// Checked primitive entry points; the `Var` methods are panicking sugar
/// over these.
pub mod prim {
    pub use super::ops::{
        add, add_row, add_scalar, concat, discounted_cumsum, exp, huber, log, log_softmax, matmul,
        matvec, mean, mul, mul_scalar, neg, relu, reshape, sigmoid, softmax, softplus,
        stop_gradient, sub, sum, sum_rows, take_per_row, tanh,
    };
}

/// `exp(x - stop_gradient(x))`: evaluates to exactly 1 in the forward pass
/// while injecting the gradient of `x` in the reverse pass.
pub fn magic_box(x: Var<'_>) -> Var<'_> {
    (x - x.stop_gradient()).exp()
}

/// Catalog of registered differentiable primitives.
pub fn primitive_set() -> &'static [&'static str] {
    PRIMITIVES
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grad_wrt<'t>(tape: &'t Tape, loss: Var<'t>, p: Var<'t>) -> Tensor {
        tape.backward(loss).unwrap().get_or_zeros(p, &p.shape())
    }

    #[test]
    fn sigmoid_at_zero_is_half() {
        let tape = Tape::new();
        let x = tape.input(Tensor::scalar(0.0));
        assert_eq!(x.sigmoid().item(), 0.5);
    }

    #[test]
    fn softmax_equal_logits_uniform() {
        let tape = Tape::new();
        let x = tape.input(Tensor::vector(vec![0.0, 0.0]));
        assert_eq!(x.softmax().value().data(), &[0.5, 0.5]);
    }

    #[test]
    fn huber_values() {
        let tape = Tape::new();
        let x = tape.input(Tensor::vector(vec![2.0, 0.5]));
        let h = x.huber().value();
        assert_eq!(h.data()[0], 1.5); // |x| - 0.5 beyond the kink
        assert_eq!(h.data()[1], 0.125); // 0.5 x^2 inside
    }

    #[test]
    fn stop_gradient_value_identity_zero_grad() {
        let tape = Tape::new();
        let x = tape.input(Tensor::scalar(3.7));
        let y = x.stop_gradient();
        assert_eq!(y.item(), 3.7);
        let loss = y.mul_scalar(2.0);
        let grads = tape.backward(loss).unwrap();
        assert!(grads.get(x).is_none());
    }

    #[test]
    fn magic_box_forward_identity_exact() {
        let tape = Tape::new();
        for v in [-123.4, -1.0, 0.0, 0.3, 8.5e7] {
            let x = tape.input(Tensor::scalar(v));
            assert_eq!(magic_box(x).item(), 1.0);
        }
    }

    #[test]
    fn magic_box_gradient_is_gradient_of_argument() {
        // d/dx exp(x - sg(x)) = 1 * dx at any x.
        let tape = Tape::new();
        let x = tape.input(Tensor::scalar(2.25));
        let y = magic_box(x.mul_scalar(3.0));
        let g = grad_wrt(&tape, y, x);
        assert!((g.item() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn backward_identity_param() {
        let tape = Tape::new();
        let p = tape.input(Tensor::scalar(5.0));
        let g = grad_wrt(&tape, p.add_scalar(0.0), p);
        assert_eq!(g.item(), 1.0);
    }

    #[test]
    fn backward_sum_matvec_is_outer_structure() {
        // loss = sum(W x): dW[i][j] = x[j] for every row i.
        let tape = Tape::new();
        let w = tape.input(Tensor::matrix(2, 3, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]));
        let x = tape.constant(Tensor::vector(vec![1.0, -2.0, 3.0]));
        let loss = w.matvec(x).sum();
        let g = grad_wrt(&tape, loss, w);
        assert_eq!(g.data(), &[1.0, -2.0, 3.0, 1.0, -2.0, 3.0]);
    }

    #[test]
    fn non_scalar_loss_is_error() {
        let tape = Tape::new();
        let x = tape.input(Tensor::vector(vec![1.0, 2.0]));
        match tape.backward(x) {
            Err(GraphError::NonScalarLoss { shape }) => assert_eq!(shape, vec![2]),
            other => panic!("expected NonScalarLoss, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn shape_mismatch_names_op_and_shapes() {
        let tape = Tape::new();
        let a = tape.input(Tensor::vector(vec![1.0, 2.0]));
        let b = tape.input(Tensor::vector(vec![1.0, 2.0, 3.0]));
        match prim::add(a, b) {
            Err(GraphError::ShapeMismatch { op, lhs, rhs }) => {
                assert_eq!(op, "add");
                assert_eq!(lhs, vec![2]);
                assert_eq!(rhs, vec![3]);
            }
            _ => panic!("expected shape mismatch"),
        }
    }

    #[test]
    fn non_finite_is_reported() {
        let tape = Tape::new();
        let x = tape.input(Tensor::scalar(0.0));
        match prim::log(x) {
            Err(GraphError::NonFinite { op }) => assert_eq!(op, "log"),
            _ => panic!("expected non-finite error"),
        }
    }

    #[test]
    fn discounted_cumsum_matches_brute_force() {
        let tape = Tape::new();
        let xs = vec![1.0, -0.5, 2.0, 0.25];
        let gamma = 0.9;
        let x = tape.input(Tensor::vector(xs.clone()));
        let y = x.discounted_cumsum(gamma).value();
        for t in 0..xs.len() {
            let expect: f64 =
                (t..xs.len()).map(|k| gamma.powi((k - t) as i32) * xs[k]).sum();
            assert!((y.data()[t] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_determinism_bit_identical() {
        let run = || {
            let tape = Tape::new();
            let x = tape.input(Tensor::vector(vec![0.3, -1.7, 2.9]));
            let y = (x.sigmoid().concat(x.tanh())).softmax().sum();
            y.item()
        };
        assert_eq!(run().to_bits(), run().to_bits());
    }

    #[test]
    fn backward_linearity() {
        // backward(a*f + b*g) == a*backward(f) + b*backward(g)
        fn build(tape: &Tape) -> (Var<'_>, Var<'_>, Var<'_>) {
            let p = tape.input(Tensor::vector(vec![0.4, -0.9]));
            let f = p.sigmoid().sum();
            let g = p.tanh().mean();
            (p, f, g)
        }
        let (a, b) = (2.5, -1.25);

        let tape = Tape::new();
        let (p, f, g) = build(&tape);
        let combo = f.mul_scalar(a) + g.mul_scalar(b);
        let d_combo = grad_wrt(&tape, combo, p);

        let tape2 = Tape::new();
        let (p2, f2, g2) = build(&tape2);
        let df = grad_wrt(&tape2, f2, p2);
        // g2 is on the same tape; a second backward pass is independent.
        let dg = grad_wrt(&tape2, g2, p2);

        for i in 0..2 {
            let lin = a * df.data()[i] + b * dg.data()[i];
            assert!((d_combo.data()[i] - lin).abs() < 1e-12);
        }
    }

    #[test]
    fn primitive_catalog_covers_required_set() {
        for required in [
            "add",
            "sub",
            "mul",
            "matvec",
            "concat",
            "sigmoid",
            "tanh",
            "exp",
            "log",
            "softmax",
            "huber",
            "sum",
            "mean",
            "discounted_cumsum",
            "stop_gradient",
        ] {
            assert!(primitive_set().contains(&required), "missing {required}");
        }
    }

    #[test]
    fn tape_reset_reuses_storage() {
        let mut tape = Tape::new();
        {
            let x = tape.input(Tensor::scalar(1.0));
            let _ = x.sigmoid();
        }
        assert_eq!(tape.len(), 2);
        tape.reset();
        assert_eq!(tape.len(), 0);
        assert_eq!(tape.generation(), 1);
        let y = tape.input(Tensor::scalar(2.0));
        assert_eq!(y.item(), 2.0);
    }
}
