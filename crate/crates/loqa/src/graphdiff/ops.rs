//! Differentiable primitives: forward kernels, shape checks and reverse rules.

use super::tensor::Tensor;
use super::{GraphError, Var};

/// Recorded operation. Fields hold parent node indices plus whatever the
/// reverse rule needs beyond the parents' stored values.
#[derive(Debug, Clone)]
pub(super) enum Op {
    /// Differentiable leaf (parameter or other input).
    Leaf,
    /// Non-differentiable leaf; gradient accumulation skips it.
    Const,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Neg(usize),
    AddScalar(usize),
    MulScalar(usize, f64),
    /// `[m,k] x [k,n] -> [m,n]`
    Matmul(usize, usize),
    /// `[m,n] x [n] -> [m]`
    Matvec(usize, usize),
    /// Broadcast-add a `[n]` bias to every row of `[r,n]`.
    AddRow(usize, usize),
    /// Concatenate along the last axis; the `usize` is the left operand's width.
    Concat(usize, usize, usize),
    Sigmoid(usize),
    Tanh(usize),
    Relu(usize),
    Exp(usize),
    Log(usize),
    Softplus(usize),
    /// Row-wise softmax with log-sum-exp stabilization.
    Softmax(usize),
    /// Row-wise log-softmax with log-sum-exp stabilization.
    LogSoftmax(usize),
    /// Elementwise Huber with delta = 1.
    Huber(usize),
    Sum(usize),
    Mean(usize),
    SumRows(usize),
    /// `y[t] = x[t] + gamma * y[t+1]` over a vector.
    DiscountedCumsum(usize, f64),
    /// `out[i] = m[i, idx[i]]`
    TakePerRow(usize, Vec<usize>),
    Reshape(usize),
    StopGradient,
}

pub(super) struct Node {
    pub value: Tensor,
    pub op: Op,
}

/// Names of every registered differentiable primitive.
pub const PRIMITIVES: &[&str] = &[
    "add",
    "sub",
    "mul",
    "neg",
    "add_scalar",
    "mul_scalar",
    "matmul",
    "matvec",
    "add_row",
    "concat",
    "sigmoid",
    "tanh",
    "relu",
    "exp",
    "log",
    "softplus",
    "softmax",
    "log_softmax",
    "huber",
    "sum",
    "mean",
    "sum_rows",
    "discounted_cumsum",
    "take_per_row",
    "reshape",
    "stop_gradient",
];

fn same_tape<'t>(op: &'static str, a: Var<'t>, b: Var<'t>) -> Result<(), GraphError> {
    if std::ptr::eq(a.tape, b.tape) {
        Ok(())
    } else {
        Err(GraphError::Invalid { op, msg: "operands recorded on different tapes".into() })
    }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> GraphError {
    GraphError::ShapeMismatch { op, lhs: a.shape().to_vec(), rhs: b.shape().to_vec() }
}

fn binary(
    op: &'static str,
    a: Var<'_>,
    b: Var<'_>,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Tensor, GraphError> {
    same_tape(op, a, b)?;
    let nodes = a.tape.nodes.borrow();
    let (ta, tb) = (&nodes[a.idx].value, &nodes[b.idx].value);
    if ta.shape() != tb.shape() {
        return Err(mismatch(op, ta, tb));
    }
    let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
    Ok(Tensor::from_shape_vec(ta.shape().to_vec(), data))
}

fn unary(a: Var<'_>, f: impl Fn(f64) -> f64) -> Tensor {
    let nodes = a.tape.nodes.borrow();
    nodes[a.idx].value.map(f)
}

pub fn add<'t>(a: Var<'t>, b: Var<'t>) -> Result<Var<'t>, GraphError> {
    let v = binary("add", a, b, |x, y| x + y)?;
    a.tape.push("add", v, Op::Add(a.idx, b.idx))
}

pub fn sub<'t>(a: Var<'t>, b: Var<'t>) -> Result<Var<'t>, GraphError> {
    let v = binary("sub", a, b, |x, y| x - y)?;
    a.tape.push("sub", v, Op::Sub(a.idx, b.idx))
}

pub fn mul<'t>(a: Var<'t>, b: Var<'t>) -> Result<Var<'t>, GraphError> {
    let v = binary("mul", a, b, |x, y| x * y)?;
    a.tape.push("mul", v, Op::Mul(a.idx, b.idx))
}

pub fn neg(a: Var<'_>) -> Result<Var<'_>, GraphError> {
    let v = unary(a, |x| -x);
    a.tape.push("neg", v, Op::Neg(a.idx))
}

pub fn add_scalar(a: Var<'_>, c: f64) -> Result<Var<'_>, GraphError> {
    let v = unary(a, |x| x + c);
    a.tape.push("add_scalar", v, Op::AddScalar(a.idx))
}

pub fn mul_scalar(a: Var<'_>, c: f64) -> Result<Var<'_>, GraphError> {
    let v = unary(a, |x| x * c);
    a.tape.push("mul_scalar", v, Op::MulScalar(a.idx, c))
}

/// `[m,k] x [k,n] -> [m,n]`.
pub fn matmul<'t>(a: Var<'t>, b: Var<'t>) -> Result<Var<'t>, GraphError> {
    same_tape("matmul", a, b)?;
    let out = {
        let nodes = a.tape.nodes.borrow();
        let (ta, tb) = (&nodes[a.idx].value, &nodes[b.idx].value);
        if ta.rank() != 2 || tb.rank() != 2 || ta.cols() != tb.rows() {
            return Err(mismatch("matmul", ta, tb));
        }
        mm_nn(ta, tb)
    };
    a.tape.push("matmul", out, Op::Matmul(a.idx, b.idx))
}

/// `[m,n] x [n] -> [m]`.
pub fn matvec<'t>(w: Var<'t>, x: Var<'t>) -> Result<Var<'t>, GraphError> {
    same_tape("matvec", w, x)?;
    let out = {
        let nodes = w.tape.nodes.borrow();
        let (tw, tx) = (&nodes[w.idx].value, &nodes[x.idx].value);
        if tw.rank() != 2 || tx.rank() != 1 || tw.cols() != tx.numel() {
            return Err(mismatch("matvec", tw, tx));
        }
        let (m, n) = (tw.rows(), tw.cols());
        let mut out = vec![0.0; m];
        for i in 0..m {
            let row = &tw.data()[i * n..(i + 1) * n];
            out[i] = row.iter().zip(tx.data()).map(|(&a, &b)| a * b).sum();
        }
        Tensor::vector(out)
    };
    w.tape.push("matvec", out, Op::Matvec(w.idx, x.idx))
}

/// Broadcast-add a bias vector to every row of a matrix.
pub fn add_row<'t>(m: Var<'t>, b: Var<'t>) -> Result<Var<'t>, GraphError> {
    same_tape("add_row", m, b)?;
    let out = {
        let nodes = m.tape.nodes.borrow();
        let (tm, tb) = (&nodes[m.idx].value, &nodes[b.idx].value);
        if tm.rank() != 2 || tb.rank() != 1 || tm.cols() != tb.numel() {
            return Err(mismatch("add_row", tm, tb));
        }
        let (r, c) = (tm.rows(), tm.cols());
        let mut data = tm.data().to_vec();
        for i in 0..r {
            for j in 0..c {
                data[i * c + j] += tb.data()[j];
            }
        }
        Tensor::matrix(r, c, data)
    };
    m.tape.push("add_row", out, Op::AddRow(m.idx, b.idx))
}

/// Concatenate along the last axis (vectors end to end; matrices column-wise).
pub fn concat<'t>(a: Var<'t>, b: Var<'t>) -> Result<Var<'t>, GraphError> {
    same_tape("concat", a, b)?;
    let (out, split) = {
        let nodes = a.tape.nodes.borrow();
        let (ta, tb) = (&nodes[a.idx].value, &nodes[b.idx].value);
        match (ta.rank(), tb.rank()) {
            (1, 1) => {
                let mut data = ta.data().to_vec();
                data.extend_from_slice(tb.data());
                (Tensor::vector(data), ta.numel())
            }
            (2, 2) if ta.rows() == tb.rows() => {
                let (r, c1, c2) = (ta.rows(), ta.cols(), tb.cols());
                let mut data = Vec::with_capacity(r * (c1 + c2));
                for i in 0..r {
                    data.extend_from_slice(&ta.data()[i * c1..(i + 1) * c1]);
                    data.extend_from_slice(&tb.data()[i * c2..(i + 1) * c2]);
                }
                (Tensor::matrix(r, c1 + c2, data), c1)
            }
            _ => return Err(mismatch("concat", ta, tb)),
        }
    };
    a.tape.push("concat", out, Op::Concat(a.idx, b.idx, split))
}

pub fn sigmoid(a: Var<'_>) -> Result<Var<'_>, GraphError> {
    let v = unary(a, sigmoid_f);
    a.tape.push("sigmoid", v, Op::Sigmoid(a.idx))
}

pub fn tanh(a: Var<'_>) -> Result<Var<'_>, GraphError> {
    let v = unary(a, f64::tanh);
    a.tape.push("tanh", v, Op::Tanh(a.idx))
}

pub fn relu(a: Var<'_>) -> Result<Var<'_>, GraphError> {
    let v = unary(a, |x| if x > 0.0 { x } else { 0.0 });
    a.tape.push("relu", v, Op::Relu(a.idx))
}

pub fn exp(a: Var<'_>) -> Result<Var<'_>, GraphError> {
    let v = unary(a, f64::exp);
    a.tape.push("exp", v, Op::Exp(a.idx))
}

pub fn log(a: Var<'_>) -> Result<Var<'_>, GraphError> {
    let v = unary(a, f64::ln);
    a.tape.push("log", v, Op::Log(a.idx))
}

pub fn softplus(a: Var<'_>) -> Result<Var<'_>, GraphError> {
    let v = unary(a, softplus_f);
    a.tape.push("softplus", v, Op::Softplus(a.idx))
}

/// Row-wise softmax; a vector counts as a single row.
pub fn softmax(a: Var<'_>) -> Result<Var<'_>, GraphError> {
    let out = {
        let nodes = a.tape.nodes.borrow();
        rowwise(&nodes[a.idx].value, "softmax", softmax_row)?
    };
    a.tape.push("softmax", out, Op::Softmax(a.idx))
}

/// Row-wise log-softmax; a vector counts as a single row.
pub fn log_softmax(a: Var<'_>) -> Result<Var<'_>, GraphError> {
    let out = {
        let nodes = a.tape.nodes.borrow();
        rowwise(&nodes[a.idx].value, "log_softmax", log_softmax_row)?
    };
    a.tape.push("log_softmax", out, Op::LogSoftmax(a.idx))
}

/// Elementwise Huber loss with delta fixed at 1.
pub fn huber(a: Var<'_>) -> Result<Var<'_>, GraphError> {
    let v = unary(a, |x| if x.abs() <= 1.0 { 0.5 * x * x } else { x.abs() - 0.5 });
    a.tape.push("huber", v, Op::Huber(a.idx))
}

pub fn sum(a: Var<'_>) -> Result<Var<'_>, GraphError> {
    let v = {
        let nodes = a.tape.nodes.borrow();
        Tensor::scalar(nodes[a.idx].value.data().iter().sum())
    };
    a.tape.push("sum", v, Op::Sum(a.idx))
}

pub fn mean(a: Var<'_>) -> Result<Var<'_>, GraphError> {
    let v = {
        let nodes = a.tape.nodes.borrow();
        let t = &nodes[a.idx].value;
        if t.numel() == 0 {
            return Err(GraphError::Invalid { op: "mean", msg: "empty tensor".into() });
        }
        Tensor::scalar(t.data().iter().sum::<f64>() / t.numel() as f64)
    };
    a.tape.push("mean", v, Op::Mean(a.idx))
}

/// Sum over the last axis of a matrix: `[r,c] -> [r]`.
pub fn sum_rows(a: Var<'_>) -> Result<Var<'_>, GraphError> {
    let v = {
        let nodes = a.tape.nodes.borrow();
        let t = &nodes[a.idx].value;
        if t.rank() != 2 {
            return Err(GraphError::Invalid { op: "sum_rows", msg: format!("expected rank 2, got shape {:?}", t.shape()) });
        }
        let (r, c) = (t.rows(), t.cols());
        let data = (0..r).map(|i| t.data()[i * c..(i + 1) * c].iter().sum()).collect();
        Tensor::vector(data)
    };
    a.tape.push("sum_rows", v, Op::SumRows(a.idx))
}

/// Reverse-time discounted cumulative sum over a vector:
/// `y[t] = x[t] + gamma * y[t+1]`.
pub fn discounted_cumsum(a: Var<'_>, gamma: f64) -> Result<Var<'_>, GraphError> {
    let v = {
        let nodes = a.tape.nodes.borrow();
        let t = &nodes[a.idx].value;
        if t.rank() != 1 {
            return Err(GraphError::Invalid {
                op: "discounted_cumsum",
                msg: format!("expected rank 1, got shape {:?}", t.shape()),
            });
        }
        let mut out = t.data().to_vec();
        let n = out.len();
        for i in (0..n.saturating_sub(1)).rev() {
            out[i] += gamma * out[i + 1];
        }
        Tensor::vector(out)
    };
    a.tape.push("discounted_cumsum", v, Op::DiscountedCumsum(a.idx, gamma))
}

/// Select one entry per row: `out[i] = m[i, idx[i]]`.
pub fn take_per_row<'t>(m: Var<'t>, idx: &[usize]) -> Result<Var<'t>, GraphError> {
    let v = {
        let nodes = m.tape.nodes.borrow();
        let t = &nodes[m.idx].value;
        if t.rank() != 2 || t.rows() != idx.len() {
            return Err(GraphError::Invalid {
                op: "take_per_row",
                msg: format!("shape {:?} with {} indices", t.shape(), idx.len()),
            });
        }
        if let Some(&bad) = idx.iter().find(|&&j| j >= t.cols()) {
            return Err(GraphError::Invalid {
                op: "take_per_row",
                msg: format!("index {} out of range for {} columns", bad, t.cols()),
            });
        }
        Tensor::vector(idx.iter().enumerate().map(|(i, &j)| t.at2(i, j)).collect())
    };
    m.tape.push("take_per_row", v, Op::TakePerRow(m.idx, idx.to_vec()))
}

pub fn reshape<'t>(a: Var<'t>, shape: &[usize]) -> Result<Var<'t>, GraphError> {
    let v = {
        let nodes = a.tape.nodes.borrow();
        let t = &nodes[a.idx].value;
        if t.numel() != shape.iter().product::<usize>() {
            return Err(GraphError::Invalid {
                op: "reshape",
                msg: format!("cannot reshape {:?} to {:?}", t.shape(), shape),
            });
        }
        Tensor::from_shape_vec(shape.to_vec(), t.data().to_vec())
    };
    a.tape.push("reshape", v, Op::Reshape(a.idx))
}

/// Identity forward; contributes zero gradient to every ancestor.
pub fn stop_gradient(a: Var<'_>) -> Result<Var<'_>, GraphError> {
    let v = {
        let nodes = a.tape.nodes.borrow();
        nodes[a.idx].value.clone()
    };
    a.tape.push("stop_gradient", v, Op::StopGradient)
}

// ---- scalar kernels ----

fn sigmoid_f(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus_f(x: f64) -> f64 {
    // max(x, 0) + log1p(exp(-|x|))
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn rowwise(t: &Tensor, op: &'static str, f: impl Fn(&[f64], &mut [f64])) -> Result<Tensor, GraphError> {
    match t.rank() {
        1 => {
            let mut out = vec![0.0; t.numel()];
            f(t.data(), &mut out);
            Ok(Tensor::vector(out))
        }
        2 => {
            let (r, c) = (t.rows(), t.cols());
            let mut out = vec![0.0; r * c];
            for i in 0..r {
                f(&t.data()[i * c..(i + 1) * c], &mut out[i * c..(i + 1) * c]);
            }
            Ok(Tensor::matrix(r, c, out))
        }
        _ => Err(GraphError::Invalid { op, msg: format!("expected rank 1 or 2, got {:?}", t.shape()) }),
    }
}

fn softmax_row(x: &[f64], out: &mut [f64]) {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for (o, &v) in out.iter_mut().zip(x) {
        *o = (v - m).exp();
        z += *o;
    }
    for o in out.iter_mut() {
        *o /= z;
    }
}

fn log_softmax_row(x: &[f64], out: &mut [f64]) {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = x.iter().map(|&v| (v - m).exp()).sum();
    let lse = m + z.ln();
    for (o, &v) in out.iter_mut().zip(x) {
        *o = v - lse;
    }
}

// ---- matmul kernels (row-major, contiguous inner loops) ----

/// `a [m,k] * b [k,n] -> [m,n]`
pub(super) fn mm_nn(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let mut out = vec![0.0; m * n];
    let (ad, bd) = (a.data(), b.data());
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = ad[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &bd[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    Tensor::matrix(m, n, out)
}

/// `a [m,q] * b^T where b [n,q] -> [m,n]` (dot products of rows).
pub(super) fn mm_nt(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, q, n) = (a.rows(), a.cols(), b.rows());
    let mut out = vec![0.0; m * n];
    let (ad, bd) = (a.data(), b.data());
    for i in 0..m {
        let arow = &ad[i * q..(i + 1) * q];
        for j in 0..n {
            let brow = &bd[j * q..(j + 1) * q];
            out[i * n + j] = arow.iter().zip(brow).map(|(&x, &y)| x * y).sum();
        }
    }
    Tensor::matrix(m, n, out)
}

/// `a^T * b where a [q,m], b [q,n] -> [m,n]`.
pub(super) fn mm_tn(a: &Tensor, b: &Tensor) -> Tensor {
    let (q, m, n) = (a.rows(), a.cols(), b.cols());
    let mut out = vec![0.0; m * n];
    let (ad, bd) = (a.data(), b.data());
    for p in 0..q {
        for i in 0..m {
            let api = ad[p * m + i];
            if api == 0.0 {
                continue;
            }
            let brow = &bd[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += api * bv;
            }
        }
    }
    Tensor::matrix(m, n, out)
}

// ---- reverse rules ----

/// Accumulate this node's reverse contribution into its parents' grad slots.
///
/// `nodes` is the full tape, `grads[i]` the cotangent accumulated so far for
/// node `i`, and `g` the cotangent of node `idx` itself.
pub(super) fn backward_step(nodes: &[Node], grads: &mut [Option<Tensor>], idx: usize, g: &Tensor) {
    let acc = |grads: &mut [Option<Tensor>], p: usize, delta: Tensor| {
        if matches!(nodes[p].op, Op::Const) {
            return;
        }
        match &mut grads[p] {
            Some(t) => t.axpy(1.0, &delta),
            slot => *slot = Some(delta),
        }
    };
    match &nodes[idx].op {
        Op::Leaf | Op::Const => {}
        Op::Add(a, b) => {
            acc(grads, *a, g.clone());
            acc(grads, *b, g.clone());
        }
        Op::Sub(a, b) => {
            acc(grads, *a, g.clone());
            acc(grads, *b, g.map(|v| -v));
        }
        Op::Mul(a, b) => {
            let da = {
                let tb = &nodes[*b].value;
                let mut d = g.clone();
                for (x, y) in d.data_mut().iter_mut().zip(tb.data()) {
                    *x *= y;
                }
                d
            };
            let db = {
                let ta = &nodes[*a].value;
                let mut d = g.clone();
                for (x, y) in d.data_mut().iter_mut().zip(ta.data()) {
                    *x *= y;
                }
                d
            };
            acc(grads, *a, da);
            acc(grads, *b, db);
        }
        Op::Neg(a) => acc(grads, *a, g.map(|v| -v)),
        Op::AddScalar(a) => acc(grads, *a, g.clone()),
        Op::MulScalar(a, c) => {
            let c = *c;
            acc(grads, *a, g.map(|v| v * c));
        }
        Op::Matmul(a, b) => {
            // dA = G * B^T ; dB = A^T * G
            acc(grads, *a, mm_nt(g, &nodes[*b].value));
            acc(grads, *b, mm_tn(&nodes[*a].value, g));
        }
        Op::Matvec(w, x) => {
            let tw = &nodes[*w].value;
            let tx = &nodes[*x].value;
            let (m, n) = (tw.rows(), tw.cols());
            let mut dw = vec![0.0; m * n];
            for i in 0..m {
                let gi = g.data()[i];
                if gi != 0.0 {
                    for j in 0..n {
                        dw[i * n + j] = gi * tx.data()[j];
                    }
                }
            }
            let mut dx = vec![0.0; n];
            for i in 0..m {
                let gi = g.data()[i];
                if gi != 0.0 {
                    let row = &tw.data()[i * n..(i + 1) * n];
                    for (d, &wv) in dx.iter_mut().zip(row) {
                        *d += gi * wv;
                    }
                }
            }
            acc(grads, *w, Tensor::matrix(m, n, dw));
            acc(grads, *x, Tensor::vector(dx));
        }
        Op::AddRow(m, b) => {
            let (r, c) = (nodes[*m].value.rows(), nodes[*m].value.cols());
            let mut db = vec![0.0; c];
            for i in 0..r {
                for j in 0..c {
                    db[j] += g.data()[i * c + j];
                }
            }
            acc(grads, *m, g.clone());
            acc(grads, *b, Tensor::vector(db));
        }
        Op::Concat(a, b, split) => {
            let ta = &nodes[*a].value;
            let tb = &nodes[*b].value;
            if ta.rank() == 1 {
                let da = Tensor::vector(g.data()[..*split].to_vec());
                let db = Tensor::vector(g.data()[*split..].to_vec());
                acc(grads, *a, da);
                acc(grads, *b, db);
            } else {
                let (r, c1, c2) = (ta.rows(), ta.cols(), tb.cols());
                let c = c1 + c2;
                let mut da = vec![0.0; r * c1];
                let mut db = vec![0.0; r * c2];
                for i in 0..r {
                    da[i * c1..(i + 1) * c1].copy_from_slice(&g.data()[i * c..i * c + c1]);
                    db[i * c2..(i + 1) * c2].copy_from_slice(&g.data()[i * c + c1..(i + 1) * c]);
                }
                acc(grads, *a, Tensor::matrix(r, c1, da));
                acc(grads, *b, Tensor::matrix(r, c2, db));
            }
        }
        Op::Sigmoid(a) => {
            let y = &nodes[idx].value;
            let mut d = g.clone();
            for (x, &s) in d.data_mut().iter_mut().zip(y.data()) {
                *x *= s * (1.0 - s);
            }
            acc(grads, *a, d);
        }
        Op::Tanh(a) => {
            let y = &nodes[idx].value;
            let mut d = g.clone();
            for (x, &t) in d.data_mut().iter_mut().zip(y.data()) {
                *x *= 1.0 - t * t;
            }
            acc(grads, *a, d);
        }
        Op::Relu(a) => {
            let input = &nodes[*a].value;
            let mut d = g.clone();
            for (x, &v) in d.data_mut().iter_mut().zip(input.data()) {
                if v <= 0.0 {
                    *x = 0.0;
                }
            }
            acc(grads, *a, d);
        }
        Op::Exp(a) => {
            let y = &nodes[idx].value;
            let mut d = g.clone();
            for (x, &e) in d.data_mut().iter_mut().zip(y.data()) {
                *x *= e;
            }
            acc(grads, *a, d);
        }
        Op::Log(a) => {
            let input = &nodes[*a].value;
            let mut d = g.clone();
            for (x, &v) in d.data_mut().iter_mut().zip(input.data()) {
                *x /= v;
            }
            acc(grads, *a, d);
        }
        Op::Softplus(a) => {
            let input = &nodes[*a].value;
            let mut d = g.clone();
            for (x, &v) in d.data_mut().iter_mut().zip(input.data()) {
                *x *= sigmoid_f(v);
            }
            acc(grads, *a, d);
        }
        Op::Softmax(a) => {
            let y = &nodes[idx].value;
            let c = if y.rank() == 2 { y.cols() } else { y.numel() };
            let rows = y.numel() / c;
            let mut d = vec![0.0; y.numel()];
            for i in 0..rows {
                let s = &y.data()[i * c..(i + 1) * c];
                let gr = &g.data()[i * c..(i + 1) * c];
                let inner: f64 = s.iter().zip(gr).map(|(&sv, &gv)| sv * gv).sum();
                for j in 0..c {
                    d[i * c + j] = s[j] * (gr[j] - inner);
                }
            }
            acc(grads, *a, Tensor::from_shape_vec(y.shape().to_vec(), d));
        }
        Op::LogSoftmax(a) => {
            let y = &nodes[idx].value;
            let c = if y.rank() == 2 { y.cols() } else { y.numel() };
            let rows = y.numel() / c;
            let mut d = vec![0.0; y.numel()];
            for i in 0..rows {
                let lr = &y.data()[i * c..(i + 1) * c];
                let gr = &g.data()[i * c..(i + 1) * c];
                let gsum: f64 = gr.iter().sum();
                for j in 0..c {
                    d[i * c + j] = gr[j] - lr[j].exp() * gsum;
                }
            }
            acc(grads, *a, Tensor::from_shape_vec(y.shape().to_vec(), d));
        }
        Op::Huber(a) => {
            let input = &nodes[*a].value;
            let mut d = g.clone();
            for (x, &v) in d.data_mut().iter_mut().zip(input.data()) {
                *x *= v.clamp(-1.0, 1.0);
            }
            acc(grads, *a, d);
        }
        Op::Sum(a) => {
            let shape = nodes[*a].value.shape().to_vec();
            acc(grads, *a, Tensor::full(&shape, g.item()));
        }
        Op::Mean(a) => {
            let shape = nodes[*a].value.shape().to_vec();
            let n = nodes[*a].value.numel() as f64;
            acc(grads, *a, Tensor::full(&shape, g.item() / n));
        }
        Op::SumRows(a) => {
            let t = &nodes[*a].value;
            let (r, c) = (t.rows(), t.cols());
            let mut d = vec![0.0; r * c];
            for i in 0..r {
                let gi = g.data()[i];
                for j in 0..c {
                    d[i * c + j] = gi;
                }
            }
            acc(grads, *a, Tensor::matrix(r, c, d));
        }
        Op::DiscountedCumsum(a, gamma) => {
            // dx[k] = sum_{t <= k} gamma^(k-t) g[t]: a forward-time scan.
            let mut d = g.data().to_vec();
            for k in 1..d.len() {
                d[k] += gamma * d[k - 1];
            }
            acc(grads, *a, Tensor::vector(d));
        }
        Op::TakePerRow(m, idx_list) => {
            let t = &nodes[*m].value;
            let (r, c) = (t.rows(), t.cols());
            let mut d = vec![0.0; r * c];
            for (i, &j) in idx_list.iter().enumerate() {
                d[i * c + j] = g.data()[i];
            }
            acc(grads, *m, Tensor::matrix(r, c, d));
        }
        Op::Reshape(a) => {
            let shape = nodes[*a].value.shape().to_vec();
            acc(grads, *a, Tensor::from_shape_vec(shape, g.data().to_vec()));
        }
        Op::StopGradient => {}
    }
}
