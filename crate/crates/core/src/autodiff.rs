//! Reverse-mode automatic differentiation over a tensor tape.
//!
//! Backward passes are themselves recorded on the tape as ordinary nodes, so
//! a gradient can be differentiated again. Hessian-vector products use this
//! directly: `H v` is the gradient of `<grad(w), v>` taken by a second
//! reverse sweep.
//!
//! Tensors are row-major matrices; scalars are `1 x 1`. The ReLU derivative
//! is recorded as a constant step mask, which makes its second derivative
//! zero everywhere.

use std::sync::Arc;

use crate::error::{check_len, Error, Result};
use crate::numerics::DenseVector;
use crate::pruning::Mask;

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "tensor shape does not match data");
        Tensor { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor::new(rows, cols, vec![0.0; rows * cols])
    }

    pub fn scalar(x: f64) -> Self {
        Tensor::new(1, 1, vec![x])
    }

    pub fn row(data: Vec<f64>) -> Self {
        Tensor::new(1, data.len(), data)
    }

    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    fn same_shape(&self, other: &Tensor) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor::new(self.rows, self.cols, self.data.iter().map(|&x| f(x)).collect())
    }

    fn zip(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        assert!(self.same_shape(other), "elementwise shape mismatch");
        Tensor::new(
            self.rows,
            self.cols,
            self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        )
    }
}

fn matmul(a: &Tensor, b: &Tensor, ta: bool, tb: bool) -> Tensor {
    let (m, ka) = if ta { (a.cols, a.rows) } else { (a.rows, a.cols) };
    let (kb, n) = if tb { (b.cols, b.rows) } else { (b.rows, b.cols) };
    assert_eq!(ka, kb, "matmul inner dimensions differ");
    let k = ka;
    let mut out = vec![0.0; m * n];
    match (ta, tb) {
        (false, false) => {
            for i in 0..m {
                let row = &mut out[i * n..(i + 1) * n];
                for p in 0..k {
                    let av = a.data[i * k + p];
                    if av == 0.0 {
                        continue;
                    }
                    let brow = &b.data[p * n..(p + 1) * n];
                    for (o, &bv) in row.iter_mut().zip(brow) {
                        *o += av * bv;
                    }
                }
            }
        }
        (false, true) => {
            for i in 0..m {
                let arow = &a.data[i * k..(i + 1) * k];
                for j in 0..n {
                    let brow = &b.data[j * k..(j + 1) * k];
                    let mut acc = 0.0;
                    for (x, y) in arow.iter().zip(brow) {
                        acc += x * y;
                    }
                    out[i * n + j] = acc;
                }
            }
        }
        (true, false) => {
            // a is k x m, b is k x n.
            for p in 0..k {
                let brow = &b.data[p * n..(p + 1) * n];
                for i in 0..m {
                    let av = a.data[p * m + i];
                    if av == 0.0 {
                        continue;
                    }
                    let row = &mut out[i * n..(i + 1) * n];
                    for (o, &bv) in row.iter_mut().zip(brow) {
                        *o += av * bv;
                    }
                }
            }
        }
        (true, true) => {
            for i in 0..m {
                for j in 0..n {
                    let mut acc = 0.0;
                    for p in 0..k {
                        acc += a.data[p * m + i] * b.data[j * k + p];
                    }
                    out[i * n + j] = acc;
                }
            }
        }
    }
    Tensor::new(m, n, out)
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    /// Tensor times a `1 x 1` node.
    ScaleBy(Var, Var),
    /// `x` plus the `1 x cols` row `b` broadcast over rows.
    AddRow(Var, Var),
    SumRows(Var),
    BroadcastRows(Var),
    SumAll(Var),
    /// Each entry replaced by the sum of its row.
    RowSumBroadcast(Var),
    Relu(Var),
    Softmax(Var),
    SoftmaxXent { logits: Var, labels: Arc<[usize]> },
    Slice { x: Var, offset: usize },
    Embed { x: Var, offset: usize },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul { .. } => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::ScaleBy(..) => "scale_by",
            Op::AddRow(..) => "add_row",
            Op::SumRows(..) => "sum_rows",
            Op::BroadcastRows(..) => "broadcast_rows",
            Op::SumAll(..) => "sum_all",
            Op::RowSumBroadcast(..) => "row_sum_broadcast",
            Op::Relu(..) => "relu",
            Op::Softmax(..) => "softmax",
            Op::SoftmaxXent { .. } => "softmax_cross_entropy",
            Op::Slice { .. } => "slice",
            Op::Embed { .. } => "embed",
        }
    }
}

struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// An append-only record of tensor operations.
///
/// Node indices are topologically ordered by construction. The first node
/// whose value is not finite is remembered and reported by [`Tape::check`].
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    first_nonfinite: Option<(usize, &'static str)>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> Var {
        let id = self.nodes.len();
        if self.first_nonfinite.is_none() && value.data.iter().any(|x| !x.is_finite()) {
            self.first_nonfinite = Some((id, op.name()));
        }
        self.nodes.push(Node { op, value, requires_grad });
        Var(id)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Errors if any recorded value is non-finite, naming the first offender.
    pub fn check(&self) -> Result<()> {
        match self.first_nonfinite {
            None => Ok(()),
            Some((id, name)) => Err(Error::NumericalFailure(format!(
                "non-finite value at tape node {id} ({name})"
            ))),
        }
    }

    /// A differentiable input.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(Op::Leaf, t, true)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(Op::Leaf, t, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Var {
        let value = matmul(self.value(a), self.value(b), ta, tb);
        let rg = self.rg(a) || self.rg(b);
        self.push(Op::MatMul { a, b, ta, tb }, value, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip(self.value(b), |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        self.push(Op::Add(a, b), value, rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip(self.value(b), |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        self.push(Op::Sub(a, b), value, rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip(self.value(b), |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        self.push(Op::Mul(a, b), value, rg)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|x| c * x);
        let rg = self.rg(a);
        self.push(Op::Scale(a, c), value, rg)
    }

    pub fn scale_by(&mut self, a: Var, s: Var) -> Var {
        let sv = self.value(s);
        assert_eq!((sv.rows, sv.cols), (1, 1), "scale_by expects a scalar node");
        let c = sv.item();
        let value = self.value(a).map(|x| c * x);
        let rg = self.rg(a) || self.rg(s);
        self.push(Op::ScaleBy(a, s), value, rg)
    }

    pub fn add_row(&mut self, x: Var, b: Var) -> Var {
        let (xv, bv) = (self.value(x), self.value(b));
        assert!(bv.rows == 1 && bv.cols == xv.cols, "add_row shape mismatch");
        let mut data = xv.data.clone();
        for row in data.chunks_mut(xv.cols) {
            for (o, &bb) in row.iter_mut().zip(&bv.data) {
                *o += bb;
            }
        }
        let value = Tensor::new(xv.rows, xv.cols, data);
        let rg = self.rg(x) || self.rg(b);
        self.push(Op::AddRow(x, b), value, rg)
    }

    pub fn sum_rows(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let mut out = vec![0.0; xv.cols];
        for row in xv.data.chunks(xv.cols) {
            for (o, &v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        let value = Tensor::row(out);
        let rg = self.rg(x);
        self.push(Op::SumRows(x), value, rg)
    }

    pub fn broadcast_rows(&mut self, x: Var, rows: usize) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.rows, 1, "broadcast_rows expects a row");
        let mut data = Vec::with_capacity(rows * xv.cols);
        for _ in 0..rows {
            data.extend_from_slice(&xv.data);
        }
        let value = Tensor::new(rows, xv.cols, data);
        let rg = self.rg(x);
        self.push(Op::BroadcastRows(x), value, rg)
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let mut acc = 0.0;
        for &v in &self.value(x).data {
            acc += v;
        }
        let rg = self.rg(x);
        self.push(Op::SumAll(x), Tensor::scalar(acc), rg)
    }

    pub fn row_sum_broadcast(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let mut data = Vec::with_capacity(xv.data.len());
        for row in xv.data.chunks(xv.cols) {
            let mut s = 0.0;
            for &v in row {
                s += v;
            }
            data.extend(std::iter::repeat(s).take(xv.cols));
        }
        let value = Tensor::new(xv.rows, xv.cols, data);
        let rg = self.rg(x);
        self.push(Op::RowSumBroadcast(x), value, rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| if v > 0.0 { v } else { 0.0 });
        let rg = self.rg(x);
        self.push(Op::Relu(x), value, rg)
    }

    pub fn softmax(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let mut data = Vec::with_capacity(xv.data.len());
        for row in xv.data.chunks(xv.cols) {
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            let start = data.len();
            for &v in row {
                let e = (v - mx).exp();
                sum += e;
                data.push(e);
            }
            for e in &mut data[start..] {
                *e /= sum;
            }
        }
        let value = Tensor::new(xv.rows, xv.cols, data);
        let rg = self.rg(x);
        self.push(Op::Softmax(x), value, rg)
    }

    /// Mean softmax cross-entropy of `logits` (one row per sample) against
    /// integer labels. Log-sum-exp is shifted by the row maximum.
    pub fn softmax_xent(&mut self, logits: Var, labels: Arc<[usize]>) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.rows, labels.len(), "one label per logit row");
        let mut total = 0.0;
        for (row, &y) in lv.data.chunks(lv.cols).zip(labels.iter()) {
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for &v in row {
                sum += (v - mx).exp();
            }
            total += mx + sum.ln() - row[y];
        }
        let value = Tensor::scalar(total / lv.rows as f64);
        let rg = self.rg(logits);
        self.push(Op::SoftmaxXent { logits, labels }, value, rg)
    }

    /// Reads a `rows x cols` block out of a `1 x D` row, starting at `offset`.
    pub fn slice(&mut self, x: Var, offset: usize, rows: usize, cols: usize) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.rows, 1, "slice expects a flat row");
        assert!(offset + rows * cols <= xv.cols, "slice out of range");
        let value = Tensor::new(rows, cols, xv.data[offset..offset + rows * cols].to_vec());
        let rg = self.rg(x);
        self.push(Op::Slice { x, offset }, value, rg)
    }

    /// Writes `x` flattened into a zero `1 x total` row at `offset`.
    pub fn embed(&mut self, x: Var, offset: usize, total: usize) -> Var {
        let xv = self.value(x);
        assert!(offset + xv.data.len() <= total, "embed out of range");
        let mut data = vec![0.0; total];
        data[offset..offset + xv.data.len()].copy_from_slice(&xv.data);
        let rg = self.rg(x);
        self.push(Op::Embed { x, offset }, Tensor::row(data), rg)
    }

    /// Gradients of the scalar `out` with respect to each of `wrt`.
    ///
    /// The backward computation is recorded on this tape, so the returned
    /// nodes can be differentiated again. Inputs that `out` does not depend
    /// on get a zero constant.
    pub fn backward(&mut self, out: Var, wrt: &[Var]) -> Vec<Var> {
        let ov = self.value(out);
        assert_eq!((ov.rows, ov.cols), (1, 1), "backward needs a scalar output");
        let n = out.0 + 1;
        let mut grads: Vec<Option<Var>> = vec![None; n];
        grads[out.0] = Some(self.constant(Tensor::scalar(1.0)));

        for id in (0..n).rev() {
            let Some(g) = grads[id] else { continue };
            if !self.nodes[id].requires_grad {
                continue;
            }
            let op = self.nodes[id].op.clone();
            let node = Var(id);
            let mut send = |tape: &mut Tape, to: Var, contrib: Var| {
                grads[to.0] = Some(match grads[to.0] {
                    None => contrib,
                    Some(prev) => tape.add(prev, contrib),
                });
            };
            match op {
                Op::Leaf => {}
                Op::MatMul { a, b, ta, tb } => {
                    if self.rg(a) {
                        let da = if ta {
                            self.matmul(b, g, tb, true)
                        } else {
                            self.matmul(g, b, false, !tb)
                        };
                        send(self, a, da);
                    }
                    if self.rg(b) {
                        let db = if tb {
                            self.matmul(g, a, true, ta)
                        } else {
                            self.matmul(a, g, !ta, false)
                        };
                        send(self, b, db);
                    }
                }
                Op::Add(a, b) => {
                    if self.rg(a) {
                        send(self, a, g);
                    }
                    if self.rg(b) {
                        send(self, b, g);
                    }
                }
                Op::Sub(a, b) => {
                    if self.rg(a) {
                        send(self, a, g);
                    }
                    if self.rg(b) {
                        let nb = self.scale(g, -1.0);
                        send(self, b, nb);
                    }
                }
                Op::Mul(a, b) => {
                    if self.rg(a) {
                        let da = self.mul(g, b);
                        send(self, a, da);
                    }
                    if self.rg(b) {
                        let db = self.mul(g, a);
                        send(self, b, db);
                    }
                }
                Op::Scale(a, c) => {
                    let da = self.scale(g, c);
                    send(self, a, da);
                }
                Op::ScaleBy(a, s) => {
                    if self.rg(a) {
                        let da = self.scale_by(g, s);
                        send(self, a, da);
                    }
                    if self.rg(s) {
                        let prod = self.mul(g, a);
                        let ds = self.sum_all(prod);
                        send(self, s, ds);
                    }
                }
                Op::AddRow(x, b) => {
                    if self.rg(x) {
                        send(self, x, g);
                    }
                    if self.rg(b) {
                        let db = self.sum_rows(g);
                        send(self, b, db);
                    }
                }
                Op::SumRows(x) => {
                    let rows = self.value(x).rows;
                    let dx = self.broadcast_rows(g, rows);
                    send(self, x, dx);
                }
                Op::BroadcastRows(x) => {
                    let dx = self.sum_rows(g);
                    send(self, x, dx);
                }
                Op::SumAll(x) => {
                    let xv = self.value(x);
                    let ones = Tensor::new(xv.rows, xv.cols, vec![1.0; xv.data.len()]);
                    let ones = self.constant(ones);
                    let dx = self.scale_by(ones, g);
                    send(self, x, dx);
                }
                Op::RowSumBroadcast(x) => {
                    let dx = self.row_sum_broadcast(g);
                    send(self, x, dx);
                }
                Op::Relu(x) => {
                    let step = self.value(x).map(|v| if v > 0.0 { 1.0 } else { 0.0 });
                    let step = self.constant(step);
                    let dx = self.mul(g, step);
                    send(self, x, dx);
                }
                Op::Softmax(x) => {
                    // J^T g = s * (g - rowsum(s * g))
                    let sg = self.mul(node, g);
                    let rs = self.row_sum_broadcast(sg);
                    let srs = self.mul(node, rs);
                    let dx = self.sub(sg, srs);
                    send(self, x, dx);
                }
                Op::SoftmaxXent { logits, labels } => {
                    let lv = self.value(logits);
                    let (rows, cols) = (lv.rows, lv.cols);
                    let mut onehot = vec![0.0; rows * cols];
                    for (i, &y) in labels.iter().enumerate() {
                        onehot[i * cols + y] = 1.0;
                    }
                    let onehot = self.constant(Tensor::new(rows, cols, onehot));
                    let s = self.softmax(logits);
                    let diff = self.sub(s, onehot);
                    let mean = self.scale(diff, 1.0 / rows as f64);
                    let dl = self.scale_by(mean, g);
                    send(self, logits, dl);
                }
                Op::Slice { x, offset } => {
                    let total = self.value(x).cols;
                    let dx = self.embed(g, offset, total);
                    send(self, x, dx);
                }
                Op::Embed { x, offset } => {
                    let xv = self.value(x);
                    let (rows, cols) = (xv.rows, xv.cols);
                    let dx = self.slice(g, offset, rows, cols);
                    send(self, x, dx);
                }
            }
        }

        wrt.iter()
            .map(|&w| match grads.get(w.0).copied().flatten() {
                Some(g) => g,
                None => {
                    let wv = self.value(w);
                    let z = Tensor::zeros(wv.rows, wv.cols);
                    self.constant(z)
                }
            })
            .collect()
    }
}

/// A scalar loss defined on a flat parameter row.
///
/// `record` receives the effective (already masked) parameters as a
/// `1 x dim` node and must return a `1 x 1` node.
pub trait Objective: Sync {
    fn dim(&self) -> usize;
    fn record(&self, tape: &mut Tape, weights: Var) -> Var;
}

/// Loss and gradient at `mask ⊙ w`; the gradient is zero at masked
/// coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct GradResult {
    pub loss: f64,
    pub gradient: DenseVector,
}

fn check_inputs(obj: &dyn Objective, w: &DenseVector, mask: &Mask) -> Result<()> {
    check_len(obj.dim(), w.len())?;
    check_len(obj.dim(), mask.len())
}

/// Records `mask ⊙ w` with `w` as the differentiable leaf.
fn masked_param(tape: &mut Tape, w: &DenseVector, mask: &Mask) -> (Var, Var) {
    let leaf = tape.param(Tensor::row(w.as_slice().to_vec()));
    let m = tape.constant(Tensor::row(mask.as_f64()));
    let eff = tape.mul(leaf, m);
    (leaf, eff)
}

fn zero_masked(mut data: Vec<f64>, mask: &Mask) -> Vec<f64> {
    for (x, &on) in data.iter_mut().zip(mask.bits()) {
        if !on {
            *x = 0.0;
        }
    }
    data
}

fn finite_vector(data: Vec<f64>, what: &str) -> Result<DenseVector> {
    if let Some(i) = data.iter().position(|x| !x.is_finite()) {
        return Err(Error::NumericalFailure(format!(
            "{what} has a non-finite entry at coordinate {i}"
        )));
    }
    Ok(DenseVector::from_vec(data))
}

/// Forward pass only.
pub fn loss(obj: &dyn Objective, w: &DenseVector, mask: &Mask) -> Result<f64> {
    check_inputs(obj, w, mask)?;
    let mut tape = Tape::new();
    let (_, eff) = masked_param(&mut tape, w, mask);
    let out = obj.record(&mut tape, eff);
    tape.check()?;
    Ok(tape.value(out).item())
}

pub fn grad(obj: &dyn Objective, w: &DenseVector, mask: &Mask) -> Result<GradResult> {
    check_inputs(obj, w, mask)?;
    let mut tape = Tape::new();
    let (leaf, eff) = masked_param(&mut tape, w, mask);
    let out = obj.record(&mut tape, eff);
    tape.check()?;
    let loss = tape.value(out).item();
    let g = tape.backward(out, &[leaf])[0];
    tape.check()?;
    let gradient = zero_masked(tape.value(g).data.clone(), mask);
    Ok(GradResult {
        loss,
        gradient: finite_vector(gradient, "gradient")?,
    })
}

/// Hessian-vector product on the active subspace of `mask`.
///
/// Rows and columns of masked coordinates are zero: `v` is masked before
/// use and the result is zeroed at masked coordinates.
pub fn hvp(
    obj: &dyn Objective,
    w: &DenseVector,
    mask: &Mask,
    v: &DenseVector,
) -> Result<DenseVector> {
    check_inputs(obj, w, mask)?;
    check_len(obj.dim(), v.len())?;
    let mut tape = Tape::new();
    let (leaf, eff) = masked_param(&mut tape, w, mask);
    let out = obj.record(&mut tape, eff);
    tape.check()?;
    let g = tape.backward(out, &[leaf])[0];
    let vv = tape.constant(Tensor::row(zero_masked(v.as_slice().to_vec(), mask)));
    let gv = tape.mul(g, vv);
    let s = tape.sum_all(gv);
    let hv = tape.backward(s, &[leaf])[0];
    tape.check()?;
    let data = zero_masked(tape.value(hv).data.clone(), mask);
    finite_vector(data, "Hessian-vector product")
}

/// Separable quadratic `½ Σ λᵢ wᵢ²` (plus an optional linear term),
/// handy as an analytic objective.
#[derive(Clone, Debug)]
pub struct DiagonalQuadratic {
    pub curvature: Vec<f64>,
    pub linear: Vec<f64>,
}

impl DiagonalQuadratic {
    pub fn new(curvature: Vec<f64>) -> Self {
        let linear = vec![0.0; curvature.len()];
        DiagonalQuadratic { curvature, linear }
    }

    pub fn with_linear(curvature: Vec<f64>, linear: Vec<f64>) -> Self {
        assert_eq!(curvature.len(), linear.len());
        DiagonalQuadratic { curvature, linear }
    }
}

impl Objective for DiagonalQuadratic {
    fn dim(&self) -> usize {
        self.curvature.len()
    }

    fn record(&self, tape: &mut Tape, weights: Var) -> Var {
        let lam = tape.constant(Tensor::row(self.curvature.clone()));
        let lin = tape.constant(Tensor::row(self.linear.clone()));
        let lw = tape.mul(lam, weights);
        let q = tape.mul(lw, weights);
        let half = tape.scale(q, 0.5);
        let b = tape.mul(lin, weights);
        let terms = tape.add(half, b);
        tape.sum_all(terms)
    }
}
