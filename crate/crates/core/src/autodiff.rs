//! Reverse-mode automatic differentiation over dense `f64` arrays.
//!
//! A [`Tape`] records every primitive op in creation order, so the node list
//! is already topologically sorted. [`Tape::backward`] walks it once in
//! reverse and accumulates gradients in that fixed order, which keeps
//! training bitwise reproducible for a given seed.
//!
//! Every op checks its output for NaN/Inf and fails with
//! [`Error::NonFinite`] instead of letting a poisoned value propagate.

use crate::error::{Error, Result};

/// Dense row-major array.
#[derive(Clone, Debug, PartialEq)]
pub struct Array {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Array {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::dim(format!(
                "shape {:?} holds {} values, got {}",
                shape,
                expected,
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![],
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    /// Builds an `n×2` array from 2-D points.
    pub fn from_points(points: &[[f64; 2]]) -> Self {
        Self {
            shape: vec![points.len(), 2],
            data: points.iter().flat_map(|p| p.iter().copied()).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Number of rows of a 2-D array (or length of a 1-D one).
    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    /// Row width; 1 for vectors and scalars.
    pub fn cols(&self) -> usize {
        self.shape.iter().skip(1).product()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    /// The single value of a one-element array.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(Error::contract(format!(
                "expected a scalar, got shape {:?}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    /// Copies rows `[start, start + n)` into a new array.
    pub fn slice_rows(&self, start: usize, n: usize) -> Result<Self> {
        if start + n > self.rows() {
            return Err(Error::dim(format!(
                "rows {}..{} out of bounds for {} rows",
                start,
                start + n,
                self.rows()
            )));
        }
        let c = self.cols();
        let mut shape = self.shape.clone();
        if shape.is_empty() {
            shape.push(n);
        } else {
            shape[0] = n;
        }
        Self::new(shape, self.data[start * c..(start + n) * c].to_vec())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Constant,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    LeakyRelu(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Square(Var),
    Scale(Var, f64),
    Sum(Var),
    Mean(Var),
    Slice(Var, usize),
    BceWithLogits(Var, Vec<f64>),
}

#[derive(Debug)]
struct Node {
    value: Array,
    op: Op,
    requires_grad: bool,
}

/// Record of primitive ops for one forward/backward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn finite(op: &'static str, data: &[f64]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { op })
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `out = op(a) · op(b) + beta·out` with `op(a)` of size `m×k` and `op(b)` of
/// size `k×n`. Transposed operands are read through strides, not copied.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    beta: f64,
    out: &mut [f64],
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(out.len(), m * n);
    let (rsa, csa) = if a_t { (1, m) } else { (k, 1) };
    let (rsb, csb) = if b_t { (1, k) } else { (n, 1) };
    // SAFETY: the asserts above guarantee every strided access stays inside
    // the three slices, and `out` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
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

    fn push(&mut self, value: Array, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A differentiable leaf.
    pub fn param(&mut self, value: Array) -> Result<Var> {
        finite("param", value.data())?;
        Ok(self.push(value, Op::Leaf, true))
    }

    /// A leaf excluded from differentiation.
    pub fn constant(&mut self, value: Array) -> Result<Var> {
        finite("constant", value.data())?;
        Ok(self.push(value, Op::Constant, false))
    }

    pub fn value(&self, v: Var) -> &Array {
        &self.nodes[v.0].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape().len() != 2 || bv.shape().len() != 2 {
            return Err(Error::dim(format!(
                "matmul expects matrices, got {:?} and {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let (m, k, k2, n) = (av.shape[0], av.shape[1], bv.shape[0], bv.shape[1]);
        if k != k2 {
            return Err(Error::dim(format!(
                "matmul inner dimensions disagree: {m}×{k} · {k2}×{n}"
            )));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, av.data(), false, bv.data(), false, 0.0, &mut out);
        finite("matmul", &out)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Array::matrix(m, n, out)?, Op::MatMul(a, b), rg))
    }

    fn same_shape(&self, name: &str, a: Var, b: Var) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::dim(format!(
                "{name}: shapes {:?} and {:?} differ",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        self.same_shape(name, a, b)?;
        let (av, bv) = (self.value(a), self.value(b));
        let out: Vec<f64> = av.data.iter().zip(&bv.data).map(|(&x, &y)| f(x, y)).collect();
        finite(name, &out)?;
        let value = Array::new(av.shape.clone(), out)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds a length-`n` bias to every row of an `m×n` matrix.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        let n = xv.cols();
        if xv.shape().len() != 2 || bv.len() != n {
            return Err(Error::dim(format!(
                "add_bias: bias of {} values cannot broadcast over {:?}",
                bv.len(),
                xv.shape()
            )));
        }
        let mut out = xv.data.clone();
        for row in out.chunks_mut(n) {
            for (o, b) in row.iter_mut().zip(&bv.data) {
                *o += b;
            }
        }
        finite("add_bias", &out)?;
        let value = Array::new(xv.shape.clone(), out)?;
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(value, Op::AddBias(x, bias), rg))
    }

    fn unary(
        &mut self,
        name: &'static str,
        x: Var,
        f: impl Fn(f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let xv = self.value(x);
        let out: Vec<f64> = xv.data.iter().map(|&v| f(v)).collect();
        finite(name, &out)?;
        let value = Array::new(xv.shape.clone(), out)?;
        let rg = self.rg(x);
        Ok(self.push(value, op, rg))
    }

    pub fn leaky_relu(&mut self, x: Var, alpha: f64) -> Result<Var> {
        self.unary(
            "leaky_relu",
            x,
            |v| if v > 0.0 { v } else { alpha * v },
            Op::LeakyRelu(x, alpha),
        )
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary("tanh", x, f64::tanh, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary("sigmoid", x, sigmoid, Op::Sigmoid(x))
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.unary("square", x, |v| v * v, Op::Square(x))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        self.unary("scale", x, |v| c * v, Op::Scale(x, c))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s: f64 = self.value(x).data.iter().sum();
        finite("sum", &[s])?;
        let rg = self.rg(x);
        Ok(self.push(Array::scalar(s), Op::Sum(x), rg))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.is_empty() {
            return Err(Error::input("mean of an empty array"));
        }
        let s = xv.data.iter().sum::<f64>() / xv.len() as f64;
        finite("mean", &[s])?;
        let rg = self.rg(x);
        Ok(self.push(Array::scalar(s), Op::Mean(x), rg))
    }

    /// Contiguous window of `src`'s data starting at `offset`, viewed with `shape`.
    pub fn slice(&mut self, src: Var, offset: usize, shape: Vec<usize>) -> Result<Var> {
        let len: usize = shape.iter().product();
        let sv = self.value(src);
        if offset + len > sv.len() {
            return Err(Error::dim(format!(
                "slice {}..{} out of bounds for {} values",
                offset,
                offset + len,
                sv.len()
            )));
        }
        let value = Array::new(shape, sv.data[offset..offset + len].to_vec())?;
        let rg = self.rg(src);
        Ok(self.push(value, Op::Slice(src, offset), rg))
    }

    /// Mean binary cross-entropy of `logits` against 0/1 `labels`, in the
    /// overflow-free form `max(l,0) − l·y + ln(1 + e^{−|l|})`.
    pub fn bce_with_logits(&mut self, logits: Var, labels: &[f64]) -> Result<Var> {
        let lv = self.value(logits);
        if lv.len() != labels.len() {
            return Err(Error::dim(format!(
                "bce_with_logits: {} logits vs {} labels",
                lv.len(),
                labels.len()
            )));
        }
        if lv.is_empty() {
            return Err(Error::input("bce_with_logits on an empty batch"));
        }
        if let Some(bad) = labels.iter().find(|&&y| y != 0.0 && y != 1.0) {
            return Err(Error::input(format!("label {bad} is not binary")));
        }
        let n = labels.len() as f64;
        let total: f64 = lv
            .data
            .iter()
            .zip(labels)
            .map(|(&l, &y)| l.max(0.0) - l * y + (-l.abs()).exp().ln_1p())
            .sum();
        let loss = total / n;
        finite("bce_with_logits", &[loss])?;
        let rg = self.rg(logits);
        Ok(self.push(
            Array::scalar(loss),
            Op::BceWithLogits(logits, labels.to_vec()),
            rg,
        ))
    }

    /// Gradients of the scalar `root` with respect to every node that
    /// depends on a [`Tape::param`] leaf.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if self.value(root).len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar root, got shape {:?}",
                self.value(root).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(vec![1.0]);

        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(&node.op, &node.value, &g, &mut grads);
            grads[i] = Some(g);
        }

        for (i, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                if !g.iter().all(|v| v.is_finite()) {
                    return Err(Error::NonFinite {
                        op: op_name(&self.nodes[i].op),
                    });
                }
            }
        }
        Ok(Gradients {
            lens: self.nodes[..=root.0].iter().map(|n| n.value.len()).collect(),
            grads,
        })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, contrib: Vec<f64>) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => {
                for (a, c) in acc.iter_mut().zip(contrib) {
                    *a += c;
                }
            }
            slot @ None => *slot = Some(contrib),
        }
    }

    fn propagate(&self, op: &Op, out: &Array, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match op {
            Op::Leaf | Op::Constant => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.shape[0], av.shape[1], bv.shape[1]);
                if self.rg(*a) {
                    let mut ga = vec![0.0; m * k];
                    gemm(m, n, k, g, false, bv.data(), true, 0.0, &mut ga);
                    self.accumulate(grads, *a, ga);
                }
                if self.rg(*b) {
                    let mut gb = vec![0.0; k * n];
                    gemm(k, m, n, av.data(), true, g, false, 0.0, &mut gb);
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate(grads, *b, g.to_vec());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate(grads, *b, g.iter().map(|v| -v).collect());
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.rg(*a) {
                    let ga = g.iter().zip(&bv.data).map(|(g, y)| g * y).collect();
                    self.accumulate(grads, *a, ga);
                }
                if self.rg(*b) {
                    let gb = g.iter().zip(&av.data).map(|(g, x)| g * x).collect();
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::AddBias(x, bias) => {
                self.accumulate(grads, *x, g.to_vec());
                if self.rg(*bias) {
                    let n = self.value(*bias).len();
                    let mut gb = vec![0.0; n];
                    for row in g.chunks(n) {
                        for (acc, v) in gb.iter_mut().zip(row) {
                            *acc += v;
                        }
                    }
                    self.accumulate(grads, *bias, gb);
                }
            }
            Op::LeakyRelu(x, alpha) => {
                let xv = self.value(*x);
                let gx = g
                    .iter()
                    .zip(&xv.data)
                    .map(|(g, &v)| if v > 0.0 { *g } else { alpha * g })
                    .collect();
                self.accumulate(grads, *x, gx);
            }
            Op::Tanh(x) => {
                let gx = g.iter().zip(&out.data).map(|(g, y)| g * (1.0 - y * y)).collect();
                self.accumulate(grads, *x, gx);
            }
            Op::Sigmoid(x) => {
                let gx = g.iter().zip(&out.data).map(|(g, y)| g * y * (1.0 - y)).collect();
                self.accumulate(grads, *x, gx);
            }
            Op::Square(x) => {
                let xv = self.value(*x);
                let gx = g.iter().zip(&xv.data).map(|(g, v)| 2.0 * g * v).collect();
                self.accumulate(grads, *x, gx);
            }
            Op::Scale(x, c) => {
                self.accumulate(grads, *x, g.iter().map(|v| c * v).collect());
            }
            Op::Sum(x) => {
                let n = self.value(*x).len();
                self.accumulate(grads, *x, vec![g[0]; n]);
            }
            Op::Mean(x) => {
                let n = self.value(*x).len();
                self.accumulate(grads, *x, vec![g[0] / n as f64; n]);
            }
            Op::Slice(src, offset) => {
                if self.rg(*src) {
                    let mut gs = vec![0.0; self.value(*src).len()];
                    gs[*offset..*offset + g.len()].copy_from_slice(g);
                    self.accumulate(grads, *src, gs);
                }
            }
            Op::BceWithLogits(logits, labels) => {
                let lv = self.value(*logits);
                let n = labels.len() as f64;
                let gl = lv
                    .data
                    .iter()
                    .zip(labels)
                    .map(|(&l, &y)| g[0] * (sigmoid(l) - y) / n)
                    .collect();
                self.accumulate(grads, *logits, gl);
            }
        }
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "param",
        Op::Constant => "constant",
        Op::MatMul(..) => "matmul",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::Mul(..) => "mul",
        Op::AddBias(..) => "add_bias",
        Op::LeakyRelu(..) => "leaky_relu",
        Op::Tanh(_) => "tanh",
        Op::Sigmoid(_) => "sigmoid",
        Op::Square(_) => "square",
        Op::Scale(..) => "scale",
        Op::Sum(_) => "sum",
        Op::Mean(_) => "mean",
        Op::Slice(..) => "slice",
        Op::BceWithLogits(..) => "bce_with_logits",
    }
}

/// Result of [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    lens: Vec<usize>,
}

impl Gradients {
    /// Gradient for `v`, or `None` if `v` does not influence the root.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient for `v`, with zeros where `v` does not influence the root.
    pub fn wrt(&self, v: Var) -> Vec<f64> {
        match self.get(v) {
            Some(g) => g.to_vec(),
            None => vec![0.0; self.lens.get(v.0).copied().unwrap_or(0)],
        }
    }
}

/// Compares the tape gradient of `f` at `theta` against central differences
/// with step `h`, returning `max_i |analytic − numeric| / max(1, |numeric|)`.
///
/// `f` receives a fresh tape and the leaf holding `theta` and must return a
/// scalar node.
pub fn grad_check<F>(f: F, theta: &[f64], h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::contract(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    let eval = |point: &[f64]| -> Result<f64> {
        let mut tape = Tape::new();
        let leaf = tape.param(Array::vector(point.to_vec()))?;
        let root = f(&mut tape, leaf)?;
        tape.value(root).item()
    };

    let mut tape = Tape::new();
    let leaf = tape.param(Array::vector(theta.to_vec()))?;
    let root = f(&mut tape, leaf)?;
    let analytic = tape.backward(root)?.wrt(leaf);

    let mut worst = 0.0f64;
    let mut point = theta.to_vec();
    for i in 0..theta.len() {
        point[i] = theta[i] + h;
        let up = eval(&point)?;
        point[i] = theta[i] - h;
        let down = eval(&point)?;
        point[i] = theta[i];
        let numeric = (up - down) / (2.0 * h);
        let err = (analytic[i] - numeric).abs() / numeric.abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}
