//! Tape-based reverse-mode differentiation.

use crate::error::{Error, Result};

use super::array::{gemm, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

type VjpFn = Box<dyn Fn(&Tensor) -> Tensor + Send + Sync>;

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    AddBias(Var, Var),
    MatMul(Var, Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    Reshape(Var),
    Sum(Var),
    RowSum(Var),
    Exp(Var),
    Log(Var),
    Elu(Var),
    Square(Var),
    Clamp(Var, f64, f64),
    LogSumExp(Var),
    LogMeanExp(Var),
    RowLogSumExp(Var),
    GatherRows(Var, Vec<usize>),
    ScatterAddRows(Var, Vec<usize>),
    Custom(Var, VjpFn),
}

/// A computation tape. Nodes are appended in evaluation order, so the tape
/// order is a topological order for the backward sweep.
#[derive(Default)]
pub struct Graph {
    values: Vec<Tensor>,
    ops: Vec<Op>,
    needs_grad: Vec<bool>,
}

/// Gradients of one backward sweep, indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of a node, or `None` if the output does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of a node, zeros when the output does not depend on it.
    pub fn get_or_zeros(&self, v: Var, shape: (usize, usize)) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape.0, shape.1))
    }
}

fn shape_err(op: &str, a: (usize, usize), b: (usize, usize)) -> Error {
    Error::Dimension(format!("{op}: shapes {a:?} and {b:?}"))
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.values[v.0]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.values[v.0].shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.needs_grad[v.0]
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.values.push(value);
        self.ops.push(op);
        self.needs_grad.push(needs_grad);
        Var(self.values.len() - 1)
    }

    fn any(&self, vs: &[Var]) -> bool {
        vs.iter().any(|v| self.needs_grad[v.0])
    }

    /// A leaf that receives a gradient.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// A leaf treated as constant.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    fn zip(&mut self, a: Var, b: Var, name: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (x, y) = (&self.values[a.0], &self.values[b.0]);
        if x.shape() != y.shape() {
            return Err(shape_err(name, x.shape(), y.shape()));
        }
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        Tensor::new(x.rows(), x.cols(), data)
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let t = self.values[a.0].map(f);
        let ng = self.needs_grad[a.0];
        self.push(t, op, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip(a, b, "add", |p, q| p + q)?;
        let ng = self.any(&[a, b]);
        Ok(self.push(t, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip(a, b, "sub", |p, q| p - q)?;
        let ng = self.any(&[a, b]);
        Ok(self.push(t, Op::Sub(a, b), ng))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip(a, b, "mul", |p, q| p * q)?;
        let ng = self.any(&[a, b]);
        Ok(self.push(t, Op::Mul(a, b), ng))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.unary(a, Op::Scale(a, s), |x| s * x)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        self.unary(a, Op::AddScalar(a), |x| x + s)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, Op::Log(a), f64::ln)
    }

    pub fn elu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Elu(a), elu)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, Op::Clamp(a, lo, hi), |x| x.clamp(lo, hi))
    }

    /// `x + b` with the 1xC row `b` added to every row.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xs, bs) = (self.shape(x), self.shape(b));
        if bs != (1, xs.1) {
            return Err(shape_err("add_bias", xs, bs));
        }
        let mut t = self.values[x.0].clone();
        let bias = self.values[b.0].data().to_vec();
        for r in 0..xs.0 {
            for (v, bb) in t.row_mut(r).iter_mut().zip(&bias) {
                *v += bb;
            }
        }
        let ng = self.any(&[x, b]);
        Ok(self.push(t, Op::AddBias(x, b), ng))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.values[a.0].matmul(&self.values[b.0])?;
        let ng = self.any(&[a, b]);
        Ok(self.push(t, Op::MatMul(a, b), ng))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.shape(parts[0]).0;
        let mut cols = 0;
        for &p in parts {
            if self.shape(p).0 != rows {
                return Err(shape_err("concat_cols", self.shape(parts[0]), self.shape(p)));
            }
            cols += self.shape(p).1;
        }
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.values[p.0].row(r));
            }
        }
        let ng = self.any(parts);
        Ok(self.push(Tensor::new(rows, cols, data)?, Op::ConcatCols(parts.to_vec()), ng))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = self.shape(parts[0]).1;
        let mut data = Vec::new();
        for &p in parts {
            if self.shape(p).1 != cols {
                return Err(shape_err("concat_rows", self.shape(parts[0]), self.shape(p)));
            }
            data.extend_from_slice(self.values[p.0].data());
        }
        let rows = data.len() / cols.max(1);
        let ng = self.any(parts);
        Ok(self.push(Tensor::new(rows, cols, data)?, Op::ConcatRows(parts.to_vec()), ng))
    }

    /// Rows `start..start + len`.
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let x = &self.values[a.0];
        if start + len > x.rows() {
            return Err(Error::Dimension(format!("slice_rows {start}+{len} of {:?}", x.shape())));
        }
        let t = Tensor::new(len, x.cols(), x.data()[start * x.cols()..(start + len) * x.cols()].to_vec())?;
        let ng = self.needs_grad[a.0];
        Ok(self.push(t, Op::SliceRows(a, start), ng))
    }

    /// Columns `start..start + len`.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let x = &self.values[a.0];
        if start + len > x.cols() {
            return Err(Error::Dimension(format!("slice_cols {start}+{len} of {:?}", x.shape())));
        }
        let t = Tensor::from_fn(x.rows(), len, |r, c| x.get(r, start + c));
        let ng = self.needs_grad[a.0];
        Ok(self.push(t, Op::SliceCols(a, start), ng))
    }

    /// Same row-major data viewed with a new shape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let t = Tensor::new(rows, cols, self.values[a.0].data().to_vec())?;
        let ng = self.needs_grad[a.0];
        Ok(self.push(t, Op::Reshape(a), ng))
    }

    /// Sum of all entries, as 1x1.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.values[a.0].data().iter().sum();
        let ng = self.needs_grad[a.0];
        self.push(Tensor::scalar(s), Op::Sum(a), ng)
    }

    /// Per-row sums, as a column.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let x = &self.values[a.0];
        let t = Tensor::column((0..x.rows()).map(|r| x.row(r).iter().sum()).collect());
        let ng = self.needs_grad[a.0];
        self.push(t, Op::RowSum(a), ng)
    }

    /// `log Σ exp` over all entries, as 1x1.
    pub fn logsumexp(&mut self, a: Var) -> Var {
        let s = logsumexp(self.values[a.0].data());
        let ng = self.needs_grad[a.0];
        self.push(Tensor::scalar(s), Op::LogSumExp(a), ng)
    }

    /// `log((1/n) Σ exp)` over all entries, as 1x1. Equal inputs give back
    /// exactly that value.
    pub fn logmeanexp(&mut self, a: Var) -> Var {
        let s = logmeanexp(self.values[a.0].data());
        let ng = self.needs_grad[a.0];
        self.push(Tensor::scalar(s), Op::LogMeanExp(a), ng)
    }

    /// Per-row `log Σ exp`, as a column.
    pub fn row_logsumexp(&mut self, a: Var) -> Var {
        let x = &self.values[a.0];
        let t = Tensor::column((0..x.rows()).map(|r| logsumexp(x.row(r))).collect());
        let ng = self.needs_grad[a.0];
        self.push(t, Op::RowLogSumExp(a), ng)
    }

    /// Output row `i` is input row `idx[i]`.
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let x = &self.values[a.0];
        if let Some(&bad) = idx.iter().find(|&&i| i >= x.rows()) {
            return Err(Error::Dimension(format!("gather_rows index {bad} of {} rows", x.rows())));
        }
        let mut data = Vec::with_capacity(idx.len() * x.cols());
        for &i in idx {
            data.extend_from_slice(x.row(i));
        }
        let t = Tensor::new(idx.len(), x.cols(), data)?;
        let ng = self.needs_grad[a.0];
        Ok(self.push(t, Op::GatherRows(a, idx.to_vec()), ng))
    }

    /// Output row `j` is the sum of input rows `i` with `idx[i] == j`.
    pub fn scatter_add_rows(&mut self, a: Var, idx: &[usize], n_out: usize) -> Result<Var> {
        let x = &self.values[a.0];
        if idx.len() != x.rows() {
            return Err(Error::Dimension(format!("scatter_add_rows: {} indices for {} rows", idx.len(), x.rows())));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= n_out) {
            return Err(Error::Dimension(format!("scatter_add_rows index {bad} of {n_out} rows")));
        }
        let mut t = Tensor::zeros(n_out, x.cols());
        for (i, &j) in idx.iter().enumerate() {
            for (o, v) in t.row_mut(j).iter_mut().zip(x.row(i)) {
                *o += v;
            }
        }
        let ng = self.needs_grad[a.0];
        Ok(self.push(t, Op::ScatterAddRows(a, idx.to_vec()), ng))
    }

    /// A node with a caller-supplied value and vector-Jacobian product: the
    /// backward pass sends `vjp(output cotangent)` to `input`, which must match
    /// the input's shape.
    pub fn custom(
        &mut self,
        input: Var,
        value: Tensor,
        vjp: impl Fn(&Tensor) -> Tensor + Send + Sync + 'static,
    ) -> Var {
        let ng = self.needs_grad[input.0];
        self.push(value, Op::Custom(input, Box::new(vjp)), ng)
    }

    /// Scalar custom node `f(input)` with known gradient `grad` (input-shaped).
    pub fn custom_scalar(&mut self, input: Var, value: f64, grad: Tensor) -> Var {
        self.custom(input, Tensor::scalar(value), move |cot| grad.map(|g| g * cot.item()))
    }

    /// Reverse sweep from `out`, seeded with ones of its shape.
    pub fn backward(&self, out: Var) -> Result<Gradients> {
        let (r, c) = self.shape(out);
        self.backward_with(out, Tensor::filled(r, c, 1.0))
    }

    pub fn backward_with(&self, out: Var, seed: Tensor) -> Result<Gradients> {
        if seed.shape() != self.shape(out) {
            return Err(shape_err("backward seed", seed.shape(), self.shape(out)));
        }
        let mut grads: Vec<Option<Tensor>> = (0..=out.0).map(|_| None).collect();
        if !self.needs_grad[out.0] {
            return Ok(Gradients { grads });
        }
        grads[out.0] = Some(seed);
        for i in (0..=out.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn acc(&self, grads: &mut [Option<Tensor>], v: Var, t: Tensor) {
        if !self.needs_grad[v.0] {
            return;
        }
        match &mut grads[v.0] {
            Some(g) => g.add_assign(&t),
            slot => *slot = Some(t),
        }
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let out = &self.values[i];
        let val = |v: Var| &self.values[v.0];
        let elementwise = |x: &Tensor, f: &dyn Fn(f64, f64, f64) -> f64| {
            let data = x.data().iter().zip(out.data()).zip(g.data()).map(|((&a, &y), &d)| f(a, y, d)).collect();
            Tensor::new(x.rows(), x.cols(), data).expect("same shape")
        };
        match &self.ops[i] {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                if self.needs_grad[a.0] {
                    let t = elementwise(val(*b), &|bv, _, d| bv * d);
                    self.acc(grads, *a, t);
                }
                if self.needs_grad[b.0] {
                    let t = elementwise(val(*a), &|av, _, d| av * d);
                    self.acc(grads, *b, t);
                }
            }
            Op::Scale(a, s) => self.acc(grads, *a, g.map(|x| s * x)),
            Op::AddScalar(a) => self.acc(grads, *a, g.clone()),
            Op::AddBias(x, b) => {
                self.acc(grads, *x, g.clone());
                if self.needs_grad[b.0] {
                    let mut gb = Tensor::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (o, v) in gb.data_mut().iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    self.acc(grads, *b, gb);
                }
            }
            Op::MatMul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                if self.needs_grad[a.0] {
                    let mut ga = Tensor::zeros(av.rows(), av.cols());
                    gemm(g, false, bv, true, &mut ga, 0.0);
                    self.acc(grads, *a, ga);
                }
                if self.needs_grad[b.0] {
                    let mut gb = Tensor::zeros(bv.rows(), bv.cols());
                    gemm(av, true, g, false, &mut gb, 0.0);
                    self.acc(grads, *b, gb);
                }
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for &p in parts {
                    let w = self.shape(p).1;
                    if self.needs_grad[p.0] {
                        let t = Tensor::from_fn(g.rows(), w, |r, c| g.get(r, start + c));
                        self.acc(grads, p, t);
                    }
                    start += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for &p in parts {
                    let (h, w) = self.shape(p);
                    if self.needs_grad[p.0] {
                        let t = Tensor::new(h, w, g.data()[start * w..(start + h) * w].to_vec())?;
                        self.acc(grads, p, t);
                    }
                    start += h;
                }
            }
            Op::SliceRows(a, start) => {
                let (h, w) = self.shape(*a);
                let mut t = Tensor::zeros(h, w);
                t.data_mut()[start * w..start * w + g.len()].copy_from_slice(g.data());
                self.acc(grads, *a, t);
            }
            Op::SliceCols(a, start) => {
                let (h, w) = self.shape(*a);
                let mut t = Tensor::zeros(h, w);
                for r in 0..h {
                    t.row_mut(r)[*start..start + g.cols()].copy_from_slice(g.row(r));
                }
                self.acc(grads, *a, t);
            }
            Op::Reshape(a) => {
                let (h, w) = self.shape(*a);
                self.acc(grads, *a, Tensor::new(h, w, g.data().to_vec())?);
            }
            Op::Sum(a) => {
                let (h, w) = self.shape(*a);
                self.acc(grads, *a, Tensor::filled(h, w, g.item()));
            }
            Op::RowSum(a) => {
                let (h, w) = self.shape(*a);
                self.acc(grads, *a, Tensor::from_fn(h, w, |r, _| g.get(r, 0)));
            }
            Op::Exp(a) => self.acc(grads, *a, elementwise(val(*a), &|_, y, d| y * d)),
            Op::Log(a) => self.acc(grads, *a, elementwise(val(*a), &|x, _, d| d / x)),
            Op::Elu(a) => self.acc(grads, *a, elementwise(val(*a), &|x, _, d| if x > 0.0 { d } else { d * x.exp() })),
            Op::Square(a) => self.acc(grads, *a, elementwise(val(*a), &|x, _, d| 2.0 * x * d)),
            Op::Clamp(a, lo, hi) => self.acc(
                grads,
                *a,
                elementwise(val(*a), &|x, _, d| if x >= *lo && x <= *hi { d } else { 0.0 }),
            ),
            Op::LogSumExp(a) => {
                let y = out.item();
                let d = g.item();
                self.acc(grads, *a, val(*a).map(|x| d * (x - y).exp()));
            }
            Op::LogMeanExp(a) => {
                let y = out.item();
                let d = g.item() / val(*a).len() as f64;
                self.acc(grads, *a, val(*a).map(|x| d * (x - y).exp()));
            }
            Op::RowLogSumExp(a) => {
                let x = val(*a);
                let t = Tensor::from_fn(x.rows(), x.cols(), |r, c| g.get(r, 0) * (x.get(r, c) - out.get(r, 0)).exp());
                self.acc(grads, *a, t);
            }
            Op::GatherRows(a, idx) => {
                let (h, w) = self.shape(*a);
                let mut t = Tensor::zeros(h, w);
                for (i, &j) in idx.iter().enumerate() {
                    for (o, v) in t.row_mut(j).iter_mut().zip(g.row(i)) {
                        *o += v;
                    }
                }
                self.acc(grads, *a, t);
            }
            Op::ScatterAddRows(a, idx) => {
                let w = g.cols();
                let mut data = Vec::with_capacity(idx.len() * w);
                for &j in idx {
                    data.extend_from_slice(g.row(j));
                }
                self.acc(grads, *a, Tensor::new(idx.len(), w, data)?);
            }
            Op::Custom(a, vjp) => {
                let t = vjp(g);
                if t.shape() != self.shape(*a) {
                    return Err(shape_err("custom node gradient", t.shape(), self.shape(*a)));
                }
                self.acc(grads, *a, t);
            }
        }
        Ok(())
    }
}

#[inline]
pub fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

pub fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `log((1/n) Σ exp(x))`, computed as `m + ln(Σ exp(x - m) / n)`.
pub fn logmeanexp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + (xs.iter().map(|x| (x - m).exp()).sum::<f64>() / xs.len() as f64).ln()
}
