//! Reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records every operation in execution order. Leaves are created
//! with [`Tape::param`] (gradient tracked) or [`Tape::constant`]; operations
//! return [`Var`] handles into the tape. [`Tape::backward`] walks the record
//! once in reverse and accumulates gradients into the parameter leaves, so
//! two backward passes without [`Tape::zero_grad`] sum their gradients.
//!
//! There is no broadcasting: apart from [`Tape::scale`] every binary
//! operation requires shapes to match exactly.

use alloc::vec;
use alloc::vec::Vec;

use crate::matrix::matmul_acc;
use crate::{Error, Matrix, Result};

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    Transpose(Var),
    GatherRows(Var, Vec<usize>),
    Take(Var, Vec<usize>),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    Sum(Var),
    Mean(Var),
    Log(Var),
    Sqrt(Var),
    Tanh(Var),
    LeakyRelu(Var, f64),
    SoftmaxRows(Var),
    Square(Var),
    ClampMin(Var, f64),
}

#[derive(Debug, Clone)]
struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
    /// Accumulated gradient, kept only for parameter leaves.
    grad: Option<Matrix>,
}

#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn same_shape(op: &'static str, a: &Matrix, b: &Matrix) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op,
            left: a.shape(),
            right: b.shape(),
        });
    }
    Ok(())
}

fn zip_map(a: &Matrix, b: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
    let data = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Matrix::from_vec(a.rows(), a.cols(), data).expect("shapes checked")
}

fn add_into(acc: &mut Matrix, g: &Matrix) {
    for (a, b) in acc.as_mut_slice().iter_mut().zip(g.as_slice()) {
        *a += b;
    }
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut grads[v.0] {
        Some(acc) => add_into(acc, &g),
        slot => *slot = Some(g),
    }
}

fn softmax_row(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in row.iter_mut() {
        *x = libm::exp(*x - max);
        total += *x;
    }
    for x in row.iter_mut() {
        *x /= total;
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

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn tracks(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A leaf whose gradient is accumulated by [`Tape::backward`].
    pub fn param(&mut self, value: Matrix) -> Var {
        let grad = Matrix::zeros(value.rows(), value.cols());
        let v = self.push(value, Op::Leaf, true);
        self.nodes[v.0].grad = Some(grad);
        v
    }

    /// A leaf without gradient.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// The single entry of a 1×1 tensor.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.as_slice()[0]
    }

    /// Accumulated gradient of a parameter leaf; `None` for anything else.
    pub fn grad(&self, v: Var) -> Option<&Matrix> {
        self.nodes[v.0].grad.as_ref()
    }

    /// Resets every accumulated gradient to zero.
    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            if let Some(g) = &mut node.grad {
                g.as_mut_slice().fill(0.0);
            }
        }
    }

    /// Smallest distance from any tracked leaky-relu or clamp input to its
    /// breakpoint; infinite when there is none. Finite differences are only
    /// meaningful when this exceeds the probe step.
    pub fn kink_margin(&self) -> f64 {
        let mut margin = f64::INFINITY;
        for node in self.nodes.iter().filter(|n| n.requires_grad) {
            let (input, at) = match node.op {
                Op::LeakyRelu(a, _) => (a, 0.0),
                Op::ClampMin(a, floor) => (a, floor),
                _ => continue,
            };
            for &x in self.value(input).as_slice() {
                margin = margin.min(libm::fabs(x - at));
            }
        }
        margin
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let value = self.value(a).map(f);
        let rg = self.tracks(&[a]);
        self.push(value, op, rg)
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var> {
        same_shape(name, self.value(a), self.value(b))?;
        let value = zip_map(self.value(a), self.value(b), f);
        let rg = self.tracks(&[a, b]);
        Ok(self.push(value, op, rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.tracks(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    /// Elementwise quotient.
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, Op::Div(a, b), |x, y| x / y)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, Op::Scale(a, c), |x| c * x)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        let rg = self.tracks(&[a]);
        self.push(value, Op::Transpose(a), rg)
    }

    /// Stacks the listed rows of `a` (repeats allowed).
    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let src = self.value(a);
        if let Some(&bad) = rows.iter().find(|&&r| r >= src.rows()) {
            return Err(Error::ShapeMismatch {
                op: "gather_rows",
                left: src.shape(),
                right: (bad, src.cols()),
            });
        }
        let mut data = Vec::with_capacity(rows.len() * src.cols());
        for &r in rows {
            data.extend_from_slice(src.row(r));
        }
        let value = Matrix::from_vec(rows.len(), src.cols(), data)?;
        let rg = self.tracks(&[a]);
        Ok(self.push(value, Op::GatherRows(a, rows.to_vec()), rg))
    }

    /// Picks entries of `a` by row-major flat index into a `rows × cols` result.
    pub fn take(&mut self, a: Var, flat: &[usize], rows: usize, cols: usize) -> Result<Var> {
        let src = self.value(a);
        let len = src.as_slice().len();
        if flat.len() != rows * cols || flat.iter().any(|&i| i >= len) {
            return Err(Error::ShapeMismatch {
                op: "take",
                left: src.shape(),
                right: (rows, cols),
            });
        }
        let data = flat.iter().map(|&i| src.as_slice()[i]).collect();
        let value = Matrix::from_vec(rows, cols, data)?;
        let rg = self.tracks(&[a]);
        Ok(self.push(value, Op::Take(a, flat.to_vec()), rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = parts.first().map_or(0, |&p| self.value(p).cols());
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let m = self.value(p);
            if m.cols() != cols {
                return Err(Error::ShapeMismatch {
                    op: "concat_rows",
                    left: self.value(parts[0]).shape(),
                    right: m.shape(),
                });
            }
            rows += m.rows();
            data.extend_from_slice(m.as_slice());
        }
        let value = Matrix::from_vec(rows, cols, data)?;
        let rg = self.tracks(parts);
        Ok(self.push(value, Op::ConcatRows(parts.to_vec()), rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts.first().map_or(0, |&p| self.value(p).rows());
        for &p in parts {
            if self.value(p).rows() != rows {
                return Err(Error::ShapeMismatch {
                    op: "concat_cols",
                    left: self.value(parts[0]).shape(),
                    right: self.value(p).shape(),
                });
            }
        }
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut value = Matrix::zeros(rows, cols);
        for i in 0..rows {
            let mut offset = 0;
            for &p in parts {
                let src = self.value(p).row(i);
                value.row_mut(i)[offset..offset + src.len()].copy_from_slice(src);
                offset += src.len();
            }
        }
        let rg = self.tracks(parts);
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Sum of all entries, as 1×1.
    pub fn sum(&mut self, a: Var) -> Var {
        let value = Matrix::filled(1, 1, self.value(a).sum());
        let rg = self.tracks(&[a]);
        self.push(value, Op::Sum(a), rg)
    }

    /// Mean of all entries, as 1×1.
    pub fn mean(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let value = Matrix::filled(1, 1, m.sum() / m.as_slice().len() as f64);
        let rg = self.tracks(&[a]);
        self.push(value, Op::Mean(a), rg)
    }

    /// Natural logarithm.
    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, Op::Log(a), libm::log)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sqrt(a), libm::sqrt)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), libm::tanh)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        self.unary(a, Op::LeakyRelu(a, slope), |x| {
            if x > 0.0 {
                x
            } else {
                slope * x
            }
        })
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    /// `max(x, floor)` elementwise.
    pub fn clamp_min(&mut self, a: Var, floor: f64) -> Var {
        self.unary(
            a,
            Op::ClampMin(a, floor),
            |x| if x > floor { x } else { floor },
        )
    }

    /// Numerically stable softmax of every row.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        for i in 0..value.rows() {
            softmax_row(value.row_mut(i));
        }
        let rg = self.tracks(&[a]);
        self.push(value, Op::SoftmaxRows(a), rg)
    }

    /// Accumulates d`output`/d`param` into every parameter leaf.
    pub fn backward(&mut self, output: Var) -> Result<()> {
        let (rows, cols) = self.shape(output);
        if (rows, cols) != (1, 1) {
            return Err(Error::NonScalarOutput { rows, cols });
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; output.0 + 1];
        grads[output.0] = Some(Matrix::filled(1, 1, 1.0));

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[idx].op {
                if let Some(acc) = &mut self.nodes[idx].grad {
                    add_into(acc, &g);
                }
                continue;
            }
            self.propagate(idx, g, &mut grads);
        }
        Ok(())
    }

    fn propagate(&self, idx: usize, g: Matrix, grads: &mut [Option<Matrix>]) {
        let node = &self.nodes[idx];
        let out = &node.value;
        let val = |v: Var| &self.nodes[v.0].value;
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if wants(*a) {
                    let mut ga = Matrix::zeros(val(*a).rows(), val(*a).cols());
                    matmul_acc(&g, &val(*b).transpose(), &mut ga);
                    accumulate(grads, *a, ga);
                }
                if wants(*b) {
                    let mut gb = Matrix::zeros(val(*b).rows(), val(*b).cols());
                    matmul_acc(&val(*a).transpose(), &g, &mut gb);
                    accumulate(grads, *b, gb);
                }
            }
            Op::Add(a, b) => {
                if wants(*b) {
                    accumulate(grads, *b, g.clone());
                }
                if wants(*a) {
                    accumulate(grads, *a, g);
                }
            }
            Op::Sub(a, b) => {
                if wants(*b) {
                    accumulate(grads, *b, g.map(|x| -x));
                }
                if wants(*a) {
                    accumulate(grads, *a, g);
                }
            }
            Op::Mul(a, b) => {
                if wants(*a) {
                    accumulate(grads, *a, zip_map(&g, val(*b), |x, y| x * y));
                }
                if wants(*b) {
                    accumulate(grads, *b, zip_map(&g, val(*a), |x, y| x * y));
                }
            }
            Op::Div(a, b) => {
                if wants(*a) {
                    accumulate(grads, *a, zip_map(&g, val(*b), |x, y| x / y));
                }
                if wants(*b) {
                    // d(a/b)/db = -out / b
                    let t = zip_map(&g, out, |x, o| x * o);
                    accumulate(grads, *b, zip_map(&t, val(*b), |x, y| -x / y));
                }
            }
            Op::Scale(a, c) => accumulate(grads, *a, g.map(|x| c * x)),
            Op::Transpose(a) => accumulate(grads, *a, g.transpose()),
            Op::GatherRows(a, rows) => {
                let src = val(*a);
                let mut ga = Matrix::zeros(src.rows(), src.cols());
                for (k, &r) in rows.iter().enumerate() {
                    for (dst, x) in ga.row_mut(r).iter_mut().zip(g.row(k)) {
                        *dst += x;
                    }
                }
                accumulate(grads, *a, ga);
            }
            Op::Take(a, flat) => {
                let src = val(*a);
                let mut ga = Matrix::zeros(src.rows(), src.cols());
                for (&i, x) in flat.iter().zip(g.as_slice()) {
                    ga.as_mut_slice()[i] += x;
                }
                accumulate(grads, *a, ga);
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let (r, c) = val(p).shape();
                    if wants(p) {
                        let slice = g.as_slice()[offset * c..(offset + r) * c].to_vec();
                        accumulate(grads, p, Matrix::from_vec(r, c, slice).expect("shape"));
                    }
                    offset += r;
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let (r, c) = val(p).shape();
                    if wants(p) {
                        let gp = Matrix::from_fn(r, c, |i, j| g[(i, offset + j)]);
                        accumulate(grads, p, gp);
                    }
                    offset += c;
                }
            }
            Op::Sum(a) => {
                let (r, c) = val(*a).shape();
                accumulate(grads, *a, Matrix::filled(r, c, g.as_slice()[0]));
            }
            Op::Mean(a) => {
                let (r, c) = val(*a).shape();
                let s = g.as_slice()[0] / (r * c) as f64;
                accumulate(grads, *a, Matrix::filled(r, c, s));
            }
            Op::Log(a) => accumulate(grads, *a, zip_map(&g, val(*a), |x, y| x / y)),
            Op::Sqrt(a) => accumulate(
                grads,
                *a,
                zip_map(&g, out, |x, o| if o > 0.0 { x / (2.0 * o) } else { 0.0 }),
            ),
            Op::Tanh(a) => accumulate(grads, *a, zip_map(&g, out, |x, o| x * (1.0 - o * o))),
            Op::LeakyRelu(a, slope) => accumulate(
                grads,
                *a,
                zip_map(&g, val(*a), |x, y| if y > 0.0 { x } else { slope * x }),
            ),
            Op::Square(a) => accumulate(grads, *a, zip_map(&g, val(*a), |x, y| 2.0 * x * y)),
            Op::ClampMin(a, floor) => accumulate(
                grads,
                *a,
                zip_map(&g, val(*a), |x, y| if y > *floor { x } else { 0.0 }),
            ),
            Op::SoftmaxRows(a) => {
                let mut ga = Matrix::zeros(out.rows(), out.cols());
                for i in 0..out.rows() {
                    let s = out.row(i);
                    let gr = g.row(i);
                    let dot: f64 = s.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for ((dst, &si), &gi) in ga.row_mut(i).iter_mut().zip(s).zip(gr) {
                        *dst = si * (gi - dot);
                    }
                }
                accumulate(grads, *a, ga);
            }
        }
    }
}

/// Compares tape gradients of `f` against central finite differences.
///
/// `f` builds a scalar on a fresh tape from parameter leaves holding
/// `params`. Returns the largest `|a − b| / max(1e-8, |a| + |b|)` over every
/// coordinate of every parameter.
pub fn grad_check<F>(f: F, params: &[Matrix], step: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Matrix]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|m| tape.param(m.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.scalar(out))
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|m| tape.param(m.clone())).collect();
    let out = f(&mut tape, &vars)?;
    tape.backward(out)?;

    let mut worst: f64 = 0.0;
    let mut probe: Vec<Matrix> = params.to_vec();
    for (p, &v) in vars.iter().enumerate() {
        let analytic = tape.grad(v).expect("param leaf");
        for k in 0..params[p].as_slice().len() {
            let orig = params[p].as_slice()[k];
            probe[p].as_mut_slice()[k] = orig + step;
            let up = eval(&probe)?;
            probe[p].as_mut_slice()[k] = orig - step;
            let down = eval(&probe)?;
            probe[p].as_mut_slice()[k] = orig;
            let numeric = (up - down) / (2.0 * step);
            let a = analytic.as_slice()[k];
            let rel = libm::fabs(a - numeric) / f64::max(1e-8, libm::fabs(a) + libm::fabs(numeric));
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}
