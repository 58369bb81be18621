//! Reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Graph`] is an append-only tape of matrix operations. Every value is a
//! 2-D array; scalars are `1 x 1`. Leaves are either tracked parameters
//! ([`Graph::param`]) or constants ([`Graph::constant`]). After building a
//! scalar loss, [`Graph::backward`] walks the tape once in reverse and returns
//! the gradients of every tracked leaf.
//!
//! ```
//! use ndarray::array;
//! use vaegan_core::tensor::Graph;
//!
//! let mut g = Graph::<f64>::new();
//! let x = g.param(array![[3.0]]);
//! let y = g.square(x).unwrap();
//! let grads = g.backward(y).unwrap();
//! assert_eq!(grads.get(x).unwrap()[[0, 0]], 6.0);
//! ```

mod adam;
mod gradcheck;
mod layers;

use std::fmt::{Debug, Display};
use std::rc::Rc;

use ndarray::{s, Array2, Axis, Zip};
use thiserror::Error;

pub use adam::{clip_global_norm, AdamConfig, AdamState};
pub use gradcheck::{gradient_check, GradCheckOptions, GradCheckReport};
pub use layers::{Activation, BoundDense, BoundGru, DenseLayer, GruLayer};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("ln of non-positive value {0}")]
    NonPositiveLog(f64),
    #[error("loss must be a 1x1 scalar, got {0:?}")]
    NonScalarLoss((usize, usize)),
    #[error("non-finite gradient in parameter block {0}")]
    NonFiniteGradient(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Floating-point element type of the engine (`f32` for training, `f64` for
/// verification).
pub trait Real:
    num_traits::Float
    + num_traits::NumAssign
    + ndarray::LinalgScalar
    + ndarray::ScalarOperand
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + std::iter::Sum
    + 'static
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Real for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
}

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

type ElementFn<T> = Rc<dyn Fn(T) -> T>;

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Exp(Var),
    Ln(Var),
    Square(Var),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Sum(Var),
    Mean(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    Map(Var, ElementFn<T>),
}

struct Node<T> {
    value: Array2<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Append-only tape of matrix operations.
pub struct Graph<T: Real> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of the tracked leaves, indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Array2<T>>>,
}

impl<T: Real> Gradients<T> {
    /// `None` for untracked leaves; zeros for tracked leaves the loss does
    /// not depend on.
    pub fn get(&self, v: Var) -> Option<&Array2<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Array2<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every recorded node. Existing [`Var`] handles become invalid.
    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    fn push(&mut self, value: Array2<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Untracked leaf.
    pub fn constant(&mut self, value: Array2<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Tracked leaf; its gradient is reported by [`Graph::backward`].
    pub fn param(&mut self, value: Array2<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn scalar_constant(&mut self, v: T) -> Var {
        self.constant(Array2::from_elem((1, 1), v))
    }

    pub fn value(&self, v: Var) -> &Array2<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    /// Value of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value[[0, 0]]
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (l, r) = (self.shape(a), self.shape(b));
        if l != r {
            return Err(TensorError::ShapeMismatch {
                op,
                left: l,
                right: r,
            });
        }
        Ok(())
    }

    fn unary(&mut self, a: Var, value: Array2<T>, op: Op<T>) -> Var {
        let rg = self.tracked(a);
        self.push(value, op, rg)
    }

    fn binary(&mut self, a: Var, b: Var, value: Array2<T>, op: Op<T>) -> Var {
        let rg = self.tracked(a) || self.tracked(b);
        self.push(value, op, rg)
    }

    /// `a . b`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        if ac != br {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                left: (ar, ac),
                right: (br, bc),
            });
        }
        let v = self.value(a).dot(self.value(b));
        Ok(self.binary(a, b, v, Op::MatMul(a, b)))
    }

    /// `a . b^T`, the layout used by `out x in` weight matrices.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        if ac != bc {
            return Err(TensorError::ShapeMismatch {
                op: "matmul_t",
                left: (ar, ac),
                right: (br, bc),
            });
        }
        let v = self.value(a).dot(&self.value(b).t());
        Ok(self.binary(a, b, v, Op::MatMulT(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = self.value(a) + self.value(b);
        Ok(self.binary(a, b, v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = self.value(a) - self.value(b);
        Ok(self.binary(a, b, v, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = self.value(a) * self.value(b);
        Ok(self.binary(a, b, v, Op::Mul(a, b)))
    }

    /// Adds a `1 x c` row to every row of an `r x c` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (ar, ac) = self.shape(a);
        let (rr, rc) = self.shape(row);
        if rr != 1 || rc != ac {
            return Err(TensorError::ShapeMismatch {
                op: "add_row",
                left: (ar, ac),
                right: (rr, rc),
            });
        }
        let v = self.value(a) + self.value(row);
        Ok(self.binary(a, row, v, Op::AddRow(a, row)))
    }

    /// Multiplies every row of an `r x c` matrix elementwise by a `1 x c` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (ar, ac) = self.shape(a);
        let (rr, rc) = self.shape(row);
        if rr != 1 || rc != ac {
            return Err(TensorError::ShapeMismatch {
                op: "mul_row",
                left: (ar, ac),
                right: (rr, rc),
            });
        }
        let v = self.value(a) * self.value(row);
        Ok(self.binary(a, row, v, Op::MulRow(a, row)))
    }

    pub fn scale(&mut self, a: Var, k: T) -> Var {
        let v = self.value(a).mapv(|x| x * k);
        self.unary(a, v, Op::Scale(a, k))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -T::one())
    }

    pub fn add_scalar(&mut self, a: Var, k: T) -> Var {
        let v = self.value(a).mapv(|x| x + k);
        self.unary(a, v, Op::AddScalar(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(T::exp);
        self.unary(a, v, Op::Exp(a))
    }

    pub fn ln(&mut self, a: Var) -> Result<Var> {
        if let Some(&bad) = self.value(a).iter().find(|&&x| !(x > T::zero())) {
            return Err(TensorError::NonPositiveLog(bad.to_f64()));
        }
        let v = self.value(a).mapv(T::ln);
        Ok(self.unary(a, v, Op::Ln(a)))
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).mapv(|x| x * x);
        Ok(self.unary(a, v, Op::Square(a)))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| if x > T::zero() { x } else { T::zero() });
        self.unary(a, v, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(sigmoid);
        self.unary(a, v, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(T::tanh);
        self.unary(a, v, Op::Tanh(a))
    }

    /// Sum of all entries, as `1 x 1`.
    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.value(a).sum();
        self.unary(a, Array2::from_elem((1, 1), total), Op::Sum(a))
    }

    /// Mean of all entries, as `1 x 1`.
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len();
        if n == 0 {
            return Err(TensorError::InvalidArgument("mean of empty tensor".into()));
        }
        let m = self.value(a).sum() / T::from_f64(n as f64);
        Ok(self.unary(a, Array2::from_elem((1, 1), m), Op::Mean(a)))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::InvalidArgument("concat of nothing".into()))?;
        let rows = self.shape(*first).0;
        for &p in parts {
            if self.shape(p).0 != rows {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_cols",
                    left: self.shape(*first),
                    right: self.shape(p),
                });
            }
        }
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("row counts checked");
        let rg = parts.iter().any(|&p| self.tracked(p));
        Ok(self.push(v, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::InvalidArgument("concat of nothing".into()))?;
        let cols = self.shape(*first).1;
        for &p in parts {
            if self.shape(p).1 != cols {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_rows",
                    left: self.shape(*first),
                    right: self.shape(p),
                });
            }
        }
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(0), &views).expect("column counts checked");
        let rg = parts.iter().any(|&p| self.tracked(p));
        Ok(self.push(v, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Columns `start..start + len`.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.shape(a);
        if start + len > c || len == 0 {
            return Err(TensorError::InvalidArgument(format!(
                "slice_cols {start}..{} of {c} columns",
                start + len
            )));
        }
        let v = self.value(a).slice(s![.., start..start + len]).to_owned();
        debug_assert_eq!(v.nrows(), r);
        Ok(self.unary(a, v, Op::SliceCols(a, start)))
    }

    /// Rows `start..start + len`.
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, _) = self.shape(a);
        if start + len > r || len == 0 {
            return Err(TensorError::InvalidArgument(format!(
                "slice_rows {start}..{} of {r} rows",
                start + len
            )));
        }
        let v = self.value(a).slice(s![start..start + len, ..]).to_owned();
        Ok(self.unary(a, v, Op::SliceRows(a, start)))
    }

    /// Elementwise `f` with user-supplied derivative `df` (evaluated at the
    /// input).
    pub fn map(&mut self, a: Var, f: impl Fn(T) -> T, df: impl Fn(T) -> T + 'static) -> Var {
        let v = self.value(a).mapv(f);
        self.unary(a, v, Op::Map(a, Rc::new(df)))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let sh = self.shape(loss);
        if sh != (1, 1) {
            return Err(TensorError::NonScalarLoss(sh));
        }
        let mut grads: Vec<Option<Array2<T>>> = (0..=loss.0).map(|_| None).collect();
        for (i, node) in self.nodes[..=loss.0].iter().enumerate() {
            if node.requires_grad && matches!(node.op, Op::Leaf) {
                grads[i] = Some(Array2::zeros(node.value.dim()));
            }
        }
        if !self.tracked(loss) {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(Array2::ones((1, 1)));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(dout) = grads[i].take() else {
                continue;
            };
            self.propagate(node, dout, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Array2<T>>], v: Var, g: Array2<T>) {
        if !self.tracked(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => *acc += &g,
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node<T>, dout: Array2<T>, grads: &mut [Option<Array2<T>>]) {
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.tracked(*a) {
                    self.accumulate(grads, *a, dout.dot(&self.value(*b).t()));
                }
                if self.tracked(*b) {
                    self.accumulate(grads, *b, self.value(*a).t().dot(&dout));
                }
            }
            Op::MatMulT(a, b) => {
                if self.tracked(*a) {
                    self.accumulate(grads, *a, dout.dot(self.value(*b)));
                }
                if self.tracked(*b) {
                    self.accumulate(grads, *b, dout.t().dot(self.value(*a)));
                }
            }
            Op::Add(a, b) => {
                if self.tracked(*b) {
                    self.accumulate(grads, *b, dout.clone());
                }
                self.accumulate(grads, *a, dout);
            }
            Op::Sub(a, b) => {
                if self.tracked(*b) {
                    self.accumulate(grads, *b, dout.mapv(|x| -x));
                }
                self.accumulate(grads, *a, dout);
            }
            Op::Mul(a, b) => {
                if self.tracked(*a) {
                    self.accumulate(grads, *a, &dout * self.value(*b));
                }
                if self.tracked(*b) {
                    self.accumulate(grads, *b, &dout * self.value(*a));
                }
            }
            Op::AddRow(a, row) => {
                if self.tracked(*row) {
                    let g = dout.sum_axis(Axis(0)).insert_axis(Axis(0));
                    self.accumulate(grads, *row, g);
                }
                self.accumulate(grads, *a, dout);
            }
            Op::MulRow(a, row) => {
                if self.tracked(*row) {
                    let g = (&dout * self.value(*a)).sum_axis(Axis(0)).insert_axis(Axis(0));
                    self.accumulate(grads, *row, g);
                }
                if self.tracked(*a) {
                    self.accumulate(grads, *a, &dout * self.value(*row));
                }
            }
            Op::Scale(a, k) => {
                let k = *k;
                self.accumulate(grads, *a, dout.mapv(|x| x * k));
            }
            Op::AddScalar(a) => self.accumulate(grads, *a, dout),
            Op::Exp(a) => self.accumulate(grads, *a, dout * out),
            Op::Ln(a) => self.accumulate(grads, *a, dout / self.value(*a)),
            Op::Square(a) => {
                let two = T::from_f64(2.0);
                let mut g = dout;
                Zip::from(&mut g)
                    .and(self.value(*a))
                    .for_each(|g, &x| *g = *g * two * x);
                self.accumulate(grads, *a, g);
            }
            Op::Relu(a) => {
                let mut g = dout;
                Zip::from(&mut g).and(self.value(*a)).for_each(|g, &x| {
                    if x <= T::zero() {
                        *g = T::zero();
                    }
                });
                self.accumulate(grads, *a, g);
            }
            Op::Sigmoid(a) => {
                let mut g = dout;
                Zip::from(&mut g)
                    .and(out)
                    .for_each(|g, &y| *g = *g * y * (T::one() - y));
                self.accumulate(grads, *a, g);
            }
            Op::Tanh(a) => {
                let mut g = dout;
                Zip::from(&mut g)
                    .and(out)
                    .for_each(|g, &y| *g *= T::one() - y * y);
                self.accumulate(grads, *a, g);
            }
            Op::Sum(a) => {
                let d = dout[[0, 0]];
                self.accumulate(grads, *a, Array2::from_elem(self.shape(*a), d));
            }
            Op::Mean(a) => {
                let n = T::from_f64(self.value(*a).len() as f64);
                let d = dout[[0, 0]] / n;
                self.accumulate(grads, *a, Array2::from_elem(self.shape(*a), d));
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for &p in parts {
                    let w = self.shape(p).1;
                    if self.tracked(p) {
                        let g = dout.slice(s![.., start..start + w]).to_owned();
                        self.accumulate(grads, p, g);
                    }
                    start += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for &p in parts {
                    let h = self.shape(p).0;
                    if self.tracked(p) {
                        let g = dout.slice(s![start..start + h, ..]).to_owned();
                        self.accumulate(grads, p, g);
                    }
                    start += h;
                }
            }
            Op::SliceCols(a, start) => {
                let mut g = Array2::zeros(self.shape(*a));
                let w = dout.ncols();
                g.slice_mut(s![.., *start..*start + w]).assign(&dout);
                self.accumulate(grads, *a, g);
            }
            Op::SliceRows(a, start) => {
                let mut g = Array2::zeros(self.shape(*a));
                let h = dout.nrows();
                g.slice_mut(s![*start..*start + h, ..]).assign(&dout);
                self.accumulate(grads, *a, g);
            }
            Op::Map(a, df) => {
                let mut g = dout;
                Zip::from(&mut g)
                    .and(self.value(*a))
                    .for_each(|g, &x| *g *= df(x));
                self.accumulate(grads, *a, g);
            }
        }
    }
}

pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn primitive_values() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(array![[-1.0, 2.0]]);
        let r = g.relu(x);
        assert_eq!(g.value(r), &array![[0.0, 2.0]]);
        let z = g.constant(array![[0.0]]);
        let s = g.sigmoid(z);
        assert_eq!(g.scalar(s), 0.5);
        let t = g.tanh(z);
        assert_eq!(g.scalar(t), 0.0);
    }

    #[test]
    fn square_derivative() {
        let mut g = Graph::<f64>::new();
        let x = g.param(array![[3.0]]);
        let y = g.square(x).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap()[[0, 0]], 6.0);
    }

    #[test]
    fn sum_and_mean_gradients() {
        let mut g = Graph::<f64>::new();
        let p = g.param(Array2::from_elem((2, 3), 0.7));
        let s = g.sum(p);
        let grads = g.backward(s).unwrap();
        assert!(grads.get(p).unwrap().iter().all(|&v| v == 1.0));
        let m = g.mean(p).unwrap();
        let grads = g.backward(m).unwrap();
        assert!(grads.get(p).unwrap().iter().all(|&v| (v - 1.0 / 6.0).abs() < 1e-15));
    }

    #[test]
    fn errors() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Array2::zeros((2, 3)));
        let b = g.constant(Array2::zeros((3, 2)));
        assert!(matches!(g.add(a, b), Err(TensorError::ShapeMismatch { op: "add", .. })));
        assert!(g.matmul(a, a).is_err());
        assert!(matches!(g.ln(a), Err(TensorError::NonPositiveLog(_))));
        assert!(matches!(g.backward(a), Err(TensorError::NonScalarLoss((2, 3)))));
        assert!(g.slice_cols(a, 2, 2).is_err());
        assert!(g.concat_rows(&[a, b]).is_err());
    }

    #[test]
    fn untracked_leaves_get_no_gradient() {
        let mut g = Graph::<f64>::new();
        let c = g.constant(array![[2.0]]);
        let p = g.param(array![[5.0]]);
        let unused = g.param(array![[1.0, 1.0]]);
        let y = g.mul(c, p).unwrap();
        let grads = g.backward(y).unwrap();
        assert!(grads.get(c).is_none());
        assert_eq!(grads.get(p).unwrap()[[0, 0]], 2.0);
        assert_eq!(grads.get(unused).unwrap(), &Array2::<f64>::zeros((1, 2)));
    }

    #[test]
    fn reused_node_accumulates() {
        // y = x*x + x, dy/dx = 2x + 1
        let mut g = Graph::<f64>::new();
        let x = g.param(array![[1.5]]);
        let xx = g.mul(x, x).unwrap();
        let y = g.add(xx, x).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap()[[0, 0]], 4.0);
    }

    type Primitive = fn(&mut Graph<f64>, &[Var]) -> Result<Var>;

    /// Every primitive, reduced to a scalar through a fixed random weighting
    /// so that no gradient is trivially constant.
    fn primitives() -> Vec<(&'static str, Vec<(usize, usize)>, Primitive)> {
        vec![
            ("matmul", vec![(2, 3), (3, 4)], |g, v| g.matmul(v[0], v[1])),
            ("matmul_t", vec![(2, 3), (4, 3)], |g, v| g.matmul_t(v[0], v[1])),
            ("add", vec![(2, 3), (2, 3)], |g, v| g.add(v[0], v[1])),
            ("sub", vec![(2, 3), (2, 3)], |g, v| g.sub(v[0], v[1])),
            ("mul", vec![(2, 3), (2, 3)], |g, v| g.mul(v[0], v[1])),
            ("add_row", vec![(3, 4), (1, 4)], |g, v| g.add_row(v[0], v[1])),
            ("mul_row", vec![(3, 4), (1, 4)], |g, v| g.mul_row(v[0], v[1])),
            ("scale", vec![(2, 3)], |g, v| Ok(g.scale(v[0], -1.7))),
            ("neg", vec![(2, 3)], |g, v| Ok(g.neg(v[0]))),
            ("add_scalar", vec![(2, 3)], |g, v| Ok(g.add_scalar(v[0], 0.4))),
            ("exp", vec![(2, 3)], |g, v| Ok(g.exp(v[0]))),
            ("ln", vec![(2, 3)], |g, v| {
                let e = g.exp(v[0]);
                let p = g.add_scalar(e, 0.5);
                g.ln(p)
            }),
            ("square", vec![(2, 3)], |g, v| g.square(v[0])),
            ("relu", vec![(2, 3)], |g, v| Ok(g.relu(v[0]))),
            ("sigmoid", vec![(2, 3)], |g, v| Ok(g.sigmoid(v[0]))),
            ("tanh", vec![(2, 3)], |g, v| Ok(g.tanh(v[0]))),
            ("sum", vec![(2, 3)], |g, v| {
                let s = g.square(v[0])?;
                Ok(g.sum(s))
            }),
            ("mean", vec![(2, 3)], |g, v| {
                let s = g.square(v[0])?;
                g.mean(s)
            }),
            ("concat_cols", vec![(2, 3), (2, 1)], |g, v| g.concat_cols(&[v[0], v[1]])),
            ("concat_rows", vec![(2, 3), (1, 3)], |g, v| g.concat_rows(&[v[0], v[1]])),
            ("slice_cols", vec![(2, 5)], |g, v| g.slice_cols(v[0], 1, 3)),
            ("slice_rows", vec![(4, 3)], |g, v| g.slice_rows(v[0], 1, 2)),
        ]
    }

    #[test]
    fn every_primitive_matches_finite_differences() {
        use rand::{Rng, SeedableRng};
        use rand_chacha::ChaCha8Rng;

        for (name, shapes, op) in primitives() {
            for seed in 0..10 {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                // Keep inputs away from the relu kink.
                let params: Vec<Array2<f64>> = shapes
                    .iter()
                    .map(|&s| {
                        Array2::from_shape_simple_fn(s, || {
                            let m: f64 = rng.random_range(0.1..1.5);
                            if rng.random_bool(0.5) { m } else { -m }
                        })
                    })
                    .collect();
                let report = gradient_check(
                    |g, v| {
                        let out = op(g, v)?;
                        let shape = g.shape(out);
                        let mut wr = ChaCha8Rng::seed_from_u64(1000 + seed);
                        let w = g.constant(Array2::from_shape_simple_fn(shape, || wr.random_range(-1.0..1.0)));
                        let weighted = g.mul(out, w)?;
                        Ok(g.sum(weighted))
                    },
                    &params,
                    &GradCheckOptions::default(),
                )
                .unwrap();
                assert!(report.passed, "{name} seed {seed}: {}", report.max_rel_error);
            }
        }
    }

    proptest! {
        // Backward of a sum of independent subgraphs equals the separate
        // backwards side by side.
        #[test]
        fn independent_subgraphs_split(a in prop::collection::vec(-2.0f64..2.0, 6),
                                       b in prop::collection::vec(-2.0f64..2.0, 4)) {
            let build = |g: &mut Graph<f64>, a: Var, b: Var| -> (Var, Var) {
                let ta = g.tanh(a);
                let la = g.square(ta).unwrap();
                let la = g.sum(la);
                let sb = g.sigmoid(b);
                let lb = g.mean(sb).unwrap();
                (la, lb)
            };
            let am = Array2::from_shape_vec((2, 3), a).unwrap();
            let bm = Array2::from_shape_vec((1, 4), b).unwrap();

            let mut g = Graph::<f64>::new();
            let (pa, pb) = (g.param(am.clone()), g.param(bm.clone()));
            let (la, lb) = build(&mut g, pa, pb);
            let total = g.add(la, lb).unwrap();
            let joint = g.backward(total).unwrap();

            let sep_a = g.backward(la).unwrap();
            let sep_b = g.backward(lb).unwrap();
            prop_assert_eq!(joint.get(pa).unwrap(), sep_a.get(pa).unwrap());
            prop_assert_eq!(joint.get(pb).unwrap(), sep_b.get(pb).unwrap());
        }
    }
}
