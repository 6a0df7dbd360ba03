//! Reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Graph`] is an arena of nodes. Every operation appends a node whose
//! value is computed eagerly, so node ids are already a topological order
//! and [`Graph::backward`] is a single reverse sweep over the arena.
//!
//! ```
//! use tcmn::autodiff::Graph;
//! use tcmn::tensor::Tensor;
//!
//! let mut g = Graph::<f64>::new();
//! let x = g.param("x", Tensor::scalar(3.0));
//! let y = g.param("y", Tensor::scalar(4.0));
//! let f = g.mul(x, y);
//! let grads = g.backward(f).unwrap();
//! assert_eq!(grads["x"].item(), 4.0);
//! assert_eq!(grads["y"].item(), 3.0);
//! ```

mod adam;
mod checkpoint;
mod gradcheck;
mod store;

use std::collections::BTreeMap;
use std::ops::Index;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub use adam::{adam_step, AdamConfig};
pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use gradcheck::{finite_difference_check, relative_error};
pub use store::{Bindings, ParameterStore};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Primitive operation kinds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpTag {
    Leaf,
    MatMul,
    Add,
    Sub,
    Mul,
    AddBias,
    ScaleRows,
    Scale,
    AddConst,
    ConcatCols,
    ConcatRows,
    SliceCols,
    GatherRows,
    Transpose,
    Reshape,
    Sum,
    Mean,
    Sigmoid,
    Tanh,
    Softmax,
    L2Normalize,
    Hinge,
    MaxCols,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `m × n` plus a `1 × n` row added to every row.
    AddBias(Var, Var),
    /// `m × n` with row `i` multiplied by entry `i` of an `m × 1` column.
    ScaleRows(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    Transpose(Var),
    Reshape(Var),
    Sum(Var),
    Mean(Var),
    Sigmoid(Var),
    Tanh(Var),
    /// Softmax along each row.
    Softmax(Var),
    /// Each row divided by `sqrt(|row|^2 + eps)`.
    L2Normalize(Var),
    Hinge(Var),
    /// Row-wise maximum; the cached argmax is the first maximal column.
    MaxCols(Var, Vec<usize>),
}

impl Op {
    fn tag(&self) -> OpTag {
        match self {
            Op::Leaf => OpTag::Leaf,
            Op::MatMul(..) => OpTag::MatMul,
            Op::Add(..) => OpTag::Add,
            Op::Sub(..) => OpTag::Sub,
            Op::Mul(..) => OpTag::Mul,
            Op::AddBias(..) => OpTag::AddBias,
            Op::ScaleRows(..) => OpTag::ScaleRows,
            Op::Scale(..) => OpTag::Scale,
            Op::AddConst(..) => OpTag::AddConst,
            Op::ConcatCols(..) => OpTag::ConcatCols,
            Op::ConcatRows(..) => OpTag::ConcatRows,
            Op::SliceCols(..) => OpTag::SliceCols,
            Op::GatherRows(..) => OpTag::GatherRows,
            Op::Transpose(..) => OpTag::Transpose,
            Op::Reshape(..) => OpTag::Reshape,
            Op::Sum(..) => OpTag::Sum,
            Op::Mean(..) => OpTag::Mean,
            Op::Sigmoid(..) => OpTag::Sigmoid,
            Op::Tanh(..) => OpTag::Tanh,
            Op::Softmax(..) => OpTag::Softmax,
            Op::L2Normalize(..) => OpTag::L2Normalize,
            Op::Hinge(..) => OpTag::Hinge,
            Op::MaxCols(..) => OpTag::MaxCols,
        }
    }

    fn parents(&self) -> Vec<Var> {
        match self {
            Op::Leaf => Vec::new(),
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddBias(a, b)
            | Op::ScaleRows(a, b) => vec![*a, *b],
            Op::ConcatCols(vs) | Op::ConcatRows(vs) => vs.clone(),
            Op::Scale(a, _)
            | Op::AddConst(a)
            | Op::SliceCols(a, _)
            | Op::GatherRows(a, _)
            | Op::Transpose(a)
            | Op::Reshape(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::Sigmoid(a)
            | Op::Tanh(a)
            | Op::Softmax(a)
            | Op::L2Normalize(a)
            | Op::Hinge(a)
            | Op::MaxCols(a, _) => vec![*a],
        }
    }
}

/// Added under the square root of [`Graph::l2_normalize`] so the zero row maps
/// to zero.
pub const L2_EPS: f64 = 1e-12;

struct Node<T> {
    value: Tensor<T>,
    grad: Tensor<T>,
    op: Op,
}

/// Gradients of a scalar root with respect to every named parameter.
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    by_name: BTreeMap<String, Tensor<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn new() -> Self {
        Gradients {
            by_name: BTreeMap::new(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.by_name.get(name)
    }

    pub fn insert(&mut self, name: impl Into<String>, grad: Tensor<T>) {
        self.by_name.insert(name.into(), grad);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.by_name.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.by_name.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_name.is_empty()
    }
}

impl<T: Real> Default for Gradients<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Index<&str> for Gradients<T> {
    type Output = Tensor<T>;

    fn index(&self, name: &str) -> &Tensor<T> {
        self.by_name
            .get(name)
            .unwrap_or_else(|| panic!("no gradient for {name}"))
    }
}

/// Arena-backed computation graph. One graph per forward/backward pass.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    params: Vec<(String, Var)>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            params: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op) -> Var {
        let (r, c) = value.shape();
        self.nodes.push(Node {
            value,
            grad: Tensor::zeros(r, c),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Gradient accumulated at `v` by the last [`Graph::backward`] call.
    pub fn grad(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].grad
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn op_tag(&self, v: Var) -> OpTag {
        self.nodes[v.0].op.tag()
    }

    pub fn parents(&self, v: Var) -> Vec<Var> {
        self.nodes[v.0].op.parents()
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// A named leaf whose gradient is reported by [`Graph::backward`].
    pub fn param(&mut self, name: impl Into<String>, value: Tensor<T>) -> Var {
        let v = self.push(value, Op::Leaf);
        self.params.push((name.into(), v));
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        self.push(value, Op::MatMul(a, b))
    }

    fn zip_with(&self, a: Var, b: Var, what: &str, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape(), y.shape(), "{what}: shape mismatch");
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        Tensor::from_vec(x.rows(), x.cols(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.zip_with(a, b, "add", |p, q| p + q);
        self.push(value, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.zip_with(a, b, "sub", |p, q| p - q);
        self.push(value, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.zip_with(a, b, "mul", |p, q| p * q);
        self.push(value, Op::Mul(a, b))
    }

    pub fn add_bias(&mut self, a: Var, bias: Var) -> Var {
        let x = self.value(a);
        let b = self.value(bias);
        assert_eq!(b.rows(), 1, "add_bias: bias must be a row");
        assert_eq!(x.cols(), b.cols(), "add_bias: width mismatch");
        let mut value = x.clone();
        for r in 0..value.rows() {
            for (o, &bb) in value.row_mut(r).iter_mut().zip(b.data()) {
                *o += bb;
            }
        }
        self.push(value, Op::AddBias(a, bias))
    }

    pub fn scale_rows(&mut self, a: Var, weights: Var) -> Var {
        let x = self.value(a);
        let w = self.value(weights);
        assert_eq!(w.shape(), (x.rows(), 1), "scale_rows: weights must be m x 1");
        let mut value = x.clone();
        for r in 0..value.rows() {
            let s = w.data()[r];
            for o in value.row_mut(r) {
                *o *= s;
            }
        }
        self.push(value, Op::ScaleRows(a, weights))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let k = T::from_f64_lossy(c);
        let value = self.value(a).map(|x| x * k);
        self.push(value, Op::Scale(a, c))
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        let k = T::from_f64_lossy(c);
        let value = self.value(a).map(|x| x + k);
        self.push(value, Op::AddConst(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols of nothing");
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                let t = self.value(p);
                assert_eq!(t.rows(), rows, "concat_cols: row mismatch");
                data.extend_from_slice(t.row(r));
            }
        }
        self.push(Tensor::from_vec(rows, cols, data), Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_rows of nothing");
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            assert_eq!(t.cols(), cols, "concat_rows: column mismatch");
            data.extend_from_slice(t.data());
            rows += t.rows();
        }
        self.push(Tensor::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()))
    }

    /// Columns `start..start + len`.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let x = self.value(a);
        assert!(start + len <= x.cols(), "slice_cols out of range");
        let mut data = Vec::with_capacity(x.rows() * len);
        for r in 0..x.rows() {
            data.extend_from_slice(&x.row(r)[start..start + len]);
        }
        self.push(Tensor::from_vec(x.rows(), len, data), Op::SliceCols(a, start))
    }

    /// Output row `k` is input row `indices[k]`; indices may repeat.
    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Var {
        let x = self.value(a);
        let mut data = Vec::with_capacity(indices.len() * x.cols());
        for &i in indices {
            data.extend_from_slice(x.row(i));
        }
        let value = Tensor::from_vec(indices.len(), x.cols(), data);
        self.push(value, Op::GatherRows(a, indices.to_vec()))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        self.push(value, Op::Transpose(a))
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let value = self.value(a).clone().reshaped(rows, cols);
        self.push(value, Op::Reshape(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let n = T::from_usize(x.len()).expect("length fits");
        let s: T = x.data().iter().copied().sum();
        self.push(Tensor::scalar(s / n), Op::Mean(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| T::one() / (T::one() + (-x).exp()));
        self.push(value, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.tanh());
        self.push(value, Op::Tanh(a))
    }

    /// Softmax along each row.
    pub fn softmax(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        for r in 0..value.rows() {
            softmax_in_place(value.row_mut(r));
        }
        self.push(value, Op::Softmax(a))
    }

    pub fn l2_normalize(&mut self, a: Var) -> Var {
        let eps = T::from_f64_lossy(L2_EPS);
        let mut value = self.value(a).clone();
        for r in 0..value.rows() {
            let row = value.row_mut(r);
            let norm = (row.iter().map(|&x| x * x).sum::<T>() + eps).sqrt();
            for x in row {
                *x = *x / norm;
            }
        }
        self.push(value, Op::L2Normalize(a))
    }

    /// `max(0, x)` elementwise.
    pub fn hinge(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.max(T::zero()));
        self.push(value, Op::Hinge(a))
    }

    /// Row-wise maximum, `m × n -> m × 1`.
    pub fn max_cols(&mut self, a: Var) -> Var {
        let x = self.value(a);
        assert!(x.cols() > 0, "max over empty rows");
        let mut argmax = Vec::with_capacity(x.rows());
        let mut data = Vec::with_capacity(x.rows());
        for r in 0..x.rows() {
            let (best, value) = first_argmax(x.row(r));
            argmax.push(best);
            data.push(value);
        }
        let value = Tensor::from_vec(x.rows(), 1, data);
        self.push(value, Op::MaxCols(a, argmax))
    }

    /// Reverse sweep from a scalar root. Gradients from any previous sweep
    /// are discarded first, so repeated calls are deterministic.
    pub fn backward(&mut self, root: Var) -> Result<Gradients<T>> {
        if self.shape(root) != (1, 1) {
            return Err(Error::Autodiff("backward requires scalar".into()));
        }
        for node in &mut self.nodes {
            node.grad.data_mut().fill(T::zero());
        }
        self.nodes[root.0].grad = Tensor::scalar(T::one());
        for id in (0..=root.0).rev() {
            self.propagate(id);
        }
        let mut grads = Gradients::new();
        for (name, v) in &self.params {
            grads.insert(name.clone(), self.nodes[v.0].grad.clone());
        }
        Ok(grads)
    }

    fn accumulate(&mut self, v: Var, delta: &Tensor<T>) {
        self.nodes[v.0].grad.add_assign(delta);
    }

    fn propagate(&mut self, id: usize) {
        let op = self.nodes[id].op.clone();
        if matches!(op, Op::Leaf) {
            return;
        }
        let upstream = std::mem::replace(&mut self.nodes[id].grad, Tensor::zeros(0, 0));
        if upstream.data().iter().all(|g| *g == T::zero()) {
            self.nodes[id].grad = upstream;
            return;
        }
        let out = std::mem::replace(&mut self.nodes[id].value, Tensor::zeros(0, 0));
        self.propagate_op(op, &out, &upstream);
        self.nodes[id].value = out;
        self.nodes[id].grad = upstream;
    }

    fn propagate_op(&mut self, op: Op, out: &Tensor<T>, upstream: &Tensor<T>) {
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let da = upstream.matmul(&self.value(b).transpose());
                let db = self.value(a).transpose().matmul(upstream);
                self.accumulate(a, &da);
                self.accumulate(b, &db);
            }
            Op::Add(a, b) => {
                self.accumulate(a, upstream);
                self.accumulate(b, upstream);
            }
            Op::Sub(a, b) => {
                self.accumulate(a, upstream);
                let neg = upstream.map(|g| -g);
                self.accumulate(b, &neg);
            }
            Op::Mul(a, b) => {
                let da = elementwise(upstream, self.value(b), |g, y| g * y);
                let db = elementwise(upstream, self.value(a), |g, x| g * x);
                self.accumulate(a, &da);
                self.accumulate(b, &db);
            }
            Op::AddBias(a, bias) => {
                let mut db = Tensor::zeros(1, upstream.cols());
                for r in 0..upstream.rows() {
                    for (d, &g) in db.data_mut().iter_mut().zip(upstream.row(r)) {
                        *d += g;
                    }
                }
                self.accumulate(a, upstream);
                self.accumulate(bias, &db);
            }
            Op::ScaleRows(a, w) => {
                let x = self.value(a);
                let wv = self.value(w);
                let mut da = upstream.clone();
                let mut dw = Tensor::zeros(wv.rows(), 1);
                for r in 0..x.rows() {
                    let s = wv.data()[r];
                    let mut acc = T::zero();
                    for ((d, &g), &xv) in da.row_mut(r).iter_mut().zip(upstream.row(r)).zip(x.row(r)) {
                        *d = g * s;
                        acc += g * xv;
                    }
                    dw.data_mut()[r] = acc;
                }
                self.accumulate(a, &da);
                self.accumulate(w, &dw);
            }
            Op::Scale(a, c) => {
                let k = T::from_f64_lossy(c);
                let da = upstream.map(|g| g * k);
                self.accumulate(a, &da);
            }
            Op::AddConst(a) => self.accumulate(a, upstream),
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for p in parts {
                    let w = self.value(p).cols();
                    let mut dp = Tensor::zeros(upstream.rows(), w);
                    for r in 0..upstream.rows() {
                        dp.row_mut(r).copy_from_slice(&upstream.row(r)[offset..offset + w]);
                    }
                    offset += w;
                    self.accumulate(p, &dp);
                }
            }
            Op::ConcatRows(parts) => {
                let cols = upstream.cols();
                let mut offset = 0;
                for p in parts {
                    let h = self.value(p).rows();
                    let slice = upstream.data()[offset * cols..(offset + h) * cols].to_vec();
                    offset += h;
                    self.accumulate(p, &Tensor::from_vec(h, cols, slice));
                }
            }
            Op::SliceCols(a, start) => {
                let (rows, cols) = self.shape(a);
                let mut da = Tensor::zeros(rows, cols);
                let w = upstream.cols();
                for r in 0..rows {
                    da.row_mut(r)[start..start + w].copy_from_slice(upstream.row(r));
                }
                self.accumulate(a, &da);
            }
            Op::GatherRows(a, indices) => {
                let (rows, cols) = self.shape(a);
                let mut da = Tensor::zeros(rows, cols);
                for (k, &i) in indices.iter().enumerate() {
                    for (d, &g) in da.row_mut(i).iter_mut().zip(upstream.row(k)) {
                        *d += g;
                    }
                }
                self.accumulate(a, &da);
            }
            Op::Transpose(a) => {
                let da = upstream.transpose();
                self.accumulate(a, &da);
            }
            Op::Reshape(a) => {
                let (rows, cols) = self.shape(a);
                let da = upstream.clone().reshaped(rows, cols);
                self.accumulate(a, &da);
            }
            Op::Sum(a) => {
                let (rows, cols) = self.shape(a);
                let da = Tensor::filled(rows, cols, upstream.item());
                self.accumulate(a, &da);
            }
            Op::Mean(a) => {
                let (rows, cols) = self.shape(a);
                let n = T::from_usize(rows * cols).expect("length fits");
                let da = Tensor::filled(rows, cols, upstream.item() / n);
                self.accumulate(a, &da);
            }
            Op::Sigmoid(a) => {
                let da = elementwise(upstream, out, |g, y| g * y * (T::one() - y));
                self.accumulate(a, &da);
            }
            Op::Tanh(a) => {
                let da = elementwise(upstream, out, |g, y| g * (T::one() - y * y));
                self.accumulate(a, &da);
            }
            Op::Softmax(a) => {
                let mut da = Tensor::zeros(out.rows(), out.cols());
                for r in 0..out.rows() {
                    let y = out.row(r);
                    let g = upstream.row(r);
                    let dot: T = y.iter().zip(g).map(|(&yy, &gg)| yy * gg).sum();
                    for ((d, &yy), &gg) in da.row_mut(r).iter_mut().zip(y).zip(g) {
                        *d = yy * (gg - dot);
                    }
                }
                self.accumulate(a, &da);
            }
            Op::L2Normalize(a) => {
                let eps = T::from_f64_lossy(L2_EPS);
                let x = self.value(a);
                let mut da = Tensor::zeros(x.rows(), x.cols());
                for r in 0..x.rows() {
                    let norm = (x.row(r).iter().map(|&v| v * v).sum::<T>() + eps).sqrt();
                    let y = out.row(r);
                    let g = upstream.row(r);
                    let dot: T = y.iter().zip(g).map(|(&yy, &gg)| yy * gg).sum();
                    for ((d, &yy), &gg) in da.row_mut(r).iter_mut().zip(y).zip(g) {
                        *d = (gg - yy * dot) / norm;
                    }
                }
                self.accumulate(a, &da);
            }
            Op::Hinge(a) => {
                let da = elementwise(
                    upstream,
                    self.value(a),
                    |g, x| {
                        if x > T::zero() {
                            g
                        } else {
                            T::zero()
                        }
                    },
                );
                self.accumulate(a, &da);
            }
            Op::MaxCols(a, argmax) => {
                let (rows, cols) = self.shape(a);
                let mut da = Tensor::zeros(rows, cols);
                for (r, &c) in argmax.iter().enumerate() {
                    da.set(r, c, upstream.data()[r]);
                }
                self.accumulate(a, &da);
            }
        }
    }
}

fn elementwise<T: Real>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_vec(a.rows(), a.cols(), data)
}

/// Index and value of the first maximal entry.
pub(crate) fn first_argmax<T: Real>(xs: &[T]) -> (usize, T) {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    (best, xs[best])
}

pub(crate) fn softmax_in_place<T: Real>(xs: &mut [T]) {
    let max = xs.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in xs.iter_mut() {
        *x = *x / total;
    }
}
