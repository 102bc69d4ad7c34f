//! Minimal reverse-mode differentiation over dense f64 arrays.
//!
//! A [`Tape`] is a define-by-run record of operations: each op appends a node
//! holding its forward value, a same-shape gradient accumulator and the
//! indices of its inputs. Appending keeps the node list in topological order,
//! so [`Tape::backward`] is a single reverse sweep that visits every recorded
//! op exactly once. Leaves (parameters, inputs) only ever accumulate
//! gradient; repeated backward calls without [`Tape::zero_grads`] accumulate.
//!
//! Broadcasting is deliberately narrow: binary elementwise ops accept equal
//! shapes or scalar-with-array, nothing else. The only other implicit
//! broadcast is [`Tape::add_bias`] (row vector over matrix rows), which has
//! its own backward rule.

use crate::array::Array;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ValueRef(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnaryKind {
    Relu,
    Exp,
    Square,
    Sigmoid,
    Abs,
    Sqrt,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Mean,
    /// Gradient routes to the first argmax element on ties.
    Max,
}

enum Op {
    Leaf,
    MatMul(ValueRef, ValueRef),
    /// matrix (r x c) + bias (1 x c) broadcast over rows
    AddBias(ValueRef, ValueRef),
    Binary(BinaryKind, ValueRef, ValueRef),
    Unary(UnaryKind, ValueRef),
    Reduce(ReduceKind, ValueRef),
    MulScalar(ValueRef, f64),
    AddScalar(ValueRef),
    /// D[i][j] = ||row_i(a) - row_j(b)||^2
    PairwiseSqDist(ValueRef, ValueRef),
    /// M[i][j] = u[i] - v[j] for column vectors u, v
    OuterSub(ValueRef, ValueRef),
    ConcatRows(ValueRef, ValueRef),
    PermuteRows(ValueRef, Vec<usize>),
    SliceRows(ValueRef, usize),
    /// per-row mean over columns: (r x c) -> (r x 1)
    RowMeans(ValueRef),
}

struct Node {
    data: Array,
    grad: Array,
    op: Op,
}

/// Dynamically built computation record. Confined to one worker; distinct
/// tapes on distinct workers run fully in parallel.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, data: Array, op: Op) -> ValueRef {
        let grad = Array::zeros(data.rows(), data.cols());
        self.nodes.push(Node { data, grad, op });
        ValueRef(self.nodes.len() - 1)
    }

    /// Record a leaf. Leaves receive gradient only via accumulation.
    pub fn leaf(&mut self, data: Array) -> ValueRef {
        self.push(data, Op::Leaf)
    }

    pub fn scalar(&mut self, x: f64) -> ValueRef {
        self.leaf(Array::scalar(x))
    }

    pub fn value(&self, r: ValueRef) -> &Array {
        &self.nodes[r.0].data
    }

    pub fn grad(&self, r: ValueRef) -> &Array {
        &self.nodes[r.0].grad
    }

    /// Forward value of a scalar node.
    pub fn scalar_value(&self, r: ValueRef) -> f64 {
        debug_assert!(self.nodes[r.0].data.is_scalar());
        self.nodes[r.0].data.data()[0]
    }

    pub fn zero_grads(&mut self) {
        for node in &mut self.nodes {
            node.grad.fill(0.0);
        }
    }

    // ---- ops -----------------------------------------------------------

    pub fn matmul(&mut self, a: ValueRef, b: ValueRef) -> Result<ValueRef> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn add_bias(&mut self, m: ValueRef, bias: ValueRef) -> Result<ValueRef> {
        let (mv, bv) = (self.value(m), self.value(bias));
        if bv.rows() != 1 || bv.cols() != mv.cols() {
            return Err(Error::Dimension {
                op: "add_bias",
                lhs: mv.shape(),
                rhs: bv.shape(),
            });
        }
        let (r, c) = mv.shape();
        let mut out = Array::zeros(r, c);
        for i in 0..r {
            for j in 0..c {
                out.set(i, j, mv.get(i, j) + bv.get(0, j));
            }
        }
        Ok(self.push(out, Op::AddBias(m, bias)))
    }

    pub fn binary(&mut self, kind: BinaryKind, a: ValueRef, b: ValueRef) -> Result<ValueRef> {
        let (av, bv) = (self.value(a), self.value(b));
        let compatible =
            av.shape() == bv.shape() || av.is_scalar() || bv.is_scalar();
        if !compatible {
            return Err(Error::Dimension {
                op: "elementwise",
                lhs: av.shape(),
                rhs: bv.shape(),
            });
        }
        let (r, c) = if av.is_scalar() { bv.shape() } else { av.shape() };
        let n = r * c;
        let mut data = Vec::with_capacity(n);
        for i in 0..n {
            let x = if av.is_scalar() { av.data()[0] } else { av.data()[i] };
            let y = if bv.is_scalar() { bv.data()[0] } else { bv.data()[i] };
            data.push(match kind {
                BinaryKind::Add => x + y,
                BinaryKind::Sub => x - y,
                BinaryKind::Mul => x * y,
                BinaryKind::Div => x / y,
            });
        }
        Ok(self.push(Array::from_vec(r, c, data), Op::Binary(kind, a, b)))
    }

    pub fn add(&mut self, a: ValueRef, b: ValueRef) -> Result<ValueRef> {
        self.binary(BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: ValueRef, b: ValueRef) -> Result<ValueRef> {
        self.binary(BinaryKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: ValueRef, b: ValueRef) -> Result<ValueRef> {
        self.binary(BinaryKind::Mul, a, b)
    }

    pub fn div(&mut self, a: ValueRef, b: ValueRef) -> Result<ValueRef> {
        self.binary(BinaryKind::Div, a, b)
    }

    pub fn unary(&mut self, kind: UnaryKind, a: ValueRef) -> ValueRef {
        let data: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .map(|&x| match kind {
                UnaryKind::Relu => x.max(0.0),
                UnaryKind::Exp => x.exp(),
                UnaryKind::Square => x * x,
                UnaryKind::Sigmoid => sigmoid(x),
                UnaryKind::Abs => x.abs(),
                UnaryKind::Sqrt => x.sqrt(),
            })
            .collect();
        let (r, c) = self.value(a).shape();
        self.push(Array::from_vec(r, c, data), Op::Unary(kind, a))
    }

    pub fn relu(&mut self, a: ValueRef) -> ValueRef {
        self.unary(UnaryKind::Relu, a)
    }

    pub fn exp(&mut self, a: ValueRef) -> ValueRef {
        self.unary(UnaryKind::Exp, a)
    }

    pub fn square(&mut self, a: ValueRef) -> ValueRef {
        self.unary(UnaryKind::Square, a)
    }

    pub fn sigmoid(&mut self, a: ValueRef) -> ValueRef {
        self.unary(UnaryKind::Sigmoid, a)
    }

    pub fn abs(&mut self, a: ValueRef) -> ValueRef {
        self.unary(UnaryKind::Abs, a)
    }

    pub fn sqrt(&mut self, a: ValueRef) -> ValueRef {
        self.unary(UnaryKind::Sqrt, a)
    }

    pub fn reduce(&mut self, kind: ReduceKind, a: ValueRef) -> ValueRef {
        let v = self.value(a).data();
        let out = match kind {
            ReduceKind::Sum => v.iter().sum(),
            ReduceKind::Mean => v.iter().sum::<f64>() / v.len() as f64,
            ReduceKind::Max => v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        };
        self.push(Array::scalar(out), Op::Reduce(kind, a))
    }

    pub fn sum(&mut self, a: ValueRef) -> ValueRef {
        self.reduce(ReduceKind::Sum, a)
    }

    pub fn mean(&mut self, a: ValueRef) -> ValueRef {
        self.reduce(ReduceKind::Mean, a)
    }

    pub fn max(&mut self, a: ValueRef) -> ValueRef {
        self.reduce(ReduceKind::Max, a)
    }

    pub fn mul_scalar(&mut self, a: ValueRef, c: f64) -> ValueRef {
        let (r, cc) = self.value(a).shape();
        let data = self.value(a).data().iter().map(|&x| x * c).collect();
        self.push(Array::from_vec(r, cc, data), Op::MulScalar(a, c))
    }

    pub fn add_scalar(&mut self, a: ValueRef, c: f64) -> ValueRef {
        let (r, cc) = self.value(a).shape();
        let data = self.value(a).data().iter().map(|&x| x + c).collect();
        self.push(Array::from_vec(r, cc, data), Op::AddScalar(a))
    }

    /// Squared euclidean distances between all row pairs of `a` and `b`.
    pub fn pairwise_sq_dist(&mut self, a: ValueRef, b: ValueRef) -> Result<ValueRef> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols() != bv.cols() {
            return Err(Error::Dimension {
                op: "pairwise_sq_dist",
                lhs: av.shape(),
                rhs: bv.shape(),
            });
        }
        let (ra, rb, d) = (av.rows(), bv.rows(), av.cols());
        let mut out = Array::zeros(ra, rb);
        for i in 0..ra {
            for j in 0..rb {
                let mut s = 0.0;
                for k in 0..d {
                    let diff = av.get(i, k) - bv.get(j, k);
                    s += diff * diff;
                }
                out.set(i, j, s);
            }
        }
        Ok(self.push(out, Op::PairwiseSqDist(a, b)))
    }

    /// M[i][j] = u[i] - v[j] for column vectors.
    pub fn outer_sub(&mut self, u: ValueRef, v: ValueRef) -> Result<ValueRef> {
        let (uv, vv) = (self.value(u), self.value(v));
        if uv.cols() != 1 || vv.cols() != 1 {
            return Err(Error::Dimension {
                op: "outer_sub",
                lhs: uv.shape(),
                rhs: vv.shape(),
            });
        }
        let (n, m) = (uv.rows(), vv.rows());
        let mut out = Array::zeros(n, m);
        for i in 0..n {
            for j in 0..m {
                out.set(i, j, uv.get(i, 0) - vv.get(j, 0));
            }
        }
        Ok(self.push(out, Op::OuterSub(u, v)))
    }

    pub fn concat_rows(&mut self, a: ValueRef, b: ValueRef) -> Result<ValueRef> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols() != bv.cols() {
            return Err(Error::Dimension {
                op: "concat_rows",
                lhs: av.shape(),
                rhs: bv.shape(),
            });
        }
        let mut data = av.data().to_vec();
        data.extend_from_slice(bv.data());
        let out = Array::from_vec(av.rows() + bv.rows(), av.cols(), data);
        Ok(self.push(out, Op::ConcatRows(a, b)))
    }

    /// Row permutation: out row i = input row perm[i].
    pub fn permute_rows(&mut self, a: ValueRef, perm: Vec<usize>) -> Result<ValueRef> {
        let av = self.value(a);
        if perm.len() != av.rows() {
            return Err(Error::contract(format!(
                "permute_rows: permutation length {} != row count {}",
                perm.len(),
                av.rows()
            )));
        }
        let out = av.select_rows(&perm);
        Ok(self.push(out, Op::PermuteRows(a, perm)))
    }

    pub fn slice_rows(&mut self, a: ValueRef, start: usize, len: usize) -> Result<ValueRef> {
        let av = self.value(a);
        if start + len > av.rows() {
            return Err(Error::contract(format!(
                "slice_rows: range {}..{} out of {} rows",
                start,
                start + len,
                av.rows()
            )));
        }
        let indices: Vec<usize> = (start..start + len).collect();
        let out = av.select_rows(&indices);
        Ok(self.push(out, Op::SliceRows(a, start)))
    }

    /// Per-row mean over columns: (r x c) -> (r x 1).
    pub fn row_means(&mut self, a: ValueRef) -> ValueRef {
        let av = self.value(a);
        let (r, c) = av.shape();
        let data: Vec<f64> = (0..r)
            .map(|i| (0..c).map(|j| av.get(i, j)).sum::<f64>() / c as f64)
            .collect();
        self.push(Array::column(data), Op::RowMeans(a))
    }

    // ---- backward ------------------------------------------------------

    /// Reverse sweep from a scalar root. Every leaf's grad afterwards holds
    /// d(root)/d(leaf). Accumulates on top of existing grads.
    pub fn backward(&mut self, root: ValueRef) -> Result<()> {
        if !self.nodes[root.0].data.is_scalar() {
            return Err(Error::contract(format!(
                "backward: root must be scalar, got {:?}",
                self.nodes[root.0].data.shape()
            )));
        }
        self.nodes[root.0].grad.data_mut()[0] += 1.0;

        for idx in (0..=root.0).rev() {
            if matches!(self.nodes[idx].op, Op::Leaf) {
                continue;
            }
            // Consume the node's grad: only leaves accumulate across calls.
            let (r, c) = self.nodes[idx].grad.shape();
            let grad = std::mem::replace(&mut self.nodes[idx].grad, Array::zeros(r, c));
            self.propagate(idx, &grad);
        }
        Ok(())
    }

    fn propagate(&mut self, idx: usize, g: &Array) {
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (a, b) = (a.0, b.0);
                // dA = G @ B^T ; dB = A^T @ G
                let (m, n) = g.shape();
                let k = self.nodes[a].data.cols();
                for i in 0..m {
                    for p in 0..k {
                        let mut s = 0.0;
                        for j in 0..n {
                            s += g.get(i, j) * self.nodes[b].data.get(p, j);
                        }
                        let cur = self.nodes[a].grad.get(i, p);
                        self.nodes[a].grad.set(i, p, cur + s);
                    }
                }
                for p in 0..k {
                    for j in 0..n {
                        let mut s = 0.0;
                        for i in 0..m {
                            s += self.nodes[a].data.get(i, p) * g.get(i, j);
                        }
                        let cur = self.nodes[b].grad.get(p, j);
                        self.nodes[b].grad.set(p, j, cur + s);
                    }
                }
            }
            Op::AddBias(m, bias) => {
                let (m, bias) = (m.0, bias.0);
                let (r, c) = g.shape();
                for i in 0..r {
                    for j in 0..c {
                        let cur = self.nodes[m].grad.get(i, j);
                        self.nodes[m].grad.set(i, j, cur + g.get(i, j));
                        let cur = self.nodes[bias].grad.get(0, j);
                        self.nodes[bias].grad.set(0, j, cur + g.get(i, j));
                    }
                }
            }
            Op::Binary(kind, a, b) => {
                let kind = *kind;
                let (a, b) = (a.0, b.0);
                let a_scalar = self.nodes[a].data.is_scalar();
                let b_scalar = self.nodes[b].data.is_scalar();
                let n = g.len();
                for i in 0..n {
                    let gi = g.data()[i];
                    let x = if a_scalar {
                        self.nodes[a].data.data()[0]
                    } else {
                        self.nodes[a].data.data()[i]
                    };
                    let y = if b_scalar {
                        self.nodes[b].data.data()[0]
                    } else {
                        self.nodes[b].data.data()[i]
                    };
                    let (da, db) = match kind {
                        BinaryKind::Add => (gi, gi),
                        BinaryKind::Sub => (gi, -gi),
                        BinaryKind::Mul => (gi * y, gi * x),
                        BinaryKind::Div => (gi / y, -gi * x / (y * y)),
                    };
                    let ia = if a_scalar { 0 } else { i };
                    let ib = if b_scalar { 0 } else { i };
                    self.nodes[a].grad.data_mut()[ia] += da;
                    self.nodes[b].grad.data_mut()[ib] += db;
                }
            }
            Op::Unary(kind, a) => {
                let kind = *kind;
                let a = a.0;
                let out_data: Vec<f64> = self.nodes[idx].data.data().to_vec();
                for i in 0..g.len() {
                    let x = self.nodes[a].data.data()[i];
                    let local = match kind {
                        // subgradient 0 at x == 0
                        UnaryKind::Relu => {
                            if x > 0.0 {
                                1.0
                            } else {
                                0.0
                            }
                        }
                        UnaryKind::Exp => out_data[i],
                        UnaryKind::Square => 2.0 * x,
                        UnaryKind::Sigmoid => {
                            let s = out_data[i];
                            s * (1.0 - s)
                        }
                        UnaryKind::Abs => {
                            if x > 0.0 {
                                1.0
                            } else if x < 0.0 {
                                -1.0
                            } else {
                                0.0
                            }
                        }
                        UnaryKind::Sqrt => 0.5 / out_data[i],
                    };
                    self.nodes[a].grad.data_mut()[i] += g.data()[i] * local;
                }
            }
            Op::Reduce(kind, a) => {
                let kind = *kind;
                let a = a.0;
                let gi = g.data()[0];
                match kind {
                    ReduceKind::Sum => {
                        for x in self.nodes[a].grad.data_mut() {
                            *x += gi;
                        }
                    }
                    ReduceKind::Mean => {
                        let n = self.nodes[a].data.len() as f64;
                        for x in self.nodes[a].grad.data_mut() {
                            *x += gi / n;
                        }
                    }
                    ReduceKind::Max => {
                        // first argmax on ties
                        let data = self.nodes[a].data.data();
                        let mut best = 0;
                        for i in 1..data.len() {
                            if data[i] > data[best] {
                                best = i;
                            }
                        }
                        self.nodes[a].grad.data_mut()[best] += gi;
                    }
                }
            }
            Op::MulScalar(a, c) => {
                let (a, c) = (a.0, *c);
                for i in 0..g.len() {
                    self.nodes[a].grad.data_mut()[i] += g.data()[i] * c;
                }
            }
            Op::AddScalar(a) => {
                let a = a.0;
                for i in 0..g.len() {
                    self.nodes[a].grad.data_mut()[i] += g.data()[i];
                }
            }
            Op::PairwiseSqDist(a, b) => {
                let (a, b) = (a.0, b.0);
                let (ra, rb) = g.shape();
                let d = self.nodes[a].data.cols();
                for i in 0..ra {
                    for j in 0..rb {
                        let gij = g.get(i, j);
                        if gij == 0.0 {
                            continue;
                        }
                        for k in 0..d {
                            let diff =
                                self.nodes[a].data.get(i, k) - self.nodes[b].data.get(j, k);
                            let cur = self.nodes[a].grad.get(i, k);
                            self.nodes[a].grad.set(i, k, cur + 2.0 * gij * diff);
                            let cur = self.nodes[b].grad.get(j, k);
                            self.nodes[b].grad.set(j, k, cur - 2.0 * gij * diff);
                        }
                    }
                }
            }
            Op::OuterSub(u, v) => {
                let (u, v) = (u.0, v.0);
                let (n, m) = g.shape();
                for i in 0..n {
                    for j in 0..m {
                        let gij = g.get(i, j);
                        let cur = self.nodes[u].grad.get(i, 0);
                        self.nodes[u].grad.set(i, 0, cur + gij);
                        let cur = self.nodes[v].grad.get(j, 0);
                        self.nodes[v].grad.set(j, 0, cur - gij);
                    }
                }
            }
            Op::ConcatRows(a, b) => {
                let (a, b) = (a.0, b.0);
                let na = self.nodes[a].data.len();
                for i in 0..na {
                    self.nodes[a].grad.data_mut()[i] += g.data()[i];
                }
                for i in 0..self.nodes[b].data.len() {
                    self.nodes[b].grad.data_mut()[i] += g.data()[na + i];
                }
            }
            Op::PermuteRows(a, perm) => {
                let perm = perm.clone();
                let a = a.0;
                let c = g.cols();
                for (i, &src) in perm.iter().enumerate() {
                    for j in 0..c {
                        let cur = self.nodes[a].grad.get(src, j);
                        self.nodes[a].grad.set(src, j, cur + g.get(i, j));
                    }
                }
            }
            Op::SliceRows(a, start) => {
                let (a, start) = (a.0, *start);
                let (r, c) = g.shape();
                for i in 0..r {
                    for j in 0..c {
                        let cur = self.nodes[a].grad.get(start + i, j);
                        self.nodes[a].grad.set(start + i, j, cur + g.get(i, j));
                    }
                }
            }
            Op::RowMeans(a) => {
                let a = a.0;
                let c = self.nodes[a].data.cols() as f64;
                let cols = self.nodes[a].data.cols();
                for i in 0..g.rows() {
                    let gi = g.get(i, 0) / c;
                    for j in 0..cols {
                        let cur = self.nodes[a].grad.get(i, j);
                        self.nodes[a].grad.set(i, j, cur + gi);
                    }
                }
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
