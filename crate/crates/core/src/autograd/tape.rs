//! Reverse-mode differentiation over a linear tape of 2-D tensor operations.
//!
//! Operations are recorded in execution order, so the node list is already
//! topologically sorted and a single reverse sweep computes every gradient.

use std::borrow::Cow;
use std::rc::Rc;

use rand::Rng;

use super::params::{ParamGrads, ParamId, ParamStore};
use crate::error::{Result, TsamError};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Elementwise nonlinearities.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    LeakyRelu(f64),
    Relu,
    Sigmoid,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Param,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Scale(Var, T),
    Reshape(Var),
    ConcatCols(Vec<Var>),
    SoftmaxRows(Var),
    LayerNorm(Var, Vec<T>),
    NeighborSoftmax(Var, Rc<[Vec<usize>]>),
    PairScores(Var),
    Activate(Var, Activation),
    MulConst(Var, Vec<T>),
    GatherRows(Var, Rc<[usize]>),
    SegmentMean(Var, Rc<[(usize, usize)]>),
    Sum(Var),
    SumSquares(Var),
    MeanBce(Var, Vec<T>, T),
}

struct Node<'p, T: Real> {
    value: Cow<'p, Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records a forward computation for later differentiation.
///
/// Parameters are borrowed from a [`ParamStore`] rather than copied.
pub struct Tape<'p, T: Real> {
    store: Option<&'p ParamStore<T>>,
    nodes: Vec<Node<'p, T>>,
    param_nodes: Vec<Option<Var>>,
}

impl<'p, T: Real> Default for Tape<'p, T> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(op: &'static str, a: &[usize], b: &[usize]) -> TsamError {
    TsamError::Shape {
        op,
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    }
}

fn check_matrix(op: &'static str, t: &Tensor<impl Real>) -> Result<()> {
    if t.shape().len() != 2 {
        return Err(TsamError::InvalidArgument(format!(
            "{op} expects a matrix, got shape {:?}",
            t.shape()
        )));
    }
    Ok(())
}

/// `out[m×n] += a[m×k] · b[k×n]`
fn gemm_nn<T: Real>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m×n] += a[m×k] · b[n×k]ᵀ`
fn gemm_nt<T: Real>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = T::zero();
            for (&x, &y) in arow.iter().zip(brow) {
                acc += x * y;
            }
            out[i * n + j] += acc;
        }
    }
}

/// `out[k×n] += a[m×k]ᵀ · b[m×n]`
fn gemm_tn<T: Real>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

fn softmax_in_place<T: Real>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in row.iter_mut() {
        *x /= total;
    }
}

fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<'p, T: Real> Tape<'p, T> {
    pub fn new() -> Self {
        Self {
            store: None,
            nodes: Vec::new(),
            param_nodes: Vec::new(),
        }
    }

    pub fn with_params(store: &'p ParamStore<T>) -> Self {
        Self {
            store: Some(store),
            nodes: Vec::new(),
            param_nodes: vec![None; store.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool, name: &'static str) -> Result<Var> {
        if !value.is_finite() {
            return Err(TsamError::NonFinite(name));
        }
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records an input value. Gradients are tracked when `requires_grad` is set.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// The node for a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_nodes.get(id.0).copied().flatten() {
            return v;
        }
        let store = self.store.expect("tape was created without a parameter store");
        self.nodes.push(Node {
            value: Cow::Borrowed(store.get(id)),
            op: Op::Param,
            requires_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_nodes[id.0] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        check_matrix("matmul", av)?;
        check_matrix("matmul", bv)?;
        let (m, k, n) = (av.rows(), av.cols(), bv.cols());
        if bv.rows() != k {
            return Err(shape_err("matmul", av.shape(), bv.shape()));
        }
        let mut out = vec![T::zero(); m * n];
        gemm_nn(av.data(), bv.data(), &mut out, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg, "matmul")
    }

    /// `a · bᵀ` without materializing the transpose.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        check_matrix("matmul_t", av)?;
        check_matrix("matmul_t", bv)?;
        let (m, k, n) = (av.rows(), av.cols(), bv.rows());
        if bv.cols() != k {
            return Err(shape_err("matmul_t", av.shape(), bv.shape()));
        }
        let mut out = vec![T::zero(); m * n];
        gemm_nt(av.data(), bv.data(), &mut out, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::new(vec![m, n], out)?, Op::MatMulT(a, b), rg, "matmul_t")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err("add", av.shape(), bv.shape()));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| x + y).collect();
        let t = Tensor::new(av.shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        self.push(t, Op::Add(a, b), rg, "add")
    }

    /// Adds a length-`n` bias to every row of an `m × n` matrix.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(bias));
        check_matrix("add_bias", av)?;
        let n = av.cols();
        if bv.numel() != n {
            return Err(shape_err("add_bias", av.shape(), bv.shape()));
        }
        let b = bv.data();
        let data = av
            .data()
            .chunks(n)
            .flat_map(|row| row.iter().zip(b).map(|(&x, &y)| x + y))
            .collect();
        let t = Tensor::new(av.shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(bias);
        self.push(t, Op::AddBias(a, bias), rg, "add_bias")
    }

    pub fn scale(&mut self, a: Var, c: T) -> Result<Var> {
        let av = self.value(a);
        let t = Tensor::new(av.shape().to_vec(), av.data().iter().map(|&x| x * c).collect())?;
        let rg = self.rg(a);
        self.push(t, Op::Scale(a, c), rg, "scale")
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let av = self.value(a);
        if shape.iter().product::<usize>() != av.numel() {
            return Err(shape_err("reshape", av.shape(), shape));
        }
        let t = Tensor::new(shape.to_vec(), av.data().to_vec())?;
        let rg = self.rg(a);
        self.push(t, Op::Reshape(a), rg, "reshape")
    }

    /// Horizontal concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| TsamError::InvalidArgument("concat_cols of nothing".into()))?;
        let m = self.value(*first).rows();
        for &p in parts {
            let pv = self.value(p);
            check_matrix("concat_cols", pv)?;
            if pv.rows() != m {
                return Err(shape_err("concat_cols", self.value(*first).shape(), pv.shape()));
            }
        }
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(m * total);
        for i in 0..m {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(Tensor::new(vec![m, total], data)?, Op::ConcatCols(parts.to_vec()), rg, "concat_cols")
    }

    /// Numerically stable softmax over each row.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        check_matrix("softmax_rows", av)?;
        let n = av.cols();
        let mut data = av.data().to_vec();
        if n > 0 {
            data.chunks_mut(n).for_each(softmax_in_place);
        }
        let t = Tensor::new(av.shape().to_vec(), data)?;
        let rg = self.rg(a);
        self.push(t, Op::SoftmaxRows(a), rg, "softmax_rows")
    }

    /// Normalizes every row to zero mean and unit variance:
    /// `(x - mean) / sqrt(var + eps)`, without a learned gain or bias.
    pub fn layer_norm_rows(&mut self, a: Var, eps: T) -> Result<Var> {
        let av = self.value(a);
        check_matrix("layer_norm_rows", av)?;
        let n = av.cols();
        if n == 0 {
            return Err(TsamError::InvalidArgument("layer_norm_rows needs at least one column".into()));
        }
        let nf = T::of(n as f64);
        let mut data = av.data().to_vec();
        let mut inv = Vec::with_capacity(av.rows());
        for row in data.chunks_mut(n) {
            let mean = row.iter().copied().sum::<T>() / nf;
            let var = row.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>() / nf;
            let r = T::one() / (var + eps).sqrt();
            row.iter_mut().for_each(|x| *x = (*x - mean) * r);
            inv.push(r);
        }
        let t = Tensor::new(av.shape().to_vec(), data)?;
        let rg = self.rg(a);
        self.push(t, Op::LayerNorm(a, inv), rg, "layer_norm_rows")
    }

    /// Softmax of row `i` restricted to the columns in `neighbors[i]`; every
    /// other entry is zero. A row with no neighbors is all zeros.
    pub fn neighbor_softmax(&mut self, a: Var, neighbors: Rc<[Vec<usize>]>) -> Result<Var> {
        let av = self.value(a);
        check_matrix("neighbor_softmax", av)?;
        let (m, n) = (av.rows(), av.cols());
        if neighbors.len() != m {
            return Err(shape_err("neighbor_softmax", av.shape(), &[neighbors.len()]));
        }
        let mut data = vec![T::zero(); m * n];
        let mut buf = Vec::new();
        for (i, nbrs) in neighbors.iter().enumerate() {
            if nbrs.iter().any(|&j| j >= n) {
                return Err(TsamError::InvalidArgument(format!(
                    "neighbor index out of range for row {i} of width {n}"
                )));
            }
            buf.clear();
            buf.extend(nbrs.iter().map(|&j| av.at(i, j)));
            if buf.is_empty() {
                continue;
            }
            softmax_in_place(&mut buf);
            for (&j, &w) in nbrs.iter().zip(&buf) {
                data[i * n + j] = w;
            }
        }
        let rg = self.rg(a);
        self.push(Tensor::new(vec![m, n], data)?, Op::NeighborSoftmax(a, neighbors), rg, "neighbor_softmax")
    }

    /// From an `m × 2` matrix `x`, builds `p[i][j] = x[i][0] + x[j][1]`.
    pub fn pair_scores(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.shape() != [xv.rows(), 2] {
            return Err(shape_err("pair_scores", xv.shape(), &[xv.rows(), 2]));
        }
        let m = xv.rows();
        let mut data = Vec::with_capacity(m * m);
        for i in 0..m {
            let src = xv.at(i, 0);
            data.extend((0..m).map(|j| src + xv.at(j, 1)));
        }
        let rg = self.rg(x);
        self.push(Tensor::new(vec![m, m], data)?, Op::PairScores(x), rg, "pair_scores")
    }

    pub fn activate(&mut self, a: Var, kind: Activation) -> Result<Var> {
        let av = self.value(a);
        let data = match kind {
            Activation::LeakyRelu(slope) => {
                let s = T::of(slope);
                av.data().iter().map(|&x| if x > T::zero() { x } else { x * s }).collect()
            }
            Activation::Relu => av.data().iter().map(|&x| x.max(T::zero())).collect(),
            Activation::Sigmoid => av.data().iter().map(|&x| sigmoid(x)).collect(),
        };
        let t = Tensor::new(av.shape().to_vec(), data)?;
        let rg = self.rg(a);
        self.push(t, Op::Activate(a, kind), rg, "activation")
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Result<Var> {
        self.activate(a, Activation::LeakyRelu(slope))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.activate(a, Activation::Relu)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.activate(a, Activation::Sigmoid)
    }

    /// Inverted dropout. Identity in eval mode or at rate 0.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, rate: f64, training: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(TsamError::InvalidArgument(format!(
                "dropout rate must lie in [0, 1), got {rate}"
            )));
        }
        if !training || rate == 0.0 {
            return Ok(a);
        }
        let keep = T::of(1.0 / (1.0 - rate));
        let n = self.value(a).numel();
        let mask: Vec<T> = (0..n)
            .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
            .collect();
        let av = self.value(a);
        let data = av.data().iter().zip(&mask).map(|(&x, &k)| x * k).collect();
        let t = Tensor::new(av.shape().to_vec(), data)?;
        let rg = self.rg(a);
        self.push(t, Op::MulConst(a, mask), rg, "dropout")
    }

    /// Row lookup: `out[r] = table[indices[r]]`.
    pub fn gather_rows(&mut self, table: Var, indices: Rc<[usize]>) -> Result<Var> {
        let tv = self.value(table);
        check_matrix("gather_rows", tv)?;
        let (rows, d) = (tv.rows(), tv.cols());
        let mut data = Vec::with_capacity(indices.len() * d);
        for &ix in indices.iter() {
            if ix >= rows {
                return Err(TsamError::InvalidArgument(format!(
                    "row index {ix} out of range for table with {rows} rows"
                )));
            }
            data.extend_from_slice(tv.row(ix));
        }
        let rg = self.rg(table);
        self.push(Tensor::new(vec![indices.len(), d], data)?, Op::GatherRows(table, indices), rg, "gather_rows")
    }

    /// Mean over each half-open row range `[start, end)`.
    pub fn segment_mean(&mut self, a: Var, segments: Rc<[(usize, usize)]>) -> Result<Var> {
        let av = self.value(a);
        check_matrix("segment_mean", av)?;
        let d = av.cols();
        let mut data = Vec::with_capacity(segments.len() * d);
        for &(s, e) in segments.iter() {
            if s >= e || e > av.rows() {
                return Err(TsamError::InvalidArgument(format!(
                    "bad segment [{s}, {e}) over {} rows",
                    av.rows()
                )));
            }
            let inv = T::one() / T::of((e - s) as f64);
            let mut acc = vec![T::zero(); d];
            for r in s..e {
                for (o, &x) in acc.iter_mut().zip(av.row(r)) {
                    *o += x;
                }
            }
            data.extend(acc.into_iter().map(|x| x * inv));
        }
        let rg = self.rg(a);
        self.push(Tensor::new(vec![segments.len(), d], data)?, Op::SegmentMean(a, segments), rg, "segment_mean")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().copied().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg, "sum")
    }

    pub fn sum_squares(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).sum_squares();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::SumSquares(a), rg, "sum_squares")
    }

    /// Mean binary cross-entropy of probabilities against 0/1 targets, with
    /// probabilities clamped to `[eps, 1 - eps]` before the logarithm.
    pub fn mean_bce(&mut self, probs: Var, targets: &[T], eps: T) -> Result<Var> {
        let pv = self.value(probs);
        if pv.numel() != targets.len() || targets.is_empty() {
            return Err(shape_err("mean_bce", pv.shape(), &[targets.len()]));
        }
        let n = T::of(targets.len() as f64);
        let hi = T::one() - eps;
        let mut total = T::zero();
        for (&p, &y) in pv.data().iter().zip(targets) {
            let p = p.max(eps).min(hi);
            total -= y * p.ln() + (T::one() - y) * (T::one() - p).ln();
        }
        let rg = self.rg(probs);
        self.push(Tensor::scalar(total / n), Op::MeanBce(probs, targets.to_vec(), eps), rg, "mean_bce")
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(TsamError::InvalidArgument(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node<'p, T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let out = &node.value;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [T])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let n = self.nodes[v.0].value.numel();
            let buf = grads[v.0].get_or_insert_with(|| vec![T::zero(); n]);
            f(buf);
        };
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                acc(*a, &mut |da| gemm_nt(g, bv.data(), da, m, n, k));
                acc(*b, &mut |db| gemm_tn(av.data(), g, db, m, k, n));
            }
            Op::MatMulT(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.rows());
                acc(*a, &mut |da| gemm_nn(g, bv.data(), da, m, n, k));
                acc(*b, &mut |db| gemm_tn(g, av.data(), db, m, n, k));
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    acc(v, &mut |d| d.iter_mut().zip(g).for_each(|(x, &y)| *x += y));
                }
            }
            Op::AddBias(a, bias) => {
                acc(*a, &mut |d| d.iter_mut().zip(g).for_each(|(x, &y)| *x += y));
                let n = out.cols();
                acc(*bias, &mut |d| {
                    for row in g.chunks(n) {
                        d.iter_mut().zip(row).for_each(|(x, &y)| *x += y);
                    }
                });
            }
            Op::Scale(a, c) => acc(*a, &mut |d| d.iter_mut().zip(g).for_each(|(x, &y)| *x += y * *c)),
            Op::Reshape(a) => acc(*a, &mut |d| d.iter_mut().zip(g).for_each(|(x, &y)| *x += y)),
            Op::ConcatCols(parts) => {
                let total = out.cols();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    acc(p, &mut |d| {
                        for (i, row) in d.chunks_mut(w).enumerate() {
                            let src = &g[i * total + offset..i * total + offset + w];
                            row.iter_mut().zip(src).for_each(|(x, &y)| *x += y);
                        }
                    });
                    offset += w;
                }
            }
            Op::SoftmaxRows(a) => {
                let n = out.cols();
                acc(*a, &mut |d| {
                    for ((drow, yrow), grow) in d.chunks_mut(n).zip(out.data().chunks(n)).zip(g.chunks(n)) {
                        let dot: T = yrow.iter().zip(grow).map(|(&y, &gy)| y * gy).sum();
                        for ((dx, &y), &gy) in drow.iter_mut().zip(yrow).zip(grow) {
                            *dx += y * (gy - dot);
                        }
                    }
                });
            }
            Op::LayerNorm(a, inv) => {
                let n = out.cols();
                let nf = T::of(n as f64);
                acc(*a, &mut |d| {
                    for (((drow, yrow), grow), &r) in d.chunks_mut(n).zip(out.data().chunks(n)).zip(g.chunks(n)).zip(inv) {
                        let mg = grow.iter().copied().sum::<T>() / nf;
                        let mgy = yrow.iter().zip(grow).map(|(&y, &gy)| y * gy).sum::<T>() / nf;
                        for ((dx, &y), &gy) in drow.iter_mut().zip(yrow).zip(grow) {
                            *dx += r * (gy - mg - y * mgy);
                        }
                    }
                });
            }
            Op::NeighborSoftmax(a, neighbors) => {
                let n = out.cols();
                acc(*a, &mut |d| {
                    for (i, nbrs) in neighbors.iter().enumerate() {
                        let dot: T = nbrs.iter().map(|&j| out.at(i, j) * g[i * n + j]).sum();
                        for &j in nbrs {
                            d[i * n + j] += out.at(i, j) * (g[i * n + j] - dot);
                        }
                    }
                });
            }
            Op::PairScores(x) => {
                let m = out.rows();
                acc(*x, &mut |d| {
                    for i in 0..m {
                        for j in 0..m {
                            let gij = g[i * m + j];
                            d[i * 2] += gij;
                            d[j * 2 + 1] += gij;
                        }
                    }
                });
            }
            Op::Activate(a, kind) => {
                let xs = self.value(*a).data();
                let ys = out.data();
                acc(*a, &mut |d| match *kind {
                    Activation::LeakyRelu(slope) => {
                        let s = T::of(slope);
                        for ((dx, &x), &gy) in d.iter_mut().zip(xs).zip(g) {
                            *dx += if x > T::zero() { gy } else { gy * s };
                        }
                    }
                    Activation::Relu => {
                        for ((dx, &x), &gy) in d.iter_mut().zip(xs).zip(g) {
                            if x > T::zero() {
                                *dx += gy;
                            }
                        }
                    }
                    Activation::Sigmoid => {
                        for ((dx, &y), &gy) in d.iter_mut().zip(ys).zip(g) {
                            *dx += gy * y * (T::one() - y);
                        }
                    }
                });
            }
            Op::MulConst(a, mask) => {
                acc(*a, &mut |d| {
                    for ((dx, &k), &gy) in d.iter_mut().zip(mask).zip(g) {
                        *dx += gy * k;
                    }
                });
            }
            Op::GatherRows(table, indices) => {
                let dim = out.cols();
                acc(*table, &mut |d| {
                    for (r, &ix) in indices.iter().enumerate() {
                        let src = &g[r * dim..(r + 1) * dim];
                        d[ix * dim..(ix + 1) * dim]
                            .iter_mut()
                            .zip(src)
                            .for_each(|(x, &y)| *x += y);
                    }
                });
            }
            Op::SegmentMean(a, segments) => {
                let dim = out.cols();
                acc(*a, &mut |d| {
                    for (s_ix, &(s, e)) in segments.iter().enumerate() {
                        let inv = T::one() / T::of((e - s) as f64);
                        let src = &g[s_ix * dim..(s_ix + 1) * dim];
                        for r in s..e {
                            d[r * dim..(r + 1) * dim]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(x, &y)| *x += y * inv);
                        }
                    }
                });
            }
            Op::Sum(a) => {
                let g0 = g[0];
                acc(*a, &mut |d| d.iter_mut().for_each(|x| *x += g0));
            }
            Op::SumSquares(a) => {
                let two = T::of(2.0) * g[0];
                let xs = self.value(*a).data();
                acc(*a, &mut |d| d.iter_mut().zip(xs).for_each(|(dx, &x)| *dx += two * x));
            }
            Op::MeanBce(p, targets, eps) => {
                let ps = self.value(*p).data();
                let scale = g[0] / T::of(targets.len() as f64);
                let hi = T::one() - *eps;
                acc(*p, &mut |d| {
                    for ((dx, &p), &y) in d.iter_mut().zip(ps).zip(targets) {
                        if p > *eps && p < hi {
                            *dx += scale * ((T::one() - y) / (T::one() - p) - y / p);
                        }
                    }
                });
            }
        }
    }
}

/// Result of [`Tape::backward`]: one gradient buffer per reachable node.
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient with respect to `v`, or `None` when `v` does not influence the loss.
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient with respect to `v`; zeros when `v` is unreachable.
    pub fn get_or_zeros(&self, tape: &Tape<'_, T>, v: Var) -> Vec<T> {
        self.get(v)
            .map(<[T]>::to_vec)
            .unwrap_or_else(|| vec![T::zero(); tape.value(v).numel()])
    }

    /// Collects parameter gradients into store-aligned buffers.
    pub fn param_grads(&self, tape: &Tape<'_, T>) -> ParamGrads<T> {
        let store = tape.store.expect("tape was created without a parameter store");
        let mut out = ParamGrads::zeros_like(store);
        self.add_param_grads(tape, &mut out);
        out
    }

    /// Adds parameter gradients into an existing accumulator.
    pub fn add_param_grads(&self, tape: &Tape<'_, T>, out: &mut ParamGrads<T>) {
        for (ix, node) in tape.param_nodes.iter().enumerate() {
            let Some(v) = node else { continue };
            if let Some(g) = self.get(*v) {
                let dst = out.get_mut(ParamId(ix));
                dst.iter_mut().zip(g).for_each(|(d, &s)| *d += s);
            }
        }
    }
}
