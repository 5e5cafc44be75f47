//! Dense tensors and a reverse-mode autodiff tape.
//!
//! A [`Tape`] records every primitive op as a node holding its forward
//! value and the indices of its inputs. Nodes are appended in evaluation
//! order, so the node list is already topologically sorted and
//! [`Tape::backward`] is a single reverse sweep.
//!
//! Parameters enter a tape by reference ([`Tape::leaf`]), which keeps a
//! forward pass from copying the weights it reads.

use std::borrow::Cow;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    Shape { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("{op}: {msg}")]
    Usage { op: &'static str, msg: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

fn usage(op: &'static str, msg: impl Into<String>) -> TensorError {
    TensorError::Usage { op, msg: msg.into() }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
    pub requires_grad: bool,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self, TensorError> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(TensorError::Shape { op: "new", lhs: shape, rhs: vec![data.len()] });
        }
        Ok(Tensor { shape, data, requires_grad: false })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor { shape: shape.to_vec(), data: vec![T::zero(); shape.iter().product()], requires_grad: false }
    }

    pub fn full(shape: &[usize], v: T) -> Self {
        Tensor { shape: shape.to_vec(), data: vec![v; shape.iter().product()], requires_grad: false }
    }

    pub fn scalar(v: T) -> Self {
        Tensor { shape: vec![1], data: vec![v], requires_grad: false }
    }

    pub fn from_f64(shape: &[usize], data: &[f64]) -> Result<Self, TensorError> {
        Self::new(shape.to_vec(), data.iter().map(|&x| T::from_f64_lossy(x)).collect())
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn item(&self) -> T {
        self.data[0]
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|x| x.to_f64_lossy()).collect()
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| U::from_f64_lossy(x.to_f64_lossy())).collect(),
            requires_grad: self.requires_grad,
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    fn dims2(&self, op: &'static str) -> Result<(usize, usize), TensorError> {
        match self.shape[..] {
            [r, c] => Ok((r, c)),
            _ => Err(usage(op, format!("expected a matrix, got shape {:?}", self.shape))),
        }
    }
}

/// `(outer, axis_len, inner)` view of `shape` around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// `c[m,n] = a[m,k] b[k,n]`.
fn matmul_kernel<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
    c
}

/// `a[m,k] b[n,k]^T`.
fn matmul_a_bt<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            c[i * n + j] = arow.iter().zip(brow).map(|(&x, &y)| x * y).sum();
        }
    }
    c
}

/// `a[k,m]^T b[k,n]`.
fn matmul_at_b<T: Scalar>(a: &[T], b: &[T], k: usize, m: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    for p in 0..k {
        let brow = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let av = a[p * m + i];
            if av == T::zero() {
                continue;
            }
            let crow = &mut c[i * n..(i + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
    c
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

#[inline]
fn gelu<T: Scalar>(x: T) -> T {
    let c = T::from_f64_lossy(GELU_C);
    let a = T::from_f64_lossy(GELU_A);
    let half = T::from_f64_lossy(0.5);
    half * x * (T::one() + (c * (x + a * x * x * x)).tanh())
}

#[inline]
fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = T::from_f64_lossy(GELU_C);
    let a = T::from_f64_lossy(GELU_A);
    let half = T::from_f64_lossy(0.5);
    let three = T::from_f64_lossy(3.0);
    let u = c * (x + a * x * x * x);
    let th = u.tanh();
    half * (T::one() + th) + half * x * (T::one() - th * th) * c * (T::one() + three * a * x * x)
}

/// Handle to a node on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, T),
    Gelu(Var),
    Relu(Var),
    Ln(Var),
    Sum(Var),
    Softmax { input: Var, axis: usize },
    LayerNorm { input: Var, axis: usize, rstd: Vec<T> },
    Embedding { table: Var, ids: Vec<usize> },
    Concat { inputs: Vec<Var>, axis: usize },
    Slice { input: Var, axis: usize, start: usize },
    Pick { input: Var, cols: Vec<usize> },
    CrossEntropy { logits: Var, targets: Vec<usize>, probs: Vec<T> },
}

struct Node<'a, T: Scalar> {
    value: Cow<'a, Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

/// Record of one forward evaluation. Single-writer; build one per
/// forward/backward step.
pub struct Tape<'a, T: Scalar> {
    nodes: Vec<Node<'a, T>>,
}

impl<T: Scalar> Default for Tape<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a, T: Scalar> Tape<'a, T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
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

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value: Cow::Owned(value), op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vs: &[Var]) -> bool {
        vs.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Borrowed leaf; tracked for gradients if `t.requires_grad`.
    pub fn leaf(&mut self, t: &'a Tensor<T>) -> Var {
        let rg = t.requires_grad;
        self.nodes.push(Node { value: Cow::Borrowed(t), op: Op::Leaf, requires_grad: rg });
        Var(self.nodes.len() - 1)
    }

    /// Owned leaf; tracked for gradients if `t.requires_grad`.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        let rg = t.requires_grad;
        self.push(t, Op::Leaf, rg)
    }

    /// Owned leaf that never receives a gradient.
    pub fn constant(&mut self, mut t: Tensor<T>) -> Var {
        t.requires_grad = false;
        self.push(t, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = ta.dims2("matmul")?;
        let (k2, n) = tb.dims2("matmul")?;
        if k != k2 {
            return Err(TensorError::Shape { op: "matmul", lhs: ta.shape.clone(), rhs: tb.shape.clone() });
        }
        let out = matmul_kernel(&ta.data, &tb.data, m, k, n);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor { shape: vec![m, n], data: out, requires_grad: rg }, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, TensorError> {
        let ta = self.value(a);
        let (m, n) = ta.dims2("transpose")?;
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = ta.data[i * n + j];
            }
        }
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor { shape: vec![n, m], data: out, requires_grad: rg }, Op::Transpose(a), rg))
    }

    fn zip_same(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape != tb.shape {
            return Err(TensorError::Shape { op, lhs: ta.shape.clone(), rhs: tb.shape.clone() });
        }
        let data = ta.data.iter().zip(&tb.data).map(|(&x, &y)| f(x, y)).collect();
        Ok(Tensor { shape: ta.shape.clone(), data, requires_grad: false })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let t = self.zip_same("add", a, b, |x, y| x + y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let t = self.zip_same("sub", a, b, |x, y| x - y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::Sub(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let t = self.zip_same("mul", a, b, |x, y| x * y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::Mul(a, b), rg))
    }

    fn row_broadcast(&mut self, op: &'static str, a: Var, row: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>, TensorError> {
        let (ta, tr) = (self.value(a), self.value(row));
        let n = *ta.shape.last().unwrap_or(&0);
        if tr.shape != [n] {
            return Err(TensorError::Shape { op, lhs: ta.shape.clone(), rhs: tr.shape.clone() });
        }
        let data = ta.data.iter().enumerate().map(|(i, &x)| f(x, tr.data[i % n])).collect();
        Ok(Tensor { shape: ta.shape.clone(), data, requires_grad: false })
    }

    /// `a[.., n] + row[n]` broadcast over leading dims.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, TensorError> {
        let t = self.row_broadcast("add_row", a, row, |x, y| x + y)?;
        let rg = self.rg(&[a, row]);
        Ok(self.push(t, Op::AddRow(a, row), rg))
    }

    /// `a[.., n] * row[n]` broadcast over leading dims.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var, TensorError> {
        let t = self.row_broadcast("mul_row", a, row, |x, y| x * y)?;
        let rg = self.rg(&[a, row]);
        Ok(self.push(t, Op::MulRow(a, row), rg))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let ta = self.value(a);
        let t = Tensor { shape: ta.shape.clone(), data: ta.data.iter().map(|&x| x * s).collect(), requires_grad: false };
        let rg = self.rg(&[a]);
        self.push(t, Op::Scale(a, s), rg)
    }

    fn map(&mut self, a: Var, f: impl Fn(T) -> T) -> Tensor<T> {
        let ta = self.value(a);
        Tensor { shape: ta.shape.clone(), data: ta.data.iter().map(|&x| f(x)).collect(), requires_grad: false }
    }

    /// Tanh-approximation GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let t = self.map(a, gelu);
        let rg = self.rg(&[a]);
        self.push(t, Op::Gelu(a), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.map(a, |x| x.max(T::zero()));
        let rg = self.rg(&[a]);
        self.push(t, Op::Relu(a), rg)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let t = self.map(a, |x| x.ln());
        let rg = self.rg(&[a]);
        self.push(t, Op::Ln(a), rg)
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().copied().sum();
        let rg = self.rg(&[a]);
        self.push(Tensor { shape: vec![1], data: vec![s], requires_grad: false }, Op::Sum(a), rg)
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var, TensorError> {
        let ta = self.value(a);
        if axis >= ta.shape.len() {
            return Err(usage("softmax", format!("axis {axis} out of range for shape {:?}", ta.shape)));
        }
        let (outer, len, inner) = split_axis(&ta.shape, axis);
        let mut out = ta.data.clone();
        for o in 0..outer {
            for r in 0..inner {
                let idx = |i: usize| o * len * inner + i * inner + r;
                let max = (0..len).map(|i| out[idx(i)]).fold(T::neg_infinity(), T::max);
                let mut total = T::zero();
                for i in 0..len {
                    let e = (out[idx(i)] - max).exp();
                    out[idx(i)] = e;
                    total += e;
                }
                for i in 0..len {
                    out[idx(i)] /= total;
                }
            }
        }
        let shape = ta.shape.clone();
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor { shape, data: out, requires_grad: false }, Op::Softmax { input: a, axis }, rg))
    }

    /// `(x - mean) / sqrt(var + eps)` along `axis`, biased variance, no affine.
    pub fn layer_norm(&mut self, a: Var, axis: usize, eps: T) -> Result<Var, TensorError> {
        let ta = self.value(a);
        if axis >= ta.shape.len() {
            return Err(usage("layer_norm", format!("axis {axis} out of range for shape {:?}", ta.shape)));
        }
        let (outer, len, inner) = split_axis(&ta.shape, axis);
        let n = T::from_count(len);
        let mut out = ta.data.clone();
        let mut rstd = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for r in 0..inner {
                let idx = |i: usize| o * len * inner + i * inner + r;
                let mean = (0..len).map(|i| out[idx(i)]).sum::<T>() / n;
                let var = (0..len).map(|i| (out[idx(i)] - mean).powi(2)).sum::<T>() / n;
                let rs = T::one() / (var + eps).sqrt();
                for i in 0..len {
                    out[idx(i)] = (out[idx(i)] - mean) * rs;
                }
                rstd.push(rs);
            }
        }
        let shape = ta.shape.clone();
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor { shape, data: out, requires_grad: false }, Op::LayerNorm { input: a, axis, rstd }, rg))
    }

    /// Rows of `table[v, d]` gathered by `ids`, shape `[ids.len(), d]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var, TensorError> {
        let tt = self.value(table);
        let (v, d) = tt.dims2("embedding")?;
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(usage("embedding", format!("id {id} out of range for table of {v} rows")));
            }
            out.extend_from_slice(&tt.data[id * d..(id + 1) * d]);
        }
        let rg = self.rg(&[table]);
        Ok(self.push(
            Tensor { shape: vec![ids.len(), d], data: out, requires_grad: false },
            Op::Embedding { table, ids: ids.to_vec() },
            rg,
        ))
    }

    /// Concatenation along `axis`; all other dims must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var, TensorError> {
        let first = inputs.first().ok_or_else(|| usage("concat", "no inputs"))?;
        let base = self.value(*first).shape.clone();
        if axis >= base.len() {
            return Err(usage("concat", format!("axis {axis} out of range for shape {base:?}")));
        }
        let mut total = 0;
        for v in inputs {
            let s = &self.value(*v).shape;
            let compatible = s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(i, (x, y))| i == axis || x == y);
            if !compatible {
                return Err(TensorError::Shape { op: "concat", lhs: base.clone(), rhs: s.clone() });
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for v in inputs {
                let t = self.value(*v);
                let chunk = t.shape[axis] * inner;
                out.extend_from_slice(&t.data[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let rg = self.rg(inputs);
        Ok(self.push(Tensor { shape, data: out, requires_grad: false }, Op::Concat { inputs: inputs.to_vec(), axis }, rg))
    }

    /// `len` entries along `axis` starting at `start`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var, TensorError> {
        let ta = self.value(a);
        if axis >= ta.shape.len() || start + len > ta.shape[axis] {
            return Err(usage("slice", format!("range {start}..{} on axis {axis} of shape {:?}", start + len, ta.shape)));
        }
        let (outer, alen, inner) = split_axis(&ta.shape, axis);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * alen * inner + start * inner;
            out.extend_from_slice(&ta.data[base..base + len * inner]);
        }
        let mut shape = ta.shape.clone();
        shape[axis] = len;
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor { shape, data: out, requires_grad: false }, Op::Slice { input: a, axis, start }, rg))
    }

    /// `out[i] = a[i, cols[i]]` for a matrix `a`.
    pub fn pick(&mut self, a: Var, cols: &[usize]) -> Result<Var, TensorError> {
        let ta = self.value(a);
        let (m, n) = ta.dims2("pick")?;
        if cols.len() != m || cols.iter().any(|&c| c >= n) {
            return Err(usage("pick", format!("{} column indices for a {m}x{n} matrix", cols.len())));
        }
        let out = cols.iter().enumerate().map(|(i, &c)| ta.data[i * n + c]).collect();
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor { shape: vec![m], data: out, requires_grad: false }, Op::Pick { input: a, cols: cols.to_vec() }, rg))
    }

    /// Fused log-softmax and negative log-likelihood: mean over rows of
    /// `-log softmax(logits[i])[targets[i]]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var, TensorError> {
        let tl = self.value(logits);
        let (m, n) = tl.dims2("cross_entropy")?;
        if targets.len() != m || m == 0 || targets.iter().any(|&c| c >= n) {
            return Err(usage("cross_entropy", format!("{} targets for a {m}x{n} logit matrix", targets.len())));
        }
        let mut probs = vec![T::zero(); m * n];
        let mut loss = T::zero();
        for i in 0..m {
            let row = &tl.data[i * n..(i + 1) * n];
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = row.iter().map(|&x| (x - max).exp()).sum::<T>().ln() + max;
            loss += lse - row[targets[i]];
            for j in 0..n {
                probs[i * n + j] = (row[j] - lse).exp();
            }
        }
        loss /= T::from_count(m);
        let rg = self.rg(&[logits]);
        Ok(self.push(
            Tensor { shape: vec![1], data: vec![loss], requires_grad: false },
            Op::CrossEntropy { logits, targets: targets.to_vec(), probs },
            rg,
        ))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, TensorError> {
        if self.value(loss).numel() != 1 {
            return Err(usage("backward", format!("loss must be scalar, got shape {:?}", self.value(loss).shape)));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![T::one()]);
        }
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.backprop_node(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients {
            grads: grads
                .into_iter()
                .zip(&self.nodes)
                .map(|(g, n)| g.map(|data| Tensor { shape: n.value.shape.clone(), data, requires_grad: false }))
                .collect(),
        })
    }

    fn backprop_node(&self, node: &Node<'a, T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let val = |v: Var| -> &Tensor<T> { &self.nodes[v.0].value };
        let mut acc = |v: Var, contrib: Vec<T>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.iter_mut().zip(contrib).for_each(|(e, c)| *e += c),
                slot => *slot = Some(contrib),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (m, k) = (ta.shape[0], ta.shape[1]);
                let n = tb.shape[1];
                if self.nodes[a.0].requires_grad {
                    acc(*a, matmul_a_bt(g, &tb.data, m, n, k));
                }
                if self.nodes[b.0].requires_grad {
                    acc(*b, matmul_at_b(&ta.data, g, m, k, n));
                }
            }
            Op::Transpose(a) => {
                let (m, n) = (val(*a).shape[0], val(*a).shape[1]);
                let mut out = vec![T::zero(); m * n];
                for i in 0..m {
                    for j in 0..n {
                        out[i * n + j] = g[j * m + i];
                    }
                }
                acc(*a, out);
            }
            Op::Add(a, b) => {
                acc(*a, g.to_vec());
                acc(*b, g.to_vec());
            }
            Op::Sub(a, b) => {
                acc(*a, g.to_vec());
                acc(*b, g.iter().map(|&x| -x).collect());
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                acc(*a, g.iter().zip(&tb.data).map(|(&x, &y)| x * y).collect());
                acc(*b, g.iter().zip(&ta.data).map(|(&x, &y)| x * y).collect());
            }
            Op::AddRow(a, row) => {
                let n = val(*row).numel();
                let mut gr = vec![T::zero(); n];
                g.iter().enumerate().for_each(|(i, &x)| gr[i % n] += x);
                acc(*a, g.to_vec());
                acc(*row, gr);
            }
            Op::MulRow(a, row) => {
                let (ta, tr) = (val(*a), val(*row));
                let n = tr.numel();
                let mut gr = vec![T::zero(); n];
                let mut ga = vec![T::zero(); g.len()];
                for (i, &x) in g.iter().enumerate() {
                    gr[i % n] += x * ta.data[i];
                    ga[i] = x * tr.data[i % n];
                }
                acc(*a, ga);
                acc(*row, gr);
            }
            Op::Scale(a, s) => acc(*a, g.iter().map(|&x| x * *s).collect()),
            Op::Gelu(a) => acc(*a, g.iter().zip(&val(*a).data).map(|(&x, &v)| x * gelu_grad(v)).collect()),
            Op::Relu(a) => acc(
                *a,
                g.iter().zip(&val(*a).data).map(|(&x, &v)| if v > T::zero() { x } else { T::zero() }).collect(),
            ),
            Op::Ln(a) => acc(*a, g.iter().zip(&val(*a).data).map(|(&x, &v)| x / v).collect()),
            Op::Sum(a) => acc(*a, vec![g[0]; val(*a).numel()]),
            Op::Softmax { input, axis } => {
                let y = &node.value.data;
                let (outer, len, inner) = split_axis(&node.value.shape, *axis);
                let mut out = vec![T::zero(); y.len()];
                for o in 0..outer {
                    for r in 0..inner {
                        let idx = |i: usize| o * len * inner + i * inner + r;
                        let dot: T = (0..len).map(|i| g[idx(i)] * y[idx(i)]).sum();
                        for i in 0..len {
                            out[idx(i)] = y[idx(i)] * (g[idx(i)] - dot);
                        }
                    }
                }
                acc(*input, out);
            }
            Op::LayerNorm { input, axis, rstd } => {
                let xhat = &node.value.data;
                let (outer, len, inner) = split_axis(&node.value.shape, *axis);
                let n = T::from_count(len);
                let mut out = vec![T::zero(); xhat.len()];
                for o in 0..outer {
                    for r in 0..inner {
                        let idx = |i: usize| o * len * inner + i * inner + r;
                        let rs = rstd[o * inner + r];
                        let mean_g: T = (0..len).map(|i| g[idx(i)]).sum::<T>() / n;
                        let mean_gx: T = (0..len).map(|i| g[idx(i)] * xhat[idx(i)]).sum::<T>() / n;
                        for i in 0..len {
                            out[idx(i)] = rs * (g[idx(i)] - mean_g - xhat[idx(i)] * mean_gx);
                        }
                    }
                }
                acc(*input, out);
            }
            Op::Embedding { table, ids } => {
                let d = val(*table).shape[1];
                let mut out = vec![T::zero(); val(*table).numel()];
                for (row, &id) in ids.iter().enumerate() {
                    for k in 0..d {
                        out[id * d + k] += g[row * d + k];
                    }
                }
                acc(*table, out);
            }
            Op::Concat { inputs, axis } => {
                let (outer, total, inner) = split_axis(&node.value.shape, *axis);
                let mut offset = 0;
                for v in inputs {
                    let len = val(*v).shape[*axis];
                    let mut part = Vec::with_capacity(outer * len * inner);
                    for o in 0..outer {
                        let base = o * total * inner + offset * inner;
                        part.extend_from_slice(&g[base..base + len * inner]);
                    }
                    offset += len;
                    acc(*v, part);
                }
            }
            Op::Slice { input, axis, start } => {
                let (outer, alen, inner) = split_axis(&val(*input).shape, *axis);
                let len = node.value.shape[*axis];
                let mut out = vec![T::zero(); val(*input).numel()];
                for o in 0..outer {
                    let base = o * alen * inner + start * inner;
                    out[base..base + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                }
                acc(*input, out);
            }
            Op::Pick { input, cols } => {
                let n = val(*input).shape[1];
                let mut out = vec![T::zero(); val(*input).numel()];
                for (i, &c) in cols.iter().enumerate() {
                    out[i * n + c] = g[i];
                }
                acc(*input, out);
            }
            Op::CrossEntropy { logits, targets, probs } => {
                let n = val(*logits).shape[1];
                let m = targets.len();
                let s = g[0] / T::from_count(m);
                let mut out: Vec<T> = probs.iter().map(|&p| p * s).collect();
                for (i, &t) in targets.iter().enumerate() {
                    out[i * n + t] -= s;
                }
                acc(*logits, out);
            }
        }
    }
}

/// Gradients of one backward sweep, indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// `None` when `v` did not participate in the loss.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, zeros when it did not participate.
    pub fn wrt(&self, v: Var, shape: &[usize]) -> Tensor<T> {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

/// Result of a finite-difference comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(param index, flat coordinate, analytic, numeric, relative error)`.
    pub probes: Vec<(usize, usize, f64, f64, f64)>,
}

/// Relative error with denominator `max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares reverse-mode gradients of `f` against central differences at
/// the listed `(param, coordinate)` probes.
///
/// `f` builds a scalar loss on a fresh tape from the parameter vars it is
/// given, in the same order as `params`.
pub fn grad_check_at<F>(f: F, params: &mut [Tensor<f64>], probes: &[(usize, usize)], eps: f64) -> Result<GradCheckReport, TensorError>
where
    F: for<'t> Fn(&mut Tape<'t, f64>, &[Var]) -> Result<Var, TensorError>,
{
    for p in params.iter_mut() {
        p.requires_grad = true;
    }
    let analytic: Vec<Tensor<f64>> = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p)).collect();
        let loss = f(&mut tape, &vars)?;
        let grads = tape.backward(loss)?;
        vars.iter().zip(params.iter()).map(|(&v, p)| grads.wrt(v, p.shape())).collect()
    };
    let eval = |params: &[Tensor<f64>]| -> Result<f64, TensorError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p)).collect();
        let loss = f(&mut tape, &vars)?;
        Ok(tape.value(loss).item())
    };
    let mut report = GradCheckReport { max_rel_error: 0.0, probes: Vec::with_capacity(probes.len()) };
    for &(pi, k) in probes {
        if pi >= params.len() || k >= params[pi].numel() {
            return Err(usage("grad_check", format!("probe ({pi}, {k}) out of range")));
        }
        let orig = params[pi].data[k];
        params[pi].data[k] = orig + eps;
        let plus = eval(params)?;
        params[pi].data[k] = orig - eps;
        let minus = eval(params)?;
        params[pi].data[k] = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        let a = analytic[pi].data[k];
        let rel = relative_error(a, numeric);
        report.max_rel_error = report.max_rel_error.max(rel);
        report.probes.push((pi, k, a, numeric, rel));
    }
    Ok(report)
}

/// [`grad_check_at`] over every coordinate of every parameter.
pub fn grad_check<F>(f: F, params: &mut [Tensor<f64>], eps: f64) -> Result<f64, TensorError>
where
    F: for<'t> Fn(&mut Tape<'t, f64>, &[Var]) -> Result<Var, TensorError>,
{
    let probes: Vec<(usize, usize)> =
        params.iter().enumerate().flat_map(|(i, p)| (0..p.numel()).map(move |k| (i, k))).collect();
    Ok(grad_check_at(f, params, &probes, eps)?.max_rel_error)
}

/// One entry of a tensor-container manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    /// Byte offset into the payload file.
    pub offset: usize,
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const PAYLOAD_FILE: &str = "weights.bin";

#[derive(Serialize, Deserialize)]
struct ContainerManifest {
    tensors: Vec<TensorEntry>,
    payload_bytes: usize,
    #[serde(default)]
    meta: serde_json::Value,
}

/// Writes tensors as little-endian `f32` into `dir/weights.bin` with a JSON
/// manifest of names, shapes and byte offsets. `meta` is stored verbatim.
pub fn save_tensors<T: Scalar>(dir: &Path, tensors: &[(&str, &Tensor<T>)], meta: serde_json::Value) -> Result<(), TensorError> {
    let io = |e: std::io::Error| TensorError::Checkpoint(e.to_string());
    fs::create_dir_all(dir).map_err(io)?;
    let mut payload = Vec::new();
    let mut entries = Vec::with_capacity(tensors.len());
    for (name, t) in tensors {
        entries.push(TensorEntry { name: name.to_string(), shape: t.shape.clone(), dtype: "f32".into(), offset: payload.len() });
        for &x in &t.data {
            payload.extend_from_slice(&(x.to_f64_lossy() as f32).to_le_bytes());
        }
    }
    let manifest = ContainerManifest { tensors: entries, payload_bytes: payload.len(), meta };
    let mut f = fs::File::create(dir.join(PAYLOAD_FILE)).map_err(io)?;
    f.write_all(&payload).map_err(io)?;
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest).expect("manifest serializes")).map_err(io)?;
    Ok(())
}

pub type NamedTensors<T> = Vec<(String, Tensor<T>)>;

/// Reads a container written by [`save_tensors`]. Fails without returning
/// anything if the payload length or any offset disagrees with the manifest.
pub fn load_tensors<T: Scalar>(dir: &Path) -> Result<(serde_json::Value, NamedTensors<T>), TensorError> {
    let io = |e: std::io::Error| TensorError::Checkpoint(e.to_string());
    let text = fs::read_to_string(dir.join(MANIFEST_FILE)).map_err(io)?;
    let manifest: ContainerManifest =
        serde_json::from_str(&text).map_err(|e| TensorError::Checkpoint(format!("manifest: {e}")))?;
    let payload = fs::read(dir.join(PAYLOAD_FILE)).map_err(io)?;
    if payload.len() != manifest.payload_bytes {
        return Err(TensorError::Checkpoint(format!(
            "payload is {} bytes, manifest declares {}",
            payload.len(),
            manifest.payload_bytes
        )));
    }
    let mut expected_offset = 0;
    let mut out = Vec::with_capacity(manifest.tensors.len());
    for e in manifest.tensors {
        if e.dtype != "f32" {
            return Err(TensorError::Checkpoint(format!("{}: unsupported dtype {}", e.name, e.dtype)));
        }
        if e.offset != expected_offset {
            return Err(TensorError::Checkpoint(format!("{}: offset {} expected {expected_offset}", e.name, e.offset)));
        }
        let n: usize = e.shape.iter().product();
        let end = e.offset + 4 * n;
        if end > payload.len() {
            return Err(TensorError::Checkpoint(format!("{}: payload truncated", e.name)));
        }
        let data = payload[e.offset..end]
            .chunks_exact(4)
            .map(|b| T::from_f64_lossy(f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64))
            .collect();
        expected_offset = end;
        out.push((e.name, Tensor { shape: e.shape, data, requires_grad: false }));
    }
    if expected_offset != payload.len() {
        return Err(TensorError::Checkpoint("payload has trailing bytes".into()));
    }
    Ok((manifest.meta, out))
}
