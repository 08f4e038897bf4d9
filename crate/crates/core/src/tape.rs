//! Dense row-major tensors and a small reverse-mode autodiff tape.
//!
//! Every learned component in the crate (instruction encoder, graph-aware
//! cross-modal stack, score and fusion heads, waypoint/room perceptrons) is
//! built from the ops here. Values are `f64` throughout so that central
//! finite differences can verify the hand-written backward rules.

use serde::{Deserialize, Serialize};

/// A dense row-major matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn filled(rows: usize, cols: usize, v: f64) -> Self {
        Self { rows, cols, data: vec![v; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "tensor data length mismatch");
        Self { rows, cols, data }
    }

    pub fn row_vector(data: Vec<f64>) -> Self {
        let n = data.len();
        Self::from_vec(1, n, data)
    }

    pub fn col_vector(data: Vec<f64>) -> Self {
        let n = data.len();
        Self::from_vec(n, 1, data)
    }

    pub fn scalar(v: f64) -> Self {
        Self::from_vec(1, 1, vec![v])
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scaled_add_assign(&mut self, other: &Tensor, s: f64) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    pub fn transpose(&self) -> Tensor {
        let mut out = Tensor::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    /// `self · other`
    pub fn matmul(&self, other: &Tensor) -> Tensor {
        assert_eq!(self.cols, other.rows, "matmul inner dimension mismatch");
        let mut out = Tensor::zeros(self.rows, other.cols);
        matmul_into(self, other, &mut out);
        out
    }

    /// `self · otherᵀ`
    pub fn matmul_t(&self, other: &Tensor) -> Tensor {
        assert_eq!(self.cols, other.cols, "matmul_t inner dimension mismatch");
        let mut out = Tensor::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a = self.row(i);
            for j in 0..other.rows {
                out.data[i * other.rows + j] = dot(a, other.row(j));
            }
        }
        out
    }

    /// `selfᵀ · other`
    pub fn t_matmul(&self, other: &Tensor) -> Tensor {
        assert_eq!(self.rows, other.rows, "t_matmul inner dimension mismatch");
        let mut out = Tensor::zeros(self.cols, other.cols);
        let oc = other.cols;
        for k in 0..self.rows {
            let a = self.row(k);
            let b = other.row(k);
            for (i, &aik) in a.iter().enumerate() {
                if aik == 0.0 {
                    continue;
                }
                let dst = &mut out.data[i * oc..(i + 1) * oc];
                for (d, &bv) in dst.iter_mut().zip(b) {
                    *d += aik * bv;
                }
            }
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let (ac, bc) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ar, br) = (ac.remainder(), bc.remainder());
    for (x, y) in ac.zip(bc) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ar.iter().zip(br) {
        s += x * y;
    }
    s
}

fn matmul_into(a: &Tensor, b: &Tensor, out: &mut Tensor) {
    let n = b.cols;
    for i in 0..a.rows {
        let arow = a.row(i);
        let dst = &mut out.data[i * n..(i + 1) * n];
        for (k, &aik) in arow.iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            let brow = &b.data[k * n..(k + 1) * n];
            for (d, &bv) in dst.iter_mut().zip(brow) {
                *d += aik * bv;
            }
        }
    }
}

/// Named parameter tensors in a fixed serialization order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    pub names: Vec<String>,
    pub tensors: Vec<Tensor>,
}

/// Index of a tensor inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(t);
        ParamId(self.tensors.len() - 1)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn zeros_like(&self) -> Vec<Tensor> {
        self.tensors.iter().map(|t| Tensor::zeros(t.rows, t.cols)).collect()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    /// Plain gradient step: `θ ← θ − lr·g`.
    pub fn sgd_step(&mut self, grads: &[Tensor], lr: f64) {
        for (t, g) in self.tensors.iter_mut().zip(grads) {
            t.scaled_add_assign(g, -lr);
        }
    }
}

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param(usize),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    MulScalar(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    Tanh(Var),
    Sigmoid(Var),
    SoftmaxRows(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    GatherScalar(Var, Vec<usize>),
    MeanRows(Var),
    Transpose(Var),
    SumAll(Var),
    MeanAll(Var),
    AbsMean(Var),
    SoftCrossEntropy { logits: Var, target: Vec<f64>, probs: Vec<f64> },
}

struct Node {
    value: Option<Tensor>,
    op: Op,
}

/// Reverse-mode tape over a borrowed parameter store.
pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

#[inline]
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

#[inline]
fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softmax of a slice.
pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::INFINITY {
        return f64::INFINITY;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self { params, nodes: Vec::with_capacity(256), param_vars: vec![None; params.len()] }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value: Some(value), op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(i)) => &self.params.tensors[*i],
            _ => unreachable!("node without value"),
        }
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).data[0]
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        self.nodes.push(Node { value: None, op: Op::Param(id.0) });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul(self.value(b));
        self.push(out, Op::MatMul(a, b))
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul_t(self.value(b));
        self.push(out, Op::MatMulT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.shape(), tb.shape(), "add shape mismatch");
        let data = ta.data.iter().zip(&tb.data).map(|(x, y)| x + y).collect();
        let out = Tensor::from_vec(ta.rows, ta.cols, data);
        self.push(out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.shape(), tb.shape(), "sub shape mismatch");
        let data = ta.data.iter().zip(&tb.data).map(|(x, y)| x - y).collect();
        let out = Tensor::from_vec(ta.rows, ta.cols, data);
        self.push(out, Op::Sub(a, b))
    }

    /// `a (n×d) + b (1×d)` broadcast over rows.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(tb.rows, 1, "add_row expects a row vector");
        assert_eq!(ta.cols, tb.cols, "add_row width mismatch");
        let mut out = ta.clone();
        for r in 0..out.rows {
            for (d, bv) in out.row_mut(r).iter_mut().zip(&tb.data) {
                *d += bv;
            }
        }
        self.push(out, Op::AddRow(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.shape(), tb.shape(), "mul shape mismatch");
        let data = ta.data.iter().zip(&tb.data).map(|(x, y)| x * y).collect();
        let out = Tensor::from_vec(ta.rows, ta.cols, data);
        self.push(out, Op::Mul(a, b))
    }

    /// Multiply every entry of `a` by the 1×1 tensor `s`.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Var {
        let sv = self.value(s);
        assert_eq!(sv.shape(), (1, 1), "mul_scalar expects a 1x1 scale");
        let k = sv.data[0];
        let ta = self.value(a);
        let out = Tensor::from_vec(ta.rows, ta.cols, ta.data.iter().map(|x| x * k).collect());
        self.push(out, Op::MulScalar(a, s))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let ta = self.value(a);
        let out = Tensor::from_vec(ta.rows, ta.cols, ta.data.iter().map(|x| x * k).collect());
        self.push(out, Op::Scale(a, k))
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let ta = self.value(a);
        let out = Tensor::from_vec(ta.rows, ta.cols, ta.data.iter().map(|&x| f(x)).collect());
        self.push(out, op)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        self.map(a, gelu, Op::Gelu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let mut out = Tensor::zeros(ta.rows, ta.cols);
        for r in 0..ta.rows {
            let s = softmax(ta.row(r));
            out.row_mut(r).copy_from_slice(&s);
        }
        self.push(out, Op::SoftmaxRows(a))
    }

    /// Row-wise layer normalization with learned gain and bias (both 1×d).
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let tx = self.value(x);
        let (n, d) = tx.shape();
        let (g, b) = (self.value(gain), self.value(bias));
        assert_eq!(g.shape(), (1, d), "layer_norm gain shape");
        assert_eq!(b.shape(), (1, d), "layer_norm bias shape");
        let mut xhat = vec![0.0; n * d];
        let mut inv_std = vec![0.0; n];
        let mut out = Tensor::zeros(n, d);
        for r in 0..n {
            let row = tx.row(r);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std[r] = is;
            for c in 0..d {
                let h = (row[c] - mean) * is;
                xhat[r * d + c] = h;
                out.data[r * d + c] = g.data[c] * h + b.data[c];
            }
        }
        self.push(out, Op::LayerNorm { x, gain, bias, xhat, inv_std })
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let ta = self.value(a);
        assert!(start + len <= ta.cols, "slice_cols out of range");
        let mut out = Tensor::zeros(ta.rows, len);
        for r in 0..ta.rows {
            out.row_mut(r).copy_from_slice(&ta.row(r)[start..start + len]);
        }
        self.push(out, Op::SliceCols(a, start))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut out = Tensor::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let t = self.value(p);
            assert_eq!(t.rows, rows, "concat_cols row mismatch");
            for r in 0..rows {
                out.row_mut(r)[off..off + t.cols].copy_from_slice(t.row(r));
            }
            off += t.cols;
        }
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            assert_eq!(t.cols, cols, "concat_rows col mismatch");
            data.extend_from_slice(&t.data);
            rows += t.rows;
        }
        self.push(Tensor::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()))
    }

    /// Embedding lookup: `out[i] = table[idx[i]]`.
    pub fn gather_rows(&mut self, table: Var, idx: Vec<usize>) -> Var {
        let t = self.value(table);
        let mut out = Tensor::zeros(idx.len(), t.cols);
        for (r, &i) in idx.iter().enumerate() {
            out.row_mut(r).copy_from_slice(t.row(i));
        }
        self.push(out, Op::GatherRows(table, idx))
    }

    /// `out[i, j] = table[0, idx[i*cols + j]]` for a 1×k table.
    pub fn gather_scalar(&mut self, table: Var, rows: usize, cols: usize, idx: Vec<usize>) -> Var {
        assert_eq!(idx.len(), rows * cols, "gather_scalar index length");
        let t = self.value(table);
        assert_eq!(t.rows, 1, "gather_scalar expects a row table");
        let data = idx.iter().map(|&i| t.data[i]).collect();
        self.push(Tensor::from_vec(rows, cols, data), Op::GatherScalar(table, idx))
    }

    /// n×d → 1×d mean over rows.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let mut out = Tensor::zeros(1, ta.cols);
        for r in 0..ta.rows {
            for (d, v) in out.data.iter_mut().zip(ta.row(r)) {
                *d += v;
            }
        }
        let n = ta.rows.max(1) as f64;
        out.data.iter_mut().for_each(|v| *v /= n);
        self.push(out, Op::MeanRows(a))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        self.push(out, Op::Transpose(a))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll(a))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data.iter().sum::<f64>() / t.len() as f64;
        self.push(Tensor::scalar(s), Op::MeanAll(a))
    }

    /// Mean absolute value of all entries.
    pub fn abs_mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data.iter().map(|v| v.abs()).sum::<f64>() / t.len() as f64;
        self.push(Tensor::scalar(s), Op::AbsMean(a))
    }

    /// `−Σ target_i · log softmax(logits)_i` for a single row of logits.
    pub fn soft_cross_entropy(&mut self, logits: Var, target: Vec<f64>) -> Var {
        let t = self.value(logits);
        assert_eq!(t.rows, 1, "soft_cross_entropy expects a row of logits");
        assert_eq!(t.cols, target.len(), "soft_cross_entropy target length");
        let lse = log_sum_exp(&t.data);
        let loss: f64 = target
            .iter()
            .zip(&t.data)
            .filter(|(w, _)| **w != 0.0)
            .map(|(w, z)| -w * (z - lse))
            .sum();
        let probs = softmax(&t.data);
        self.push(Tensor::scalar(loss), Op::SoftCrossEntropy { logits, target, probs })
    }

    /// Cross-entropy against a class index.
    pub fn cross_entropy(&mut self, logits: Var, class: usize) -> Var {
        let n = self.value(logits).cols;
        let mut target = vec![0.0; n];
        target[class] = 1.0;
        self.soft_cross_entropy(logits, target)
    }

    /// Reverse pass from a scalar output. Returns one gradient per parameter
    /// tensor (zero for parameters that were never touched).
    pub fn backward(&self, output: Var) -> Vec<Tensor> {
        assert_eq!(self.value(output).shape(), (1, 1), "backward needs a scalar output");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Tensor::scalar(1.0));
        let mut param_grads: Vec<Option<Tensor>> = vec![None; self.params.len()];

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input => {}
                Op::Param(i) => accumulate(&mut param_grads, Var(*i), g),
                Op::MatMul(a, b) => {
                    if self.needs_grad(*a) {
                        let da = g.matmul_t(self.value(*b));
                        accumulate(&mut grads, *a, da);
                    }
                    if self.needs_grad(*b) {
                        let db = self.value(*a).t_matmul(&g);
                        accumulate(&mut grads, *b, db);
                    }
                }
                Op::MatMulT(a, b) => {
                    if self.needs_grad(*a) {
                        let da = g.matmul(self.value(*b));
                        accumulate(&mut grads, *a, da);
                    }
                    if self.needs_grad(*b) {
                        let db = g.t_matmul(self.value(*a));
                        accumulate(&mut grads, *b, db);
                    }
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *b, g.clone());
                    accumulate(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    let neg = Tensor::from_vec(g.rows, g.cols, g.data.iter().map(|v| -v).collect());
                    accumulate(&mut grads, *b, neg);
                    accumulate(&mut grads, *a, g);
                }
                Op::AddRow(a, b) => {
                    let mut db = Tensor::zeros(1, g.cols);
                    for r in 0..g.rows {
                        for (d, v) in db.data.iter_mut().zip(g.row(r)) {
                            *d += v;
                        }
                    }
                    accumulate(&mut grads, *b, db);
                    accumulate(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let da = zip_map(&g, tb, |x, y| x * y);
                    let db = zip_map(&g, ta, |x, y| x * y);
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::MulScalar(a, s) => {
                    let k = self.value(*s).data[0];
                    let ds: f64 = g.data.iter().zip(&self.value(*a).data).map(|(x, y)| x * y).sum();
                    let da = Tensor::from_vec(g.rows, g.cols, g.data.iter().map(|v| v * k).collect());
                    accumulate(&mut grads, *s, Tensor::scalar(ds));
                    accumulate(&mut grads, *a, da);
                }
                Op::Scale(a, k) => {
                    let da = Tensor::from_vec(g.rows, g.cols, g.data.iter().map(|v| v * k).collect());
                    accumulate(&mut grads, *a, da);
                }
                Op::Gelu(a) => {
                    let da = zip_map(&g, self.value(*a), |gv, x| gv * gelu_grad(x));
                    accumulate(&mut grads, *a, da);
                }
                Op::Tanh(a) => {
                    let y = node.value.as_ref().expect("tanh value");
                    let da = zip_map(&g, y, |gv, yv| gv * (1.0 - yv * yv));
                    accumulate(&mut grads, *a, da);
                }
                Op::Sigmoid(a) => {
                    let y = node.value.as_ref().expect("sigmoid value");
                    let da = zip_map(&g, y, |gv, yv| gv * yv * (1.0 - yv));
                    accumulate(&mut grads, *a, da);
                }
                Op::SoftmaxRows(a) => {
                    let y = node.value.as_ref().expect("softmax value");
                    let mut da = Tensor::zeros(g.rows, g.cols);
                    for r in 0..g.rows {
                        let (gr, yr) = (g.row(r), y.row(r));
                        let inner = dot(gr, yr);
                        for ((d, gv), yv) in da.row_mut(r).iter_mut().zip(gr).zip(yr) {
                            *d = yv * (gv - inner);
                        }
                    }
                    accumulate(&mut grads, *a, da);
                }
                Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
                    let (n, d) = g.shape();
                    let gv = self.value(*gain);
                    let mut dgain = Tensor::zeros(1, d);
                    let mut dbias = Tensor::zeros(1, d);
                    let mut dx = Tensor::zeros(n, d);
                    let mut dxhat = vec![0.0; d];
                    for r in 0..n {
                        let gr = g.row(r);
                        let xh = &xhat[r * d..(r + 1) * d];
                        for c in 0..d {
                            dgain.data[c] += gr[c] * xh[c];
                            dbias.data[c] += gr[c];
                            dxhat[c] = gr[c] * gv.data[c];
                        }
                        let sum_dxh: f64 = dxhat.iter().sum();
                        let sum_dxh_xh = dot(&dxhat, xh);
                        let k = inv_std[r] / d as f64;
                        for c in 0..d {
                            dx.data[r * d + c] =
                                k * (d as f64 * dxhat[c] - sum_dxh - xh[c] * sum_dxh_xh);
                        }
                    }
                    accumulate(&mut grads, *gain, dgain);
                    accumulate(&mut grads, *bias, dbias);
                    accumulate(&mut grads, *x, dx);
                }
                Op::SliceCols(a, start) => {
                    let ta = self.value(*a);
                    let mut da = Tensor::zeros(ta.rows, ta.cols);
                    for r in 0..g.rows {
                        da.row_mut(r)[*start..*start + g.cols].copy_from_slice(g.row(r));
                    }
                    accumulate(&mut grads, *a, da);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let w = self.value(p).cols;
                        let mut dp = Tensor::zeros(g.rows, w);
                        for r in 0..g.rows {
                            dp.row_mut(r).copy_from_slice(&g.row(r)[off..off + w]);
                        }
                        off += w;
                        accumulate(&mut grads, p, dp);
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let h = self.value(p).rows;
                        let dp = Tensor::from_vec(h, g.cols, g.data[off * g.cols..(off + h) * g.cols].to_vec());
                        off += h;
                        accumulate(&mut grads, p, dp);
                    }
                }
                Op::GatherRows(table, idx) => {
                    let t = self.value(*table);
                    let mut dt = Tensor::zeros(t.rows, t.cols);
                    for (r, &i) in idx.iter().enumerate() {
                        for (d, v) in dt.row_mut(i).iter_mut().zip(g.row(r)) {
                            *d += v;
                        }
                    }
                    accumulate(&mut grads, *table, dt);
                }
                Op::GatherScalar(table, idx) => {
                    let t = self.value(*table);
                    let mut dt = Tensor::zeros(1, t.cols);
                    for (&i, v) in idx.iter().zip(&g.data) {
                        dt.data[i] += v;
                    }
                    accumulate(&mut grads, *table, dt);
                }
                Op::MeanRows(a) => {
                    let ta = self.value(*a);
                    let n = ta.rows.max(1) as f64;
                    let mut da = Tensor::zeros(ta.rows, ta.cols);
                    for r in 0..ta.rows {
                        for (d, v) in da.row_mut(r).iter_mut().zip(&g.data) {
                            *d = v / n;
                        }
                    }
                    accumulate(&mut grads, *a, da);
                }
                Op::Transpose(a) => accumulate(&mut grads, *a, g.transpose()),
                Op::SumAll(a) => {
                    let ta = self.value(*a);
                    accumulate(&mut grads, *a, Tensor::filled(ta.rows, ta.cols, g.data[0]));
                }
                Op::MeanAll(a) => {
                    let ta = self.value(*a);
                    let v = g.data[0] / ta.len() as f64;
                    accumulate(&mut grads, *a, Tensor::filled(ta.rows, ta.cols, v));
                }
                Op::AbsMean(a) => {
                    let ta = self.value(*a);
                    let k = g.data[0] / ta.len() as f64;
                    let da = Tensor::from_vec(
                        ta.rows,
                        ta.cols,
                        ta.data.iter().map(|x| k * x.signum() * (*x != 0.0) as u8 as f64).collect(),
                    );
                    accumulate(&mut grads, *a, da);
                }
                Op::SoftCrossEntropy { logits, target, probs } => {
                    let total: f64 = target.iter().sum();
                    let k = g.data[0];
                    let data = probs.iter().zip(target).map(|(p, t)| k * (total * p - t)).collect();
                    accumulate(&mut grads, *logits, Tensor::from_vec(1, probs.len(), data));
                }
            }
        }
        param_grads
            .into_iter()
            .zip(&self.params.tensors)
            .map(|(g, t)| g.unwrap_or_else(|| Tensor::zeros(t.rows, t.cols)))
            .collect()
    }

    fn needs_grad(&self, v: Var) -> bool {
        !matches!(self.nodes[v.0].op, Op::Input)
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor::from_vec(a.rows, a.cols, a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect())
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_check(params: &mut ParamStore, f: impl Fn(&mut Graph) -> Var) {
        let analytic = {
            let mut g = Graph::new(params);
            let out = f(&mut g);
            g.backward(out)
        };
        let eps = 1e-6;
        for ti in 0..params.len() {
            for k in 0..params.tensors[ti].len() {
                let orig = params.tensors[ti].data[k];
                params.tensors[ti].data[k] = orig + eps;
                let up = {
                    let mut g = Graph::new(params);
                    let o = f(&mut g);
                    g.scalar(o)
                };
                params.tensors[ti].data[k] = orig - eps;
                let down = {
                    let mut g = Graph::new(params);
                    let o = f(&mut g);
                    g.scalar(o)
                };
                params.tensors[ti].data[k] = orig;
                let numeric = (up - down) / (2.0 * eps);
                let a = analytic[ti].data[k];
                assert!(
                    (a - numeric).abs() <= 1e-6 * (1.0 + numeric.abs()),
                    "tensor {} entry {k}: analytic {a} numeric {numeric}",
                    params.names[ti]
                );
            }
        }
    }

    fn lcg_tensor(rows: usize, cols: usize, seed: u64) -> Tensor {
        let mut s = seed;
        let data = (0..rows * cols)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect();
        Tensor::from_vec(rows, cols, data)
    }

    #[test]
    fn matmul_variants_agree() {
        let a = lcg_tensor(3, 4, 1);
        let b = lcg_tensor(4, 5, 2);
        let c = a.matmul(&b);
        let c2 = a.matmul_t(&b.transpose());
        let c3 = a.transpose().t_matmul(&b);
        for i in 0..c.len() {
            assert!((c.data[i] - c2.data[i]).abs() < 1e-12);
            assert!((c.data[i] - c3.data[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_block_gradients() {
        let mut ps = ParamStore::new();
        let x = ps.push("x", lcg_tensor(3, 4, 3));
        let w = ps.push("w", lcg_tensor(4, 4, 4));
        let gain = ps.push("gain", lcg_tensor(1, 4, 5));
        let bias = ps.push("bias", lcg_tensor(1, 4, 6));
        let table = ps.push("table", lcg_tensor(1, 3, 7));
        let emb = ps.push("emb", lcg_tensor(5, 4, 8));
        let s = ps.push("s", lcg_tensor(1, 1, 9));
        fd_check(&mut ps, |g| {
            let xv = g.param(x);
            let wv = g.param(w);
            let e = g.param(emb);
            let rows = g.gather_rows(e, vec![4, 0, 4]);
            let h = g.add(xv, rows);
            let q = g.matmul(h, wv);
            let logits = g.matmul_t(q, h);
            let tb = g.param(table);
            let b = g.gather_scalar(tb, 3, 3, vec![0, 1, 2, 1, 0, 2, 2, 2, 0]);
            let logits = g.add(logits, b);
            let att = g.softmax_rows(logits);
            let ctx = g.matmul(att, h);
            let gv = g.param(gain);
            let bv = g.param(bias);
            let n = g.layer_norm(ctx, gv, bv);
            let act = g.gelu(n);
            let t = g.tanh(act);
            let sl = g.slice_cols(t, 1, 2);
            let sl2 = g.slice_cols(n, 0, 2);
            let cat = g.concat_cols(&[sl, sl2]);
            let pooled = g.mean_rows(cat);
            let sv = g.param(s);
            let sig = g.sigmoid(sv);
            let scaled = g.mul_scalar(pooled, sig);
            g.cross_entropy(scaled, 2)
        });
    }

    #[test]
    fn elementwise_and_reduction_gradients() {
        let mut ps = ParamStore::new();
        let a = ps.push("a", lcg_tensor(2, 3, 11));
        let b = ps.push("b", lcg_tensor(2, 3, 12));
        let r = ps.push("r", lcg_tensor(1, 3, 13));
        fd_check(&mut ps, |g| {
            let av = g.param(a);
            let bv = g.param(b);
            let rv = g.param(r);
            let m = g.mul(av, bv);
            let d = g.sub(m, av);
            let d = g.add_row(d, rv);
            let t = g.transpose(d);
            let st = g.concat_rows(&[t, t]);
            let sc = g.scale(st, 0.3);
            let abs = g.abs_mean(sc);
            let mean = g.mean_all(m);
            let sum = g.sum_all(d);
            let all = g.concat_cols(&[abs, mean, sum]);
            g.soft_cross_entropy(all, vec![0.2, 0.5, 0.3])
        });
    }

    #[test]
    fn unused_params_get_zero_gradient() {
        let mut ps = ParamStore::new();
        let a = ps.push("a", lcg_tensor(1, 2, 1));
        let _b = ps.push("b", lcg_tensor(2, 2, 2));
        let g = {
            let mut g = Graph::new(&ps);
            let av = g.param(a);
            let s = g.sum_all(av);
            g.backward(s)
        };
        assert_eq!(g[0].data, vec![1.0, 1.0]);
        assert!(g[1].data.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn softmax_is_stable_for_large_inputs() {
        let p = softmax(&[1e6, 1e6 - 1.0, -1e6]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p[0] > p[1]);
        assert_eq!(log_sum_exp(&[0.0, 0.0]), 2f64.ln());
    }
}
