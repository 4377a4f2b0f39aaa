use crate::error::CoreError;

use super::tensor::{matmul_into, matmul_nt_into, matmul_tn_accum, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// a (m,k) x b (n,k)^T -> (m,n)
    MatMulNT(Var, Var),
    /// rhs either same-shape or a vector broadcast over the last axis
    Add(Var, Var),
    /// rhs either same-shape or a single-element tensor
    Mul(Var, Var),
    Scale(Var, f64),
    ConcatLast(Vec<Var>),
    MeanAxis(Var, usize),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    SoftmaxLast(Var),
    /// mean of squared residuals over every element -> scalar
    Mse(Var, Var),
    /// mean over rows of the euclidean residual norm -> scalar
    L2RowMean(Var, Var),
    Reshape(Var),
}

struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Define-by-run computation graph, rebuilt per forward pass.
///
/// Nodes are append-only, so reverse insertion order is a valid topological
/// order for backward and cycles cannot be constructed.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant leaf; no gradient is tracked through it.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value, false)
    }

    /// Trainable leaf; `backward` will populate its gradient.
    pub fn param(&mut self, value: &Tensor) -> Var {
        self.push(Op::Leaf, value.clone(), true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient buffer of `v` after [`Graph::backward`]. Zeros when the node
    /// was not reachable from the loss.
    pub fn grad(&self, v: Var) -> Vec<f64> {
        match self.grads.get(v.0).and_then(|g| g.clone()) {
            Some(g) => g,
            None => vec![0.0; self.nodes[v.0].value.numel()],
        }
    }

    pub fn grad_tensor(&self, v: Var) -> Tensor {
        Tensor::new(self.nodes[v.0].value.shape().to_vec(), self.grad(v))
            .expect("grad buffer shape-matches its node")
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> CoreError {
        CoreError::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, CoreError> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.cols() != tb.rows() {
            return Err(Self::mismatch("matmul", ta, tb));
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        let mut out = vec![0.0; m * n];
        matmul_into(&mut out, ta.data(), tb.data(), m, k, n);
        let rg = self.needs(&[a, b]);
        Ok(self.push(Op::MatMul(a, b), Tensor::new(vec![m, n], out)?, rg))
    }

    /// a x b^T with b stored row-major as [n, k].
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var, CoreError> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.cols() != tb.cols() {
            return Err(Self::mismatch("matmul_nt", ta, tb));
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.rows());
        let mut out = vec![0.0; m * n];
        matmul_nt_into(&mut out, ta.data(), tb.data(), m, k, n);
        let rg = self.needs(&[a, b]);
        Ok(self.push(Op::MatMulNT(a, b), Tensor::new(vec![m, n], out)?, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, CoreError> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let same = ta.shape() == tb.shape();
        let row_bcast = tb.shape().len() == 1
            && ta.shape().last().copied() == Some(tb.numel())
            && !ta.shape().is_empty();
        if !same && !row_bcast {
            return Err(Self::mismatch("add", ta, tb));
        }
        let mut out = ta.data().to_vec();
        if same {
            for (o, &v) in out.iter_mut().zip(tb.data()) {
                *o += v;
            }
        } else {
            let w = tb.numel();
            for chunk in out.chunks_mut(w) {
                for (o, &v) in chunk.iter_mut().zip(tb.data()) {
                    *o += v;
                }
            }
        }
        let shape = ta.shape().to_vec();
        let rg = self.needs(&[a, b]);
        Ok(self.push(Op::Add(a, b), Tensor::new(shape, out)?, rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, CoreError> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let same = ta.shape() == tb.shape();
        let scalar = tb.numel() == 1;
        if !same && !scalar {
            return Err(Self::mismatch("mul", ta, tb));
        }
        let out: Vec<f64> = if same {
            ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect()
        } else {
            let s = tb.data()[0];
            ta.data().iter().map(|x| x * s).collect()
        };
        let shape = ta.shape().to_vec();
        let rg = self.needs(&[a, b]);
        Ok(self.push(Op::Mul(a, b), Tensor::new(shape, out)?, rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let ta = &self.nodes[a.0].value;
        let out: Vec<f64> = ta.data().iter().map(|x| x * c).collect();
        let t = Tensor::new(ta.shape().to_vec(), out).expect("same shape");
        let rg = self.needs(&[a]);
        self.push(Op::Scale(a, c), t, rg)
    }

    /// Concatenation along the last axis.
    pub fn concat_last(&mut self, parts: &[Var]) -> Result<Var, CoreError> {
        if parts.is_empty() {
            return Err(CoreError::InvalidOperand {
                op: "concat",
                msg: "no inputs".into(),
            });
        }
        let first = self.nodes[parts[0].0].value.shape().to_vec();
        let lead = &first[..first.len().saturating_sub(1)];
        let mut last_total = 0;
        for p in parts {
            let s = self.nodes[p.0].value.shape();
            if s.len() != first.len() || &s[..s.len() - 1] != lead {
                return Err(Self::mismatch(
                    "concat",
                    &self.nodes[parts[0].0].value,
                    &self.nodes[p.0].value,
                ));
            }
            last_total += s[s.len() - 1];
        }
        let rows: usize = lead.iter().product();
        let mut out = vec![0.0; rows * last_total];
        let mut col_off = 0;
        for p in parts {
            let t = &self.nodes[p.0].value;
            let w = *t.shape().last().unwrap();
            for r in 0..rows {
                out[r * last_total + col_off..r * last_total + col_off + w]
                    .copy_from_slice(&t.data()[r * w..(r + 1) * w]);
            }
            col_off += w;
        }
        let mut shape = lead.to_vec();
        shape.push(last_total);
        let rg = self.needs(parts);
        Ok(self.push(Op::ConcatLast(parts.to_vec()), Tensor::new(shape, out)?, rg))
    }

    /// Mean over one axis; the axis is removed from the shape.
    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var, CoreError> {
        let ta = &self.nodes[a.0].value;
        let shape = ta.shape().to_vec();
        if axis >= shape.len() {
            return Err(CoreError::InvalidOperand {
                op: "mean_axis",
                msg: format!("axis {} out of range for shape {:?}", axis, shape),
            });
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let base = (o * len + l) * inner;
                let dst = &mut out[o * inner..(o + 1) * inner];
                for (d, &v) in dst.iter_mut().zip(&ta.data()[base..base + inner]) {
                    *d += v;
                }
            }
        }
        let inv = 1.0 / len as f64;
        for v in &mut out {
            *v *= inv;
        }
        let mut new_shape = shape[..axis].to_vec();
        new_shape.extend_from_slice(&shape[axis + 1..]);
        let rg = self.needs(&[a]);
        Ok(self.push(Op::MeanAxis(a, axis), Tensor::new(new_shape, out)?, rg))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out: Vec<f64> = self.nodes[a.0]
            .value
            .data()
            .iter()
            .map(|&x| if x > 0.0 { x } else { 0.0 })
            .collect();
        let t = Tensor::new(self.nodes[a.0].value.shape().to_vec(), out).expect("same shape");
        let rg = self.needs(&[a]);
        self.push(Op::Relu(a), t, rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out: Vec<f64> = self.nodes[a.0].value.data().iter().map(|x| x.tanh()).collect();
        let t = Tensor::new(self.nodes[a.0].value.shape().to_vec(), out).expect("same shape");
        let rg = self.needs(&[a]);
        self.push(Op::Tanh(a), t, rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out: Vec<f64> = self.nodes[a.0]
            .value
            .data()
            .iter()
            .map(|x| 1.0 / (1.0 + (-x).exp()))
            .collect();
        let t = Tensor::new(self.nodes[a.0].value.shape().to_vec(), out).expect("same shape");
        let rg = self.needs(&[a]);
        self.push(Op::Sigmoid(a), t, rg)
    }

    /// Softmax over the last axis, with max subtraction for stability.
    pub fn softmax_last(&mut self, a: Var) -> Result<Var, CoreError> {
        let ta = &self.nodes[a.0].value;
        if ta.shape().is_empty() {
            return Err(CoreError::InvalidOperand {
                op: "softmax",
                msg: "rank-0 input".into(),
            });
        }
        let w = *ta.shape().last().unwrap();
        let mut out = ta.data().to_vec();
        for row in out.chunks_mut(w) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            let inv = 1.0 / sum;
            for v in row.iter_mut() {
                *v *= inv;
            }
        }
        let shape = ta.shape().to_vec();
        let rg = self.needs(&[a]);
        Ok(self.push(Op::SoftmaxLast(a), Tensor::new(shape, out)?, rg))
    }

    /// Mean squared error over every element; scalar output.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var, CoreError> {
        let (tp, tt) = (&self.nodes[pred.0].value, &self.nodes[target.0].value);
        if tp.shape() != tt.shape() {
            return Err(Self::mismatch("mse", tp, tt));
        }
        let n = tp.numel() as f64;
        let sum: f64 = tp
            .data()
            .iter()
            .zip(tt.data())
            .map(|(p, t)| (p - t) * (p - t))
            .sum();
        let rg = self.needs(&[pred, target]);
        Ok(self.push(Op::Mse(pred, target), Tensor::scalar(sum / n), rg))
    }

    /// Mean over rows of the euclidean norm of the residual; scalar output.
    pub fn l2_row_mean(&mut self, pred: Var, target: Var) -> Result<Var, CoreError> {
        let (tp, tt) = (&self.nodes[pred.0].value, &self.nodes[target.0].value);
        if tp.shape() != tt.shape() || tp.shape().len() != 2 {
            return Err(Self::mismatch("l2_row_mean", tp, tt));
        }
        let (rows, cols) = (tp.rows(), tp.cols());
        let mut sum = 0.0;
        for r in 0..rows {
            let mut sq = 0.0;
            for c in 0..cols {
                let d = tp.data()[r * cols + c] - tt.data()[r * cols + c];
                sq += d * d;
            }
            sum += sq.sqrt();
        }
        let rg = self.needs(&[pred, target]);
        Ok(self.push(
            Op::L2RowMean(pred, target),
            Tensor::scalar(sum / rows as f64),
            rg,
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var, CoreError> {
        let t = self.nodes[a.0].value.reshaped(shape)?;
        let rg = self.needs(&[a]);
        Ok(self.push(Op::Reshape(a), t, rg))
    }

    fn accum(&mut self, v: Var, delta: &[f64]) {
        let numel = self.nodes[v.0].value.numel();
        let slot = self.grads[v.0].get_or_insert_with(|| vec![0.0; numel]);
        for (g, &d) in slot.iter_mut().zip(delta) {
            *g += d;
        }
    }

    fn grad_of(&self, v: Var) -> Option<Vec<f64>> {
        self.grads[v.0].clone()
    }

    /// Reverse pass from a scalar loss. Populates gradients for every node
    /// that requires them and is reachable from `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<(), CoreError> {
        let lt = &self.nodes[loss.0].value;
        if lt.numel() != 1 {
            return Err(CoreError::NonScalarLoss {
                shape: lt.shape().to_vec(),
            });
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[loss.0] = Some(vec![1.0]);

        for idx in (0..self.nodes.len()).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(dout) = self.grad_of(Var(idx)) else {
                continue;
            };
            self.step_backward(idx, &dout);
        }
        Ok(())
    }

    fn step_backward(&mut self, idx: usize, dout: &[f64]) {
        // ops read values immutably, then accumulate into input grads
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (a, b) = (*a, *b);
                let (m, k) = (self.nodes[a.0].value.rows(), self.nodes[a.0].value.cols());
                let n = self.nodes[b.0].value.cols();
                if self.nodes[a.0].requires_grad {
                    // dA = dC (m,n) x B (k,n)^T
                    let mut da = vec![0.0; m * k];
                    matmul_nt_into(&mut da, dout, self.nodes[b.0].value.data(), m, n, k);
                    self.accum(a, &da);
                }
                if self.nodes[b.0].requires_grad {
                    // dB = A (m,k)^T x dC (m,n)
                    let mut db = vec![0.0; k * n];
                    matmul_tn_accum(&mut db, self.nodes[a.0].value.data(), dout, m, k, n);
                    self.accum(b, &db);
                }
            }
            Op::MatMulNT(a, b) => {
                let (a, b) = (*a, *b);
                let (m, k) = (self.nodes[a.0].value.rows(), self.nodes[a.0].value.cols());
                let n = self.nodes[b.0].value.rows();
                if self.nodes[a.0].requires_grad {
                    // C = A B^T -> dA = dC (m,n) x B (n,k)
                    let mut da = vec![0.0; m * k];
                    matmul_into(&mut da, dout, self.nodes[b.0].value.data(), m, n, k);
                    self.accum(a, &da);
                }
                if self.nodes[b.0].requires_grad {
                    // dB = dC^T (n,m) x A (m,k)
                    let mut db = vec![0.0; n * k];
                    matmul_tn_accum(&mut db, dout, self.nodes[a.0].value.data(), m, n, k);
                    self.accum(b, &db);
                }
            }
            Op::Add(a, b) => {
                let (a, b) = (*a, *b);
                if self.nodes[a.0].requires_grad {
                    self.accum(a, dout);
                }
                if self.nodes[b.0].requires_grad {
                    let bn = self.nodes[b.0].value.numel();
                    if bn == dout.len() {
                        self.accum(b, dout);
                    } else {
                        // row-broadcast: sum over leading dims
                        let mut db = vec![0.0; bn];
                        for chunk in dout.chunks(bn) {
                            for (g, &d) in db.iter_mut().zip(chunk) {
                                *g += d;
                            }
                        }
                        self.accum(b, &db);
                    }
                }
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                let scalar = self.nodes[b.0].value.numel() == 1;
                if self.nodes[a.0].requires_grad {
                    let da: Vec<f64> = if scalar {
                        let s = self.nodes[b.0].value.data()[0];
                        dout.iter().map(|d| d * s).collect()
                    } else {
                        dout.iter()
                            .zip(self.nodes[b.0].value.data())
                            .map(|(d, y)| d * y)
                            .collect()
                    };
                    self.accum(a, &da);
                }
                if self.nodes[b.0].requires_grad {
                    if scalar {
                        let s: f64 = dout
                            .iter()
                            .zip(self.nodes[a.0].value.data())
                            .map(|(d, x)| d * x)
                            .sum();
                        self.accum(b, &[s]);
                    } else {
                        let db: Vec<f64> = dout
                            .iter()
                            .zip(self.nodes[a.0].value.data())
                            .map(|(d, x)| d * x)
                            .collect();
                        self.accum(b, &db);
                    }
                }
            }
            Op::Scale(a, c) => {
                let (a, c) = (*a, *c);
                if self.nodes[a.0].requires_grad {
                    let da: Vec<f64> = dout.iter().map(|d| d * c).collect();
                    self.accum(a, &da);
                }
            }
            Op::ConcatLast(parts) => {
                let parts = parts.clone();
                let total = *self.nodes[idx].value.shape().last().unwrap();
                let rows = self.nodes[idx].value.numel() / total;
                let mut col_off = 0;
                for p in parts {
                    let w = *self.nodes[p.0].value.shape().last().unwrap();
                    if self.nodes[p.0].requires_grad {
                        let mut dp = vec![0.0; rows * w];
                        for r in 0..rows {
                            dp[r * w..(r + 1) * w].copy_from_slice(
                                &dout[r * total + col_off..r * total + col_off + w],
                            );
                        }
                        self.accum(p, &dp);
                    }
                    col_off += w;
                }
            }
            Op::MeanAxis(a, axis) => {
                let (a, axis) = (*a, *axis);
                if self.nodes[a.0].requires_grad {
                    let shape = self.nodes[a.0].value.shape().to_vec();
                    let outer: usize = shape[..axis].iter().product();
                    let len = shape[axis];
                    let inner: usize = shape[axis + 1..].iter().product();
                    let mut da = vec![0.0; outer * len * inner];
                    for o in 0..outer {
                        for i in 0..inner {
                            // grad/N exactly, identical for every slice element
                            let q = dout[o * inner + i] / len as f64;
                            for l in 0..len {
                                da[(o * len + l) * inner + i] = q;
                            }
                        }
                    }
                    self.accum(a, &da);
                }
            }
            Op::Relu(a) => {
                let a = *a;
                if self.nodes[a.0].requires_grad {
                    let da: Vec<f64> = dout
                        .iter()
                        .zip(self.nodes[a.0].value.data())
                        .map(|(d, &x)| if x > 0.0 { *d } else { 0.0 })
                        .collect();
                    self.accum(a, &da);
                }
            }
            Op::Tanh(a) => {
                let a = *a;
                if self.nodes[a.0].requires_grad {
                    let da: Vec<f64> = dout
                        .iter()
                        .zip(self.nodes[idx].value.data())
                        .map(|(d, &y)| d * (1.0 - y * y))
                        .collect();
                    self.accum(a, &da);
                }
            }
            Op::Sigmoid(a) => {
                let a = *a;
                if self.nodes[a.0].requires_grad {
                    let da: Vec<f64> = dout
                        .iter()
                        .zip(self.nodes[idx].value.data())
                        .map(|(d, &y)| d * y * (1.0 - y))
                        .collect();
                    self.accum(a, &da);
                }
            }
            Op::SoftmaxLast(a) => {
                let a = *a;
                if self.nodes[a.0].requires_grad {
                    let y = self.nodes[idx].value.data();
                    let w = *self.nodes[idx].value.shape().last().unwrap();
                    let mut da = vec![0.0; y.len()];
                    for r in 0..y.len() / w {
                        let ys = &y[r * w..(r + 1) * w];
                        let ds = &dout[r * w..(r + 1) * w];
                        let dot: f64 = ys.iter().zip(ds).map(|(y, d)| y * d).sum();
                        for c in 0..w {
                            da[r * w + c] = ys[c] * (ds[c] - dot);
                        }
                    }
                    self.accum(a, &da);
                }
            }
            Op::Mse(p, t) => {
                let (p, t) = (*p, *t);
                let scale = dout[0] * 2.0 / self.nodes[p.0].value.numel() as f64;
                if self.nodes[p.0].requires_grad || self.nodes[t.0].requires_grad {
                    let dp: Vec<f64> = self.nodes[p.0]
                        .value
                        .data()
                        .iter()
                        .zip(self.nodes[t.0].value.data())
                        .map(|(pv, tv)| scale * (pv - tv))
                        .collect();
                    if self.nodes[p.0].requires_grad {
                        self.accum(p, &dp);
                    }
                    if self.nodes[t.0].requires_grad {
                        let dt: Vec<f64> = dp.iter().map(|v| -v).collect();
                        self.accum(t, &dt);
                    }
                }
            }
            Op::L2RowMean(p, t) => {
                let (p, t) = (*p, *t);
                let rows = self.nodes[p.0].value.rows();
                let cols = self.nodes[p.0].value.cols();
                let scale = dout[0] / rows as f64;
                if self.nodes[p.0].requires_grad || self.nodes[t.0].requires_grad {
                    let pd = self.nodes[p.0].value.data();
                    let td = self.nodes[t.0].value.data();
                    let mut dp = vec![0.0; rows * cols];
                    for r in 0..rows {
                        let mut sq = 0.0;
                        for c in 0..cols {
                            let d = pd[r * cols + c] - td[r * cols + c];
                            sq += d * d;
                        }
                        let norm = sq.sqrt();
                        if norm > 1e-12 {
                            for c in 0..cols {
                                dp[r * cols + c] =
                                    scale * (pd[r * cols + c] - td[r * cols + c]) / norm;
                            }
                        }
                    }
                    if self.nodes[p.0].requires_grad {
                        self.accum(p, &dp);
                    }
                    if self.nodes[t.0].requires_grad {
                        let dt: Vec<f64> = dp.iter().map(|v| -v).collect();
                        self.accum(t, &dt);
                    }
                }
            }
            Op::Reshape(a) => {
                let a = *a;
                if self.nodes[a.0].requires_grad {
                    self.accum(a, dout);
                }
            }
        }
    }
}
