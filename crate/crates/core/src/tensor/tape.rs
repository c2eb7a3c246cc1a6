use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MulScalar(Var, Var),
    Recip(Var),
    Tanh(Var),
    Softmax(Var),
    LogSoftmax(Var),
    L2Normalize { x: Var, norms: Vec<f64> },
    SelectRows(Var, Vec<usize>),
    Sum(Var),
    WeightedNll { x: Var, targets: Vec<usize>, weights: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Records forward ops in execution order so `backward` can replay them in
/// reverse. One tape serves one forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every recorded value that needed one.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

fn matrix_dims(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [c] => Ok((1, *c)),
        [r, c] => Ok((*r, *c)),
        other => Err(Error::shape(op, other, &[])),
    }
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    out
}

fn transpose_raw(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

fn softmax_row(x: &[f64], out: &mut [f64]) {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &v) in out.iter_mut().zip(x) {
        *o = (v - max).exp();
        total += *o;
    }
    out.iter_mut().for_each(|o| *o /= total);
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(a, b)| *a += b);
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn tensor(shape: Vec<usize>, data: Vec<f64>) -> Tensor {
        Tensor::new(shape, data).expect("op output shape is consistent by construction")
    }

    /// Records a copy of `t`; gradients flow to it iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        let needs = t.requires_grad();
        self.push(t.detached(), Op::Leaf, needs)
    }

    /// Records a value that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        let mut t = t;
        t.set_requires_grad(false);
        self.push(t, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = matrix_dims("matmul", self.value(a))?;
        let (k2, n) = matrix_dims("matmul", self.value(b))?;
        if self.value(a).shape().len() != 2 || self.value(b).shape().len() != 2 || k != k2 {
            return Err(Error::shape(
                "matmul",
                self.value(a).shape(),
                self.value(b).shape(),
            ));
        }
        let data = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Self::tensor(vec![m, n], data), Op::MatMul(a, b), needs))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.shape().len() != 2 {
            return Err(Error::shape("transpose", t.shape(), &[]));
        }
        let (r, c) = (t.shape()[0], t.shape()[1]);
        let data = transpose_raw(t.data(), r, c);
        let needs = self.needs(a);
        Ok(self.push(Self::tensor(vec![c, r], data), Op::Transpose(a), needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape("add", ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let shape = ta.shape().to_vec();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Self::tensor(shape, data), Op::Add(a, b), needs))
    }

    /// `x[n×d] + bias[d]`, broadcasting the bias over rows.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        let (_, d) = matrix_dims("add_bias", tx)?;
        if tb.shape() != [d] {
            return Err(Error::shape("add_bias", tx.shape(), tb.shape()));
        }
        let data = tx
            .data()
            .chunks(d)
            .flat_map(|row| row.iter().zip(tb.data()).map(|(a, b)| a + b))
            .collect();
        let shape = tx.shape().to_vec();
        let needs = self.needs(x) || self.needs(bias);
        Ok(self.push(Self::tensor(shape, data), Op::AddBias(x, bias), needs))
    }

    /// Elementwise product of equal-shape values.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape("mul", ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let shape = ta.shape().to_vec();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Self::tensor(shape, data), Op::Mul(a, b), needs))
    }

    /// Multiplication by a constant.
    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|v| v * c).collect();
        let shape = t.shape().to_vec();
        let needs = self.needs(x);
        self.push(Self::tensor(shape, data), Op::Scale(x, c), needs)
    }

    /// Multiplication by a recorded scalar `s` of shape `[1]`.
    pub fn mul_scalar(&mut self, x: Var, s: Var) -> Result<Var> {
        let sv = self.value(s).item().map_err(|_| Error::Rank {
            op: "mul_scalar",
            shape: self.value(s).shape().to_vec(),
        })?;
        let t = self.value(x);
        let data = t.data().iter().map(|v| v * sv).collect();
        let shape = t.shape().to_vec();
        let needs = self.needs(x) || self.needs(s);
        Ok(self.push(Self::tensor(shape, data), Op::MulScalar(x, s), needs))
    }

    pub fn recip(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.data().iter().any(|&v| v == 0.0 || !v.is_finite()) {
            return Err(Error::NonFinite { op: "recip" });
        }
        let data = t.data().iter().map(|v| 1.0 / v).collect();
        let shape = t.shape().to_vec();
        let needs = self.needs(x);
        Ok(self.push(Self::tensor(shape, data), Op::Recip(x), needs))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|v| v.tanh()).collect();
        let shape = t.shape().to_vec();
        let needs = self.needs(x);
        self.push(Self::tensor(shape, data), Op::Tanh(x), needs)
    }

    /// Softmax along the last axis with max subtraction.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        matrix_dims("softmax", t)?;
        if !t.is_finite() {
            return Err(Error::NonFinite { op: "softmax" });
        }
        let c = t.cols();
        let mut data = vec![0.0; t.len()];
        for (src, dst) in t.data().chunks(c).zip(data.chunks_mut(c)) {
            softmax_row(src, dst);
        }
        let shape = t.shape().to_vec();
        let needs = self.needs(x);
        Ok(self.push(Self::tensor(shape, data), Op::Softmax(x), needs))
    }

    /// `x - logsumexp(x)` along the last axis.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        matrix_dims("log_softmax", t)?;
        if !t.is_finite() {
            return Err(Error::NonFinite { op: "log_softmax" });
        }
        let c = t.cols();
        let mut data = Vec::with_capacity(t.len());
        for row in t.data().chunks(c) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            data.extend(row.iter().map(|v| v - lse));
        }
        let shape = t.shape().to_vec();
        let needs = self.needs(x);
        Ok(self.push(Self::tensor(shape, data), Op::LogSoftmax(x), needs))
    }

    /// Scales each row to unit Euclidean norm.
    pub fn l2_normalize(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        matrix_dims("l2_normalize", t)?;
        if !t.is_finite() {
            return Err(Error::NonFinite { op: "l2_normalize" });
        }
        let mut norms = Vec::with_capacity(t.rows());
        let mut data = Vec::with_capacity(t.len());
        for (i, row) in t.iter_rows().enumerate() {
            let n = super::norm(row);
            if n == 0.0 {
                return Err(Error::DegenerateEmbedding { row: i });
            }
            norms.push(n);
            data.extend(row.iter().map(|v| v / n));
        }
        let shape = t.shape().to_vec();
        let needs = self.needs(x);
        Ok(self.push(Self::tensor(shape, data), Op::L2Normalize { x, norms }, needs))
    }

    /// Cosine similarity between every row of `u` and every row of `v`.
    pub fn cosine_sim_matrix(&mut self, u: Var, v: Var) -> Result<Var> {
        let (du, dv) = (self.value(u).cols(), self.value(v).cols());
        if du != dv {
            return Err(Error::shape(
                "cosine_sim_matrix",
                self.value(u).shape(),
                self.value(v).shape(),
            ));
        }
        let un = self.l2_normalize(u)?;
        let vn = self.l2_normalize(v)?;
        let vt = self.transpose(vn)?;
        self.matmul(un, vt)
    }

    /// Gathers rows `indices` (repeats allowed) into a new matrix.
    pub fn select_rows(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let t = self.value(x);
        let (r, c) = matrix_dims("select_rows", t)?;
        if indices.is_empty() {
            return Err(Error::InvalidTensor("select_rows needs at least one index".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= r) {
            return Err(Error::Index {
                index: bad,
                n_classes: r,
            });
        }
        let data = indices.iter().flat_map(|&i| t.row(i).iter().copied()).collect();
        let needs = self.needs(x);
        Ok(self.push(
            Self::tensor(vec![indices.len(), c], data),
            Op::SelectRows(x, indices.to_vec()),
            needs,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().sum();
        let needs = self.needs(x);
        self.push(Tensor::scalar(total), Op::Sum(x), needs)
    }

    /// `-(1/n) * sum_i weights[i] * x[i, targets[i]]` over an `[n×k]` input,
    /// typically log-probabilities.
    pub fn weighted_nll(&mut self, x: Var, targets: &[usize], weights: &[f64]) -> Result<Var> {
        let t = self.value(x);
        let (n, k) = matrix_dims("weighted_nll", t)?;
        if targets.len() != n || weights.len() != n {
            return Err(Error::shape(
                "weighted_nll",
                t.shape(),
                &[targets.len(), weights.len()],
            ));
        }
        if let Some(&bad) = targets.iter().find(|&&c| c >= k) {
            return Err(Error::Index {
                index: bad,
                n_classes: k,
            });
        }
        let total: f64 = targets
            .iter()
            .zip(weights)
            .enumerate()
            .map(|(i, (&c, &w))| w * t.data()[i * k + c])
            .sum();
        let loss = -total / n as f64;
        let needs = self.needs(x);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::WeightedNll {
                x,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
            },
            needs,
        ))
    }

    /// Reverse pass from a scalar. The tape itself is left untouched, so
    /// calling this twice yields the same gradients twice.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.shape() != [1] {
            return Err(Error::Rank {
                op: "backward",
                shape: lv.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(gy) = grads[idx].take() else {
                continue;
            };
            let y = &node.value;
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let (m, k) = (ta.shape()[0], ta.shape()[1]);
                    let n = tb.shape()[1];
                    if self.needs(*a) {
                        let bt = transpose_raw(tb.data(), k, n);
                        let ga = matmul_raw(&gy, &bt, m, n, k);
                        self.accumulate(&mut grads, *a, &ga);
                    }
                    if self.needs(*b) {
                        let at = transpose_raw(ta.data(), m, k);
                        let gb = matmul_raw(&at, &gy, k, m, n);
                        self.accumulate(&mut grads, *b, &gb);
                    }
                }
                Op::Transpose(a) => {
                    let (r, c) = (y.shape()[0], y.shape()[1]);
                    let ga = transpose_raw(&gy, r, c);
                    self.accumulate(&mut grads, *a, &ga);
                }
                Op::Add(a, b) => {
                    self.accumulate(&mut grads, *a, &gy);
                    self.accumulate(&mut grads, *b, &gy);
                }
                Op::AddBias(x, b) => {
                    self.accumulate(&mut grads, *x, &gy);
                    if self.needs(*b) {
                        let d = y.cols();
                        let mut gb = vec![0.0; d];
                        for row in gy.chunks(d) {
                            add_into(&mut gb, row);
                        }
                        self.accumulate(&mut grads, *b, &gb);
                    }
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    if self.needs(*a) {
                        let ga: Vec<f64> = gy.iter().zip(tb.data()).map(|(g, v)| g * v).collect();
                        self.accumulate(&mut grads, *a, &ga);
                    }
                    if self.needs(*b) {
                        let gb: Vec<f64> = gy.iter().zip(ta.data()).map(|(g, v)| g * v).collect();
                        self.accumulate(&mut grads, *b, &gb);
                    }
                }
                Op::Scale(x, c) => {
                    let gx: Vec<f64> = gy.iter().map(|g| g * c).collect();
                    self.accumulate(&mut grads, *x, &gx);
                }
                Op::MulScalar(x, s) => {
                    let sv = self.value(*s).data()[0];
                    if self.needs(*x) {
                        let gx: Vec<f64> = gy.iter().map(|g| g * sv).collect();
                        self.accumulate(&mut grads, *x, &gx);
                    }
                    if self.needs(*s) {
                        let gs = super::dot(&gy, self.value(*x).data());
                        self.accumulate(&mut grads, *s, &[gs]);
                    }
                }
                Op::Recip(x) => {
                    let gx: Vec<f64> = gy
                        .iter()
                        .zip(y.data())
                        .map(|(g, r)| -g * r * r)
                        .collect();
                    self.accumulate(&mut grads, *x, &gx);
                }
                Op::Tanh(x) => {
                    let gx: Vec<f64> = gy
                        .iter()
                        .zip(y.data())
                        .map(|(g, t)| g * (1.0 - t * t))
                        .collect();
                    self.accumulate(&mut grads, *x, &gx);
                }
                Op::Softmax(x) => {
                    let c = y.cols();
                    let mut gx = Vec::with_capacity(gy.len());
                    for (g, p) in gy.chunks(c).zip(y.data().chunks(c)) {
                        let inner = super::dot(g, p);
                        gx.extend(g.iter().zip(p).map(|(gi, pi)| pi * (gi - inner)));
                    }
                    self.accumulate(&mut grads, *x, &gx);
                }
                Op::LogSoftmax(x) => {
                    let c = y.cols();
                    let mut gx = Vec::with_capacity(gy.len());
                    for (g, lp) in gy.chunks(c).zip(y.data().chunks(c)) {
                        let total: f64 = g.iter().sum();
                        gx.extend(g.iter().zip(lp).map(|(gi, l)| gi - l.exp() * total));
                    }
                    self.accumulate(&mut grads, *x, &gx);
                }
                Op::L2Normalize { x, norms } => {
                    let c = y.cols();
                    let mut gx = Vec::with_capacity(gy.len());
                    for ((g, u), n) in gy.chunks(c).zip(y.data().chunks(c)).zip(norms) {
                        let proj = super::dot(g, u);
                        gx.extend(g.iter().zip(u).map(|(gi, ui)| (gi - ui * proj) / n));
                    }
                    self.accumulate(&mut grads, *x, &gx);
                }
                Op::SelectRows(x, indices) => {
                    let tx = self.value(*x);
                    let c = tx.cols();
                    let mut gx = vec![0.0; tx.len()];
                    for (g, &i) in gy.chunks(c).zip(indices) {
                        add_into(&mut gx[i * c..(i + 1) * c], g);
                    }
                    self.accumulate(&mut grads, *x, &gx);
                }
                Op::Sum(x) => {
                    let gx = vec![gy[0]; self.value(*x).len()];
                    self.accumulate(&mut grads, *x, &gx);
                }
                Op::WeightedNll {
                    x,
                    targets,
                    weights,
                } => {
                    let tx = self.value(*x);
                    let k = tx.cols();
                    let n = targets.len() as f64;
                    let mut gx = vec![0.0; tx.len()];
                    for (i, (&c, &w)) in targets.iter().zip(weights).enumerate() {
                        gx[i * k + c] = -gy[0] * w / n;
                    }
                    self.accumulate(&mut grads, *x, &gx);
                }
            }
            // Leaves keep their gradient for the caller.
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(gy);
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, g: &[f64]) {
        if !self.needs(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(buf) => add_into(buf, g),
            slot @ None => *slot = Some(g.to_vec()),
        }
    }

    /// Runs `backward` and adds each leaf gradient into the matching tensor.
    pub fn backward_into<'a, I>(&self, loss: Var, bindings: I) -> Result<()>
    where
        I: IntoIterator<Item = (Var, &'a mut Tensor)>,
    {
        let grads = self.backward(loss)?;
        for (v, t) in bindings {
            if let Some(g) = grads.get(v) {
                t.accumulate_grad(g)?;
            }
        }
        Ok(())
    }
}
