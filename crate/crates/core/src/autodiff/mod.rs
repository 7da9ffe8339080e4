//! Reverse-mode automatic differentiation over a per-step tape.
//!
//! Every operation pushes a node holding its output value and the data its
//! backward rule needs. [`Tape::backward`] walks the nodes once in reverse
//! and returns gradients for every leaf created with [`Tape::leaf`].
//! Nodes that do not depend on a leaf never get a gradient buffer.

mod conv;
mod graph;
mod loss;
mod norm;
mod spectral;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::tensor::{Precision, Tensor};

pub use conv::conv2d_output_size;
pub(crate) use conv::{gemm, Conv2dSaved};
pub use norm::{BatchStats, BnMode, BN_EPS, BN_MOMENTUM};
pub(crate) use loss::softmax_rows;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    Sum,
    #[default]
    Mean,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MulBroadcast(Var, Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    Sum(Var),
    Mean(Var),
    MatMul(Var, Var),
    AddRowBias(Var, Var),
    Reshape(Var),
    ConcatCols(Var, Var),
    SelectRows(Var, Arc<Vec<usize>>),
    GlobalAvgPool(Var),
    Conv2d(Box<Conv2dSaved>),
    BatchNorm(Box<norm::BatchNormSaved>),
    Rfft2(Var),
    Irfft2 { input: Var, height: usize },
    Fft2(Var),
    Ifft2Real(Var),
    ComplexMulBroadcast(Var, Var),
    CrossEntropy(Box<loss::CrossEntropySaved>),
    Softmax(Var),
    PairwiseSqDist(Var, Var),
    PairwiseAbsDiff(Var),
    RowNormalize(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    precision: Precision,
}

/// Gradients produced by one backward pass, indexed by leaf.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(|g| g.take())
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], len_of: impl Fn() -> usize, var: Var) -> &mut [f64] {
    grads[var.0].get_or_insert_with(|| vec![0.0; len_of()])
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_precision(precision: Precision) -> Self {
        Tape {
            nodes: Vec::new(),
            precision,
        }
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers a differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Leaf, true)
    }

    /// Registers a non-differentiable input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Leaf, false)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn push_raw(&mut self, mut value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.precision.apply(value.data_mut());
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        // Non-differentiable results keep only their value.
        let op = if requires_grad { op } else { Op::Leaf };
        self.push_raw(value, op, requires_grad)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err!(
                "{what}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out = self.value(a).map(|x| x * factor);
        self.push(out, Op::Scale(a, factor), &[a])
    }

    /// `x[b, ...] * w[...]`, with `w` broadcast over the leading axis of `x`.
    pub fn mul_broadcast(&mut self, x: Var, w: Var) -> Result<Var> {
        let xs = self.shape(x);
        if xs.len() < 2 || &xs[1..] != self.shape(w) {
            return Err(shape_err!(
                "mul_broadcast: {:?} cannot take weights {:?}",
                xs,
                self.shape(w)
            ));
        }
        let wv = self.value(w).data();
        let inner = wv.len();
        let data: Vec<f64> = self
            .value(x)
            .data()
            .chunks_exact(inner)
            .flat_map(|row| row.iter().zip(wv).map(|(a, b)| a * b))
            .collect();
        let out = Tensor::from_parts(xs.to_vec(), data);
        Ok(self.push(out, Op::MulBroadcast(x, w), &[x, w]))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(0.0));
        self.push(out, Op::Relu(a), &[a])
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let out = self
            .value(a)
            .map(|x| if x > 0.0 { x } else { slope * x });
        self.push(out, Op::LeakyRelu(a, slope), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| {
            if x >= 0.0 {
                1.0 / (1.0 + (-x).exp())
            } else {
                let e = x.exp();
                e / (1.0 + e)
            }
        });
        self.push(out, Op::Sigmoid(a), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(out, Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let out = Tensor::scalar(v.sum() / v.numel() as f64);
        self.push(out, Op::Mean(a), &[a])
    }

    /// `[m,k] × [k,n] → [m,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err!("matmul: {:?} × {:?}", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            (k, 1),
            self.value(b).data(),
            (n, 1),
            &mut out,
            (n, 1),
            0.0,
        );
        let out = Tensor::from_parts(vec![m, n], out);
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    /// `x[m,n] + b[n]` broadcast over rows.
    pub fn add_row_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x), self.shape(b));
        if sx.len() != 2 || sb != [sx[1]] {
            return Err(shape_err!("add_row_bias: {:?} + {:?}", sx, sb));
        }
        let bv = self.value(b).data();
        let data: Vec<f64> = self
            .value(x)
            .data()
            .chunks_exact(sx[1])
            .flat_map(|row| row.iter().zip(bv).map(|(a, c)| a + c))
            .collect();
        let out = Tensor::from_parts(sx.to_vec(), data);
        Ok(self.push(out, Op::AddRowBias(x, b), &[x, b]))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).clone().reshape(shape.to_vec())?;
        Ok(self.push(out, Op::Reshape(a), &[a]))
    }

    /// `[n,p] ‖ [n,q] → [n,p+q]`.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[0] != sb[0] {
            return Err(shape_err!("concat_cols: {:?} ‖ {:?}", sa, sb));
        }
        let (n, p, q) = (sa[0], sa[1], sb[1]);
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut data = Vec::with_capacity(n * (p + q));
        for i in 0..n {
            data.extend_from_slice(&av[i * p..(i + 1) * p]);
            data.extend_from_slice(&bv[i * q..(i + 1) * q]);
        }
        let out = Tensor::from_parts(vec![n, p + q], data);
        Ok(self.push(out, Op::ConcatCols(a, b), &[a, b]))
    }

    /// Gathers rows (leading-axis slices) by index.
    pub fn select_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let (&n, rest) = shape
            .split_first()
            .ok_or_else(|| shape_err!("select_rows on a scalar"))?;
        let stride: usize = rest.iter().product();
        if let Some(&bad) = rows.iter().find(|&&r| r >= n) {
            return Err(shape_err!("select_rows: row {bad} out of {n}"));
        }
        let av = self.value(a).data();
        let mut data = Vec::with_capacity(rows.len() * stride);
        for &r in rows {
            data.extend_from_slice(&av[r * stride..(r + 1) * stride]);
        }
        let mut out_shape = vec![rows.len()];
        out_shape.extend_from_slice(rest);
        let out = Tensor::from_parts(out_shape, data);
        Ok(self.push(out, Op::SelectRows(a, Arc::new(rows.to_vec())), &[a]))
    }

    /// `[B,C,H,W] → [B,C]` spatial mean.
    pub fn global_avg_pool(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() != 4 {
            return Err(shape_err!("global_avg_pool expects [B,C,H,W], got {:?}", s));
        }
        let plane = s[2] * s[3];
        let data: Vec<f64> = self
            .value(a)
            .data()
            .chunks_exact(plane)
            .map(|p| p.iter().sum::<f64>() / plane as f64)
            .collect();
        let out = Tensor::from_parts(vec![s[0], s[1]], data);
        Ok(self.push(out, Op::GlobalAvgPool(a), &[a]))
    }

    /// Runs the backward pass from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let loss_node = self
            .nodes
            .get(loss.0)
            .ok_or_else(|| Error::InvalidArgument("loss is not on this tape".into()))?;
        if loss_node.value.numel() != 1 {
            return Err(shape_err!(
                "backward needs a scalar loss, got shape {:?}",
                loss_node.value.shape()
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        let mut leaves: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        if !loss_node.requires_grad {
            return Ok(Gradients { grads: leaves });
        }
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if let Op::Leaf = node.op {
                if node.requires_grad {
                    leaves[idx] = Some(Tensor::from_parts(node.value.shape().to_vec(), g));
                }
                continue;
            }
            self.backward_node(idx, &g, &mut grads);
        }
        Ok(Gradients { grads: leaves })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn numel_of(&self, v: Var) -> impl Fn() -> usize + '_ {
        move || self.nodes[v.0].value.numel()
    }

    fn acc_scaled(&self, grads: &mut [Option<Vec<f64>>], v: Var, g: &[f64], factor: f64) {
        if !self.wants(v) {
            return;
        }
        let dst = accumulate(grads, self.numel_of(v), v);
        for (d, &x) in dst.iter_mut().zip(g) {
            *d += factor * x;
        }
    }

    fn backward_node(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.acc_scaled(grads, *a, g, 1.0);
                self.acc_scaled(grads, *b, g, 1.0);
            }
            Op::Sub(a, b) => {
                self.acc_scaled(grads, *a, g, 1.0);
                self.acc_scaled(grads, *b, g, -1.0);
            }
            Op::Mul(a, b) => {
                for (x, y) in [(*a, *b), (*b, *a)] {
                    if self.wants(x) {
                        let other = self.value(y).data();
                        let dst = accumulate(grads, self.numel_of(x), x);
                        for i in 0..dst.len() {
                            dst[i] += g[i] * other[i];
                        }
                    }
                }
            }
            Op::Scale(a, f) => self.acc_scaled(grads, *a, g, *f),
            Op::MulBroadcast(x, w) => {
                let wv = self.value(*w).data();
                let inner = wv.len();
                if self.wants(*x) {
                    let dst = accumulate(grads, self.numel_of(*x), *x);
                    for (i, d) in dst.iter_mut().enumerate() {
                        *d += g[i] * wv[i % inner];
                    }
                }
                if self.wants(*w) {
                    let xv = self.value(*x).data();
                    let dst = accumulate(grads, self.numel_of(*w), *w);
                    for (i, (&gi, &xi)) in g.iter().zip(xv).enumerate() {
                        dst[i % inner] += gi * xi;
                    }
                }
            }
            Op::Relu(a) => {
                if self.wants(*a) {
                    let dst = accumulate(grads, self.numel_of(*a), *a);
                    for i in 0..dst.len() {
                        if out[i] > 0.0 {
                            dst[i] += g[i];
                        }
                    }
                }
            }
            Op::LeakyRelu(a, slope) => {
                if self.wants(*a) {
                    let input = self.value(*a).data();
                    let dst = accumulate(grads, self.numel_of(*a), *a);
                    for i in 0..dst.len() {
                        dst[i] += if input[i] > 0.0 { g[i] } else { slope * g[i] };
                    }
                }
            }
            Op::Sigmoid(a) => {
                if self.wants(*a) {
                    let dst = accumulate(grads, self.numel_of(*a), *a);
                    for i in 0..dst.len() {
                        dst[i] += g[i] * out[i] * (1.0 - out[i]);
                    }
                }
            }
            Op::Sum(a) => {
                if self.wants(*a) {
                    let dst = accumulate(grads, self.numel_of(*a), *a);
                    dst.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::Mean(a) => {
                if self.wants(*a) {
                    let dst = accumulate(grads, self.numel_of(*a), *a);
                    let s = g[0] / dst.len() as f64;
                    dst.iter_mut().for_each(|d| *d += s);
                }
            }
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if self.wants(*a) {
                    // dA = G Bᵀ
                    let bv = self.value(*b).data();
                    let dst = accumulate(grads, self.numel_of(*a), *a);
                    gemm(m, n, k, g, (n, 1), bv, (1, n), dst, (k, 1), 1.0);
                }
                if self.wants(*b) {
                    // dB = Aᵀ G
                    let av = self.value(*a).data();
                    let dst = accumulate(grads, self.numel_of(*b), *b);
                    gemm(k, m, n, av, (1, k), g, (n, 1), dst, (n, 1), 1.0);
                }
            }
            Op::AddRowBias(x, b) => {
                self.acc_scaled(grads, *x, g, 1.0);
                if self.wants(*b) {
                    let n = self.value(*b).numel();
                    let dst = accumulate(grads, self.numel_of(*b), *b);
                    for row in g.chunks_exact(n) {
                        for (d, &r) in dst.iter_mut().zip(row) {
                            *d += r;
                        }
                    }
                }
            }
            Op::Reshape(a) => self.acc_scaled(grads, *a, g, 1.0),
            Op::ConcatCols(a, b) => {
                let (p, q) = (self.shape(*a)[1], self.shape(*b)[1]);
                for (v, offset, width) in [(*a, 0, p), (*b, p, q)] {
                    if self.wants(v) {
                        let dst = accumulate(grads, self.numel_of(v), v);
                        for (i, row) in g.chunks_exact(p + q).enumerate() {
                            for j in 0..width {
                                dst[i * width + j] += row[offset + j];
                            }
                        }
                    }
                }
            }
            Op::SelectRows(a, rows) => {
                if self.wants(*a) {
                    let stride: usize = self.shape(*a)[1..].iter().product();
                    let dst = accumulate(grads, self.numel_of(*a), *a);
                    for (k, &r) in rows.iter().enumerate() {
                        for j in 0..stride {
                            dst[r * stride + j] += g[k * stride + j];
                        }
                    }
                }
            }
            Op::GlobalAvgPool(a) => {
                if self.wants(*a) {
                    let s = self.shape(*a);
                    let plane = s[2] * s[3];
                    let dst = accumulate(grads, self.numel_of(*a), *a);
                    for (i, chunk) in dst.chunks_exact_mut(plane).enumerate() {
                        let gi = g[i] / plane as f64;
                        chunk.iter_mut().for_each(|d| *d += gi);
                    }
                }
            }
            Op::Conv2d(saved) => conv::backward(self, saved, g, grads),
            Op::BatchNorm(saved) => norm::backward(self, saved, g, grads),
            Op::Rfft2(a) => spectral::rfft2_backward(self, *a, g, grads),
            Op::Irfft2 { input, height } => {
                spectral::irfft2_backward(self, *input, *height, g, grads)
            }
            Op::Fft2(a) => spectral::fft2_backward(self, *a, g, grads),
            Op::Ifft2Real(a) => spectral::ifft2_real_backward(self, *a, g, grads),
            Op::ComplexMulBroadcast(x, w) => {
                spectral::complex_mul_broadcast_backward(self, *x, *w, g, grads)
            }
            Op::CrossEntropy(saved) => loss::cross_entropy_backward(self, saved, g, grads),
            Op::Softmax(a) => loss::softmax_backward(self, *a, out, g, grads),
            Op::PairwiseSqDist(a, b) => graph::pairwise_sq_dist_backward(self, *a, *b, g, grads),
            Op::PairwiseAbsDiff(a) => graph::pairwise_abs_diff_backward(self, *a, g, grads),
            Op::RowNormalize(a) => graph::row_normalize_backward(self, *a, out, g, grads),
        }
    }
}
