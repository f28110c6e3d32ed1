//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! Every operation appends a node holding its forward value and the indices
//! of its inputs. Nodes are only ever appended, so the tape is already in
//! topological order and [`Tape::backward`] is a single reverse sweep.

use thiserror::Error;

use crate::tensor::{gemm_nn, gemm_nt, gemm_tn, Float, Tensor};

#[derive(Debug, Error, PartialEq)]
pub enum AutodiffError {
    #[error("loss must be a 1x1 tensor, got {rows}x{cols}")]
    NonScalarLoss { rows: usize, cols: usize },
    #[error("graph cycle: node {node} depends on later node {input}")]
    GraphCycle { node: usize, input: usize },
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulNT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    SoftmaxRows(Var),
    /// Normalised output is the node value; `inv_std` per row.
    LayerNormRows { x: Var, inv_std: Vec<f64> },
    Unfold1d { x: Var, kernel: usize },
    Unfold2d { x: Var, images: usize, height: usize, width: usize, kernel: usize },
    MaxPool2 { x: Var, argmax: Vec<usize> },
    AvgPool2 { x: Var, images: usize, height: usize, width: usize },
    Reshape(Var),
    GatherRows { x: Var, index: Vec<usize> },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceCols { x: Var, start: usize },
    Sum(Var),
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b)
            | Op::MatMulNT(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddRow(a, b)
            | Op::MulRow(a, b) => vec![*a, *b],
            Op::Scale(a, _) | Op::Relu(a) | Op::SoftmaxRows(a) | Op::Reshape(a) | Op::Sum(a) => {
                vec![*a]
            }
            Op::LayerNormRows { x, .. }
            | Op::Unfold1d { x, .. }
            | Op::Unfold2d { x, .. }
            | Op::MaxPool2 { x, .. }
            | Op::AvgPool2 { x, .. }
            | Op::GatherRows { x, .. }
            | Op::SliceCols { x, .. } => vec![*x],
            Op::ConcatRows(xs) | Op::ConcatCols(xs) => xs.clone(),
        }
    }
}

struct Node<S> {
    value: Tensor<S>,
    op: Op,
    requires_grad: bool,
}

pub struct Tape<S> {
    nodes: Vec<Node<S>>,
}

impl<S: Float> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients<S> {
    grads: Vec<Option<Tensor<S>>>,
}

impl<S: Float> Gradients<S> {
    pub fn get(&self, v: Var) -> Option<&Tensor<S>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<S>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn s<S: Float>(v: f64) -> S {
    S::from_f64_lossy(v)
}

impl<S: Float> Tape<S> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor<S>, op: Op) -> Var {
        let requires_grad = op.inputs().iter().any(|i| self.nodes[i.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf; gradients are reported for it.
    pub fn param(&mut self, t: Tensor<S>) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, t: Tensor<S>) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.cols(), bv.rows(), "matmul shape mismatch");
        let mut out = Tensor::zeros(av.rows(), bv.cols());
        gemm_nn(av, bv, &mut out);
        self.push(out, Op::MatMul(a, b))
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.cols(), bv.cols(), "matmul_nt shape mismatch");
        let mut out = Tensor::zeros(av.rows(), bv.rows());
        gemm_nt(av, bv, &mut out);
        self.push(out, Op::MatMulNT(a, b))
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(S, S) -> S) -> Tensor<S> {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "elementwise shape mismatch");
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::from_vec(av.rows(), av.cols(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_with(a, b, |x, y| x + y);
        self.push(out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_with(a, b, |x, y| x - y);
        self.push(out, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_with(a, b, |x, y| x * y);
        self.push(out, Op::Mul(a, b))
    }

    fn row_broadcast(&self, a: Var, row: Var, f: impl Fn(S, S) -> S) -> Tensor<S> {
        let (av, rv) = (self.value(a), self.value(row));
        assert_eq!(rv.shape(), (1, av.cols()), "row broadcast shape mismatch");
        let mut out = av.clone();
        for r in 0..out.rows() {
            for (o, &b) in out.row_mut(r).iter_mut().zip(rv.data()) {
                *o = f(*o, b);
            }
        }
        out
    }

    /// Adds a `1 x c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let out = self.row_broadcast(a, row, |x, y| x + y);
        self.push(out, Op::AddRow(a, row))
    }

    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let out = self.row_broadcast(a, row, |x, y| x * y);
        self.push(out, Op::MulRow(a, row))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let ks = s::<S>(k);
        let out = self.value(a).map(|v| v * ks);
        self.push(out, Op::Scale(a, k))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| if v > S::zero() { v } else { S::zero() });
        self.push(out, Op::Relu(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let max = row.iter().copied().fold(S::neg_infinity(), S::max);
            let mut total = S::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v = *v / total;
            }
        }
        self.push(out, Op::SoftmaxRows(a))
    }

    /// Per-row standardisation `(x - mean) / sqrt(var + eps)` without affine terms.
    pub fn layer_norm_rows(&mut self, a: Var, eps: f64) -> Var {
        let xv = self.value(a);
        let cols = xv.cols();
        let mut out = xv.clone();
        let mut inv_std = Vec::with_capacity(xv.rows());
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let mean = row.iter().map(|v| v.as_f64()).sum::<f64>() / cols as f64;
            let var = row
                .iter()
                .map(|v| (v.as_f64() - mean).powi(2))
                .sum::<f64>()
                / cols as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for v in row.iter_mut() {
                *v = s((v.as_f64() - mean) * inv);
            }
            inv_std.push(inv);
        }
        self.push(out, Op::LayerNormRows { x: a, inv_std })
    }

    /// Sequence unfolding for a 1-D convolution with odd `kernel`, zero padded:
    /// `n x c -> n x (kernel*c)`.
    pub fn unfold1d(&mut self, x: Var, kernel: usize) -> Var {
        assert!(kernel % 2 == 1, "kernel must be odd");
        let xv = self.value(x);
        let (n, c) = xv.shape();
        let half = kernel / 2;
        let mut out = Tensor::zeros(n, kernel * c);
        for t in 0..n {
            for j in 0..kernel {
                let src = t as isize + j as isize - half as isize;
                if src < 0 || src >= n as isize {
                    continue;
                }
                let src_row = xv.row(src as usize);
                out.row_mut(t)[j * c..(j + 1) * c].copy_from_slice(src_row);
            }
        }
        self.push(out, Op::Unfold1d { x, kernel })
    }

    /// im2col for a stack of channels-last images stored as
    /// `(images*height*width) x c`; output is `(images*height*width) x (kernel²*c)`.
    pub fn unfold2d(&mut self, x: Var, images: usize, height: usize, width: usize, kernel: usize) -> Var {
        assert!(kernel % 2 == 1, "kernel must be odd");
        let xv = self.value(x);
        let c = xv.cols();
        assert_eq!(xv.rows(), images * height * width, "unfold2d shape mismatch");
        let half = kernel as isize / 2;
        let mut out = Tensor::zeros(xv.rows(), kernel * kernel * c);
        for img in 0..images {
            let base = img * height * width;
            for y in 0..height {
                for xx in 0..width {
                    let orow = base + y * width + xx;
                    for dy in 0..kernel {
                        let sy = y as isize + dy as isize - half;
                        if sy < 0 || sy >= height as isize {
                            continue;
                        }
                        for dx in 0..kernel {
                            let sx = xx as isize + dx as isize - half;
                            if sx < 0 || sx >= width as isize {
                                continue;
                            }
                            let src = base + sy as usize * width + sx as usize;
                            let off = (dy * kernel + dx) * c;
                            out.row_mut(orow)[off..off + c].copy_from_slice(xv.row(src));
                        }
                    }
                }
            }
        }
        self.push(
            out,
            Op::Unfold2d {
                x,
                images,
                height,
                width,
                kernel,
            },
        )
    }

    fn pool_shape(&self, x: Var, images: usize, height: usize, width: usize) -> (usize, usize, usize) {
        let xv = self.value(x);
        assert_eq!(xv.rows(), images * height * width, "pool shape mismatch");
        assert!(height % 2 == 0 && width % 2 == 0, "pooling needs even dimensions");
        (height / 2, width / 2, xv.cols())
    }

    /// 2x2 max pooling, stride 2.
    pub fn max_pool2(&mut self, x: Var, images: usize, height: usize, width: usize) -> Var {
        let (oh, ow, c) = self.pool_shape(x, images, height, width);
        let xv = self.value(x);
        let mut out = Tensor::zeros(images * oh * ow, c);
        let mut argmax = vec![0usize; images * oh * ow * c];
        for img in 0..images {
            for y in 0..oh {
                for xx in 0..ow {
                    let orow = img * oh * ow + y * ow + xx;
                    for ch in 0..c {
                        let mut best = S::neg_infinity();
                        let mut best_idx = 0;
                        for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                            let src = img * height * width + (2 * y + dy) * width + 2 * xx + dx;
                            let v = xv.get(src, ch);
                            if v > best {
                                best = v;
                                best_idx = src * c + ch;
                            }
                        }
                        out.set(orow, ch, best);
                        argmax[orow * c + ch] = best_idx;
                    }
                }
            }
        }
        self.push(out, Op::MaxPool2 { x, argmax })
    }

    /// 2x2 average pooling, stride 2.
    pub fn avg_pool2(&mut self, x: Var, images: usize, height: usize, width: usize) -> Var {
        let (oh, ow, c) = self.pool_shape(x, images, height, width);
        let xv = self.value(x);
        let quarter = s::<S>(0.25);
        let mut out = Tensor::zeros(images * oh * ow, c);
        for img in 0..images {
            for y in 0..oh {
                for xx in 0..ow {
                    let orow = img * oh * ow + y * ow + xx;
                    for ch in 0..c {
                        let mut acc = S::zero();
                        for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                            acc += xv.get(img * height * width + (2 * y + dy) * width + 2 * xx + dx, ch);
                        }
                        out.set(orow, ch, acc * quarter);
                    }
                }
            }
        }
        self.push(
            out,
            Op::AvgPool2 {
                x,
                images,
                height,
                width,
            },
        )
    }

    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Var {
        let out = self.value(x).clone().reshape(rows, cols);
        self.push(out, Op::Reshape(x))
    }

    /// Output row `i` is input row `index[i]`.
    pub fn gather_rows(&mut self, x: Var, index: Vec<usize>) -> Var {
        let xv = self.value(x);
        let c = xv.cols();
        let mut data = Vec::with_capacity(index.len() * c);
        for &i in &index {
            data.extend_from_slice(xv.row(i));
        }
        let out = Tensor::from_vec(index.len(), c, data);
        self.push(out, Op::GatherRows { x, index })
    }

    pub fn concat_rows(&mut self, xs: &[Var]) -> Var {
        assert!(!xs.is_empty());
        let c = self.value(xs[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &x in xs {
            let v = self.value(x);
            assert_eq!(v.cols(), c, "concat_rows column mismatch");
            data.extend_from_slice(v.data());
            rows += v.rows();
        }
        self.push(Tensor::from_vec(rows, c, data), Op::ConcatRows(xs.to_vec()))
    }

    pub fn concat_cols(&mut self, xs: &[Var]) -> Var {
        assert!(!xs.is_empty());
        let r = self.value(xs[0]).rows();
        let total: usize = xs.iter().map(|&x| self.value(x).cols()).sum();
        let mut out = Tensor::zeros(r, total);
        let mut off = 0;
        for &x in xs {
            let v = self.value(x);
            assert_eq!(v.rows(), r, "concat_cols row mismatch");
            for row in 0..r {
                out.row_mut(row)[off..off + v.cols()].copy_from_slice(v.row(row));
            }
            off += v.cols();
        }
        self.push(out, Op::ConcatCols(xs.to_vec()))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let xv = self.value(x);
        assert!(start + len <= xv.cols(), "slice_cols out of range");
        let out = Tensor::from_fn(xv.rows(), len, |r, c| xv.get(r, start + c));
        self.push(out, Op::SliceCols { x, start })
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        self.push(out, Op::Sum(x))
    }

    /// `x · w + b` for a `1 x out` bias row.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let y = self.matmul(x, w);
        self.add_row(y, b)
    }

    /// Runs the reverse sweep from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<S>, AutodiffError> {
        let (rows, cols) = self.shape(loss);
        if (rows, cols) != (1, 1) {
            return Err(AutodiffError::NonScalarLoss { rows, cols });
        }
        let mut grads: Vec<Option<Tensor<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(S::one()));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            for input in node.op.inputs() {
                if input.0 >= idx {
                    return Err(AutodiffError::GraphCycle {
                        node: idx,
                        input: input.0,
                    });
                }
            }
            self.backprop_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backprop_node(&self, idx: usize, g: &Tensor<S>, grads: &mut [Option<Tensor<S>>]) {
        let node = &self.nodes[idx];
        let acc = |v: Var, contrib: Tensor<S>, grads: &mut [Option<Tensor<S>>]| match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&contrib),
            slot @ None => *slot = Some(contrib),
        };

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.wants(*a) {
                    let mut da = Tensor::zeros(av.rows(), av.cols());
                    gemm_nt(g, bv, &mut da);
                    acc(*a, da, grads);
                }
                if self.wants(*b) {
                    let mut db = Tensor::zeros(bv.rows(), bv.cols());
                    gemm_tn(av, g, &mut db);
                    acc(*b, db, grads);
                }
            }
            Op::MatMulNT(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.wants(*a) {
                    let mut da = Tensor::zeros(av.rows(), av.cols());
                    gemm_nn(g, bv, &mut da);
                    acc(*a, da, grads);
                }
                if self.wants(*b) {
                    let mut db = Tensor::zeros(bv.rows(), bv.cols());
                    gemm_tn(g, av, &mut db);
                    acc(*b, db, grads);
                }
            }
            Op::Add(a, b) => {
                if self.wants(*a) {
                    acc(*a, g.clone(), grads);
                }
                if self.wants(*b) {
                    acc(*b, g.clone(), grads);
                }
            }
            Op::Sub(a, b) => {
                if self.wants(*a) {
                    acc(*a, g.clone(), grads);
                }
                if self.wants(*b) {
                    acc(*b, g.map(|v| -v), grads);
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.wants(*a) {
                    let d = zip(g, bv, |x, y| x * y);
                    acc(*a, d, grads);
                }
                if self.wants(*b) {
                    let d = zip(g, av, |x, y| x * y);
                    acc(*b, d, grads);
                }
            }
            Op::AddRow(a, row) => {
                if self.wants(*a) {
                    acc(*a, g.clone(), grads);
                }
                if self.wants(*row) {
                    acc(*row, column_sums(g), grads);
                }
            }
            Op::MulRow(a, row) => {
                let (av, rv) = (self.value(*a), self.value(*row));
                if self.wants(*a) {
                    let mut d = g.clone();
                    for r in 0..d.rows() {
                        for (o, &k) in d.row_mut(r).iter_mut().zip(rv.data()) {
                            *o *= k;
                        }
                    }
                    acc(*a, d, grads);
                }
                if self.wants(*row) {
                    let prod = zip(g, av, |x, y| x * y);
                    acc(*row, column_sums(&prod), grads);
                }
            }
            Op::Scale(a, k) => {
                if self.wants(*a) {
                    let ks = s::<S>(*k);
                    acc(*a, g.map(|v| v * ks), grads);
                }
            }
            Op::Relu(a) => {
                if self.wants(*a) {
                    let d = zip(g, self.value(*a), |gv, x| if x > S::zero() { gv } else { S::zero() });
                    acc(*a, d, grads);
                }
            }
            Op::SoftmaxRows(a) => {
                if self.wants(*a) {
                    let y = &node.value;
                    let mut d = Tensor::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let dot: S = g.row(r).iter().zip(y.row(r)).map(|(&gv, &yv)| gv * yv).sum();
                        for ((o, &gv), &yv) in d.row_mut(r).iter_mut().zip(g.row(r)).zip(y.row(r)) {
                            *o = yv * (gv - dot);
                        }
                    }
                    acc(*a, d, grads);
                }
            }
            Op::LayerNormRows { x, inv_std } => {
                if self.wants(*x) {
                    let y = &node.value;
                    let cols = y.cols() as f64;
                    let mut d = Tensor::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let gr = g.row(r);
                        let yr = y.row(r);
                        let mean_g = gr.iter().map(|v| v.as_f64()).sum::<f64>() / cols;
                        let mean_gy = gr
                            .iter()
                            .zip(yr)
                            .map(|(a, b)| a.as_f64() * b.as_f64())
                            .sum::<f64>()
                            / cols;
                        for ((o, &gv), &yv) in d.row_mut(r).iter_mut().zip(gr).zip(yr) {
                            *o = s(inv_std[r] * (gv.as_f64() - mean_g - yv.as_f64() * mean_gy));
                        }
                    }
                    acc(*x, d, grads);
                }
            }
            Op::Unfold1d { x, kernel } => {
                if self.wants(*x) {
                    let (n, c) = self.shape(*x);
                    let half = kernel / 2;
                    let mut d = Tensor::zeros(n, c);
                    for t in 0..n {
                        for j in 0..*kernel {
                            let src = t as isize + j as isize - half as isize;
                            if src < 0 || src >= n as isize {
                                continue;
                            }
                            let grow = &g.row(t)[j * c..(j + 1) * c];
                            for (o, &gv) in d.row_mut(src as usize).iter_mut().zip(grow) {
                                *o += gv;
                            }
                        }
                    }
                    acc(*x, d, grads);
                }
            }
            Op::Unfold2d {
                x,
                images,
                height,
                width,
                kernel,
            } => {
                if self.wants(*x) {
                    let (rows, c) = self.shape(*x);
                    let half = *kernel as isize / 2;
                    let mut d = Tensor::zeros(rows, c);
                    for img in 0..*images {
                        let base = img * height * width;
                        for y in 0..*height {
                            for xx in 0..*width {
                                let grow = base + y * width + xx;
                                for dy in 0..*kernel {
                                    let sy = y as isize + dy as isize - half;
                                    if sy < 0 || sy >= *height as isize {
                                        continue;
                                    }
                                    for dx in 0..*kernel {
                                        let sx = xx as isize + dx as isize - half;
                                        if sx < 0 || sx >= *width as isize {
                                            continue;
                                        }
                                        let src = base + sy as usize * width + sx as usize;
                                        let off = (dy * kernel + dx) * c;
                                        for ch in 0..c {
                                            let gv = g.get(grow, off + ch);
                                            let cur = d.get(src, ch);
                                            d.set(src, ch, cur + gv);
                                        }
                                    }
                                }
                            }
                        }
                    }
                    acc(*x, d, grads);
                }
            }
            Op::MaxPool2 { x, argmax } => {
                if self.wants(*x) {
                    let (rows, c) = self.shape(*x);
                    let mut d = Tensor::zeros(rows, c);
                    for (gi, &src) in argmax.iter().enumerate() {
                        d.data_mut()[src] += g.data()[gi];
                    }
                    acc(*x, d, grads);
                }
            }
            Op::AvgPool2 {
                x,
                images,
                height,
                width,
            } => {
                if self.wants(*x) {
                    let (rows, c) = self.shape(*x);
                    let (oh, ow) = (height / 2, width / 2);
                    let quarter = s::<S>(0.25);
                    let mut d = Tensor::zeros(rows, c);
                    for img in 0..*images {
                        for y in 0..oh {
                            for xx in 0..ow {
                                let grow = img * oh * ow + y * ow + xx;
                                for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                                    let src = img * height * width + (2 * y + dy) * width + 2 * xx + dx;
                                    for ch in 0..c {
                                        let cur = d.get(src, ch);
                                        d.set(src, ch, cur + g.get(grow, ch) * quarter);
                                    }
                                }
                            }
                        }
                    }
                    acc(*x, d, grads);
                }
            }
            Op::Reshape(x) => {
                if self.wants(*x) {
                    let (r, c) = self.shape(*x);
                    acc(*x, g.clone().reshape(r, c), grads);
                }
            }
            Op::GatherRows { x, index } => {
                if self.wants(*x) {
                    let (r, c) = self.shape(*x);
                    let mut d = Tensor::zeros(r, c);
                    for (out_row, &src) in index.iter().enumerate() {
                        for (o, &gv) in d.row_mut(src).iter_mut().zip(g.row(out_row)) {
                            *o += gv;
                        }
                    }
                    acc(*x, d, grads);
                }
            }
            Op::ConcatRows(xs) => {
                let mut start = 0;
                for &x in xs {
                    let (r, c) = self.shape(x);
                    if self.wants(x) {
                        let part = g.data()[start * c..(start + r) * c].to_vec();
                        acc(x, Tensor::from_vec(r, c, part), grads);
                    }
                    start += r;
                }
            }
            Op::ConcatCols(xs) => {
                let mut off = 0;
                for &x in xs {
                    let (r, c) = self.shape(x);
                    if self.wants(x) {
                        let part = Tensor::from_fn(r, c, |i, j| g.get(i, off + j));
                        acc(x, part, grads);
                    }
                    off += c;
                }
            }
            Op::SliceCols { x, start } => {
                if self.wants(*x) {
                    let (r, c) = self.shape(*x);
                    let mut d = Tensor::zeros(r, c);
                    for i in 0..r {
                        d.row_mut(i)[*start..*start + g.cols()].copy_from_slice(g.row(i));
                    }
                    acc(*x, d, grads);
                }
            }
            Op::Sum(x) => {
                if self.wants(*x) {
                    let (r, c) = self.shape(*x);
                    acc(*x, Tensor::filled(r, c, g.get(0, 0)), grads);
                }
            }
        }
    }
}

fn zip<S: Float>(a: &Tensor<S>, b: &Tensor<S>, f: impl Fn(S, S) -> S) -> Tensor<S> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_vec(a.rows(), a.cols(), data)
}

fn column_sums<S: Float>(g: &Tensor<S>) -> Tensor<S> {
    let mut out = Tensor::zeros(1, g.cols());
    for r in 0..g.rows() {
        for (o, &v) in out.data_mut().iter_mut().zip(g.row(r)) {
            *o += v;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor<f64> {
        Tensor::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    /// Central-difference check of every input element of `build`.
    fn check(inputs: Vec<Tensor<f64>>, build: impl Fn(&mut Tape<f64>, &[Var]) -> Var) {
        let eval = |inputs: &[Tensor<f64>]| {
            let mut tape = Tape::new();
            let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
            let out = build(&mut tape, &vars);
            (tape, vars, out)
        };
        let (tape, vars, out) = eval(&inputs);
        let grads = tape.backward(out).unwrap();
        let eps = 1e-5;
        for (k, input) in inputs.iter().enumerate() {
            for i in 0..input.len() {
                let mut plus = inputs.clone();
                plus[k].data_mut()[i] += eps;
                let mut minus = inputs.clone();
                minus[k].data_mut()[i] -= eps;
                let (tp, _, op) = eval(&plus);
                let (tm, _, om) = eval(&minus);
                let numeric = (tp.value(op).get(0, 0) - tm.value(om).get(0, 0)) / (2.0 * eps);
                let analytic = grads.get(vars[k]).map_or(0.0, |g| g.data()[i]);
                let denom = numeric.abs().max(analytic.abs()).max(1e-6);
                assert!(
                    (numeric - analytic).abs() / denom < 1e-5,
                    "input {k} element {i}: numeric {numeric} analytic {analytic}"
                );
            }
        }
    }

    /// Weighted sum so every output element gets a distinct upstream gradient.
    fn weighted(tape: &mut Tape<f64>, y: Var) -> Var {
        let (r, c) = tape.shape(y);
        let w = Tensor::from_fn(r, c, |i, j| 0.3 + 0.17 * i as f64 - 0.11 * j as f64);
        let wv = tape.constant(w);
        let p = tape.mul(y, wv);
        tape.sum(p)
    }

    #[test]
    fn sum_gives_ones_and_half_norm_gives_identity() {
        let p = Tensor::from_vec(1, 3, vec![1.5, -2.0, 0.25]);
        let mut tape = Tape::new();
        let v = tape.param(p.clone());
        let s = tape.sum(v);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(v).unwrap().data(), &[1.0, 1.0, 1.0]);

        let mut tape = Tape::new();
        let v = tape.param(p.clone());
        let sq = tape.mul(v, v);
        let total = tape.sum(sq);
        let half = tape.scale(total, 0.5);
        let g = tape.backward(half).unwrap();
        assert_eq!(g.get(v).unwrap(), &p);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::<f64>::new();
        let v = tape.param(Tensor::zeros(2, 2));
        assert_eq!(
            tape.backward(v).err(),
            Some(AutodiffError::NonScalarLoss { rows: 2, cols: 2 })
        );
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::<f64>::new();
        let c = tape.constant(Tensor::filled(1, 2, 2.0));
        let p = tape.param(Tensor::filled(1, 2, 3.0));
        let m = tape.mul(c, p);
        let s = tape.sum(m);
        let g = tape.backward(s).unwrap();
        assert!(g.get(c).is_none());
        assert_eq!(g.get(p).unwrap().data(), &[2.0, 2.0]);
    }

    #[test]
    fn gradcheck_matmuls() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        check(vec![random(&mut rng, 3, 4), random(&mut rng, 4, 2)], |t, v| {
            let y = t.matmul(v[0], v[1]);
            weighted(t, y)
        });
        check(vec![random(&mut rng, 3, 4), random(&mut rng, 5, 4)], |t, v| {
            let y = t.matmul_nt(v[0], v[1]);
            weighted(t, y)
        });
    }

    #[test]
    fn gradcheck_elementwise_and_broadcast() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let inputs = vec![random(&mut rng, 3, 4), random(&mut rng, 3, 4), random(&mut rng, 1, 4)];
        check(inputs, |t, v| {
            let a = t.add(v[0], v[1]);
            let b = t.sub(a, v[1]);
            let c = t.mul(b, v[1]);
            let d = t.add_row(c, v[2]);
            let e = t.mul_row(d, v[2]);
            let f = t.scale(e, -1.7);
            let g = t.relu(f);
            weighted(t, g)
        });
    }

    #[test]
    fn gradcheck_softmax_and_layer_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        check(vec![random(&mut rng, 3, 5)], |t, v| {
            let y = t.softmax_rows(v[0]);
            weighted(t, y)
        });
        check(vec![random(&mut rng, 3, 5)], |t, v| {
            let y = t.layer_norm_rows(v[0], 1e-5);
            weighted(t, y)
        });
    }

    #[test]
    fn gradcheck_unfold_and_pooling() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        check(vec![random(&mut rng, 5, 2)], |t, v| {
            let y = t.unfold1d(v[0], 3);
            weighted(t, y)
        });
        check(vec![random(&mut rng, 2 * 4 * 4, 2)], |t, v| {
            let y = t.unfold2d(v[0], 2, 4, 4, 3);
            weighted(t, y)
        });
        check(vec![random(&mut rng, 2 * 4 * 4, 2)], |t, v| {
            let y = t.max_pool2(v[0], 2, 4, 4);
            weighted(t, y)
        });
        check(vec![random(&mut rng, 2 * 4 * 4, 2)], |t, v| {
            let y = t.avg_pool2(v[0], 2, 4, 4);
            weighted(t, y)
        });
    }

    #[test]
    fn gradcheck_structural_ops() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        check(vec![random(&mut rng, 3, 4), random(&mut rng, 2, 4)], |t, v| {
            let g = t.gather_rows(v[0], vec![2, 0, 0, 1, 2]);
            let cat = t.concat_rows(&[g, v[1]]);
            let left = t.slice_cols(cat, 0, 2);
            let right = t.slice_cols(cat, 2, 2);
            let swapped = t.concat_cols(&[right, left]);
            let r = t.reshape(swapped, 4, 7);
            weighted(t, r)
        });
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut tape = Tape::new();
        let v = tape.param(random(&mut rng, 4, 7).map(|x| x * 30.0));
        let y = tape.softmax_rows(v);
        for r in 0..4 {
            let total: f64 = tape.value(y).row(r).iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }
}
