//! Reverse-mode automatic differentiation over a flat, append-only tape.
//!
//! Every operation appends one node holding its output value. Nodes are only
//! ever appended after their inputs, so reverse insertion order is a valid
//! topological order for the backward sweep and each node is visited once.

use super::conv::{self, ConvSpec, ConvTransposeSpec, Lowering};
use super::gemm::{gemm, MatRef};
use super::tensor::{axis_extents, Tensor};
use super::NumericsError;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f32),
    AddScalar(Var),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Clamp(Var, f32, f32),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Conv2d { x: Var, w: Var, b: Var, low: Lowering, cols: Vec<f32> },
    ConvTranspose2d { x: Var, w: Var, b: Var, low: Lowering, xt: Vec<f32>, cin: usize },
    Softmax(Var, usize),
    LogSoftmax(Var, usize),
    LogSumExp(Var, usize),
    SumAxis(Var, usize),
    ReduceSum(Var),
    Reshape(Var),
    Slice { x: Var, axis: usize, start: usize },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Recorded computation. One tape per forward/backward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Vec<f32>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of `v`; zeros when the loss does not depend on it.
    pub fn get(&self, v: Var) -> Tensor {
        let shape = &self.shapes[v.0];
        match &self.grads[v.0] {
            Some(g) => Tensor::new(shape, g.clone()).expect("gradient shape"),
            None => Tensor::zeros(shape),
        }
    }
}

fn elementwise(x: &Tensor, f: impl Fn(f32) -> f32) -> Tensor {
    Tensor::new(x.shape(), x.data().iter().map(|&v| f(v)).collect()).expect("same shape")
}

fn zip_with(a: &Tensor, b: &Tensor, f: impl Fn(f32, f32) -> f32) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape(), data).expect("same shape")
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

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf: gradients flow into it.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, needs_grad: true });
        Var(self.nodes.len() - 1)
    }

    /// Data leaf: no gradient is accumulated for it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, needs_grad: false });
        Var(self.nodes.len() - 1)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), NumericsError> {
        if self.shape(a) != self.shape(b) {
            return Err(NumericsError::shape(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.same_shape("add", a, b)?;
        let v = zip_with(self.value(a), self.value(b), |x, y| x + y);
        Ok(self.push(v, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.same_shape("sub", a, b)?;
        let v = zip_with(self.value(a), self.value(b), |x, y| x - y);
        Ok(self.push(v, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.same_shape("mul", a, b)?;
        let v = zip_with(self.value(a), self.value(b), |x, y| x * y);
        Ok(self.push(v, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, x: Var, c: f32) -> Var {
        let v = elementwise(self.value(x), |t| t * c);
        self.push(v, Op::Scale(x, c), &[x])
    }

    pub fn add_scalar(&mut self, x: Var, c: f32) -> Var {
        let v = elementwise(self.value(x), |t| t + c);
        self.push(v, Op::AddScalar(x), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = elementwise(self.value(x), |t| t.max(0.0));
        self.push(v, Op::Relu(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = elementwise(self.value(x), sigmoid);
        self.push(v, Op::Sigmoid(x), &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let v = elementwise(self.value(x), f32::tanh);
        self.push(v, Op::Tanh(x), &[x])
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let v = elementwise(self.value(x), f32::exp);
        self.push(v, Op::Exp(x), &[x])
    }

    pub fn log(&mut self, x: Var) -> Var {
        let v = elementwise(self.value(x), f32::ln);
        self.push(v, Op::Log(x), &[x])
    }

    /// Clamp into `[lo, hi]`; gradient is zero outside the interval.
    pub fn clamp(&mut self, x: Var, lo: f32, hi: f32) -> Var {
        let v = elementwise(self.value(x), |t| t.clamp(lo, hi));
        self.push(v, Op::Clamp(x, lo, hi), &[x])
    }

    /// `[m, k] · [k, n] → [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(NumericsError::shape("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(
            MatRef::row_major(self.value(a).data(), m, k),
            MatRef::row_major(self.value(b).data(), k, n),
            0.0,
            &mut out,
        );
        let v = Tensor::new(&[m, n], out)?;
        Ok(self.push(v, Op::MatMul(a, b), &[a, b]))
    }

    /// Adds a bias vector along the last axis of `x`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var, NumericsError> {
        let (sx, sb) = (self.shape(x), self.shape(b));
        let n = *sx.last().unwrap_or(&0);
        if sb.len() != 1 || sb[0] != n {
            return Err(NumericsError::shape("add_bias", sx, sb));
        }
        let bias = self.value(b).data();
        let mut data = self.value(x).data().to_vec();
        for row in data.chunks_mut(n) {
            row.iter_mut().zip(bias).for_each(|(v, &bb)| *v += bb);
        }
        let v = Tensor::new(self.shape(x), data)?;
        Ok(self.push(v, Op::AddBias(x, b), &[x, b]))
    }

    /// Fully connected layer `x · w + b` with `x: [batch, in]`, `w: [in, out]`, `b: [out]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var, NumericsError> {
        let y = self.matmul(x, w).map_err(|e| e.rename("dense"))?;
        self.add_bias(y, b).map_err(|e| e.rename("dense"))
    }

    /// 2D convolution. `x: [n, c, h, w]`, `w: [o, c, kh, kw]`, `b: [o]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, spec: ConvSpec) -> Result<Var, NumericsError> {
        let (sx, sw, sb) = (self.shape(x), self.shape(w), self.shape(b));
        if sx.len() != 4 || sw.len() != 4 || sw[1] != sx[1] {
            return Err(NumericsError::shape("conv2d", sx, sw));
        }
        if sb != [sw[0]] {
            return Err(NumericsError::shape("conv2d", sw, sb));
        }
        let (n, c, h, wd) = (sx[0], sx[1], sx[2], sx[3]);
        let (o, kh, kw) = (sw[0], sw[2], sw[3]);
        let (Some(out_h), Some(out_w)) = (conv::conv_out_len(h, kh, spec), conv::conv_out_len(wd, kw, spec)) else {
            return Err(NumericsError::shape("conv2d", sx, sw));
        };
        let low = Lowering {
            batch: n,
            channels: c,
            in_h: h,
            in_w: wd,
            kh,
            kw,
            stride: spec.stride,
            padding: spec.padding,
            out_h,
            out_w,
        };
        let cols = low.im2col(self.value(x).data());
        let k = low.col_rows();
        let ncols = low.col_cols();
        let mut outm = vec![0.0; o * ncols];
        gemm(
            MatRef::row_major(self.value(w).data(), o, k),
            MatRef::row_major(&cols, k, ncols),
            0.0,
            &mut outm,
        );
        let plane = out_h * out_w;
        let mut out = conv::channel_to_batch_major(&outm, n, o, plane);
        let bias = self.value(b).data();
        for (i, chunk) in out.chunks_mut(plane).enumerate() {
            let bb = bias[i % o];
            chunk.iter_mut().for_each(|v| *v += bb);
        }
        let v = Tensor::new(&[n, o, out_h, out_w], out)?;
        Ok(self.push(v, Op::Conv2d { x, w, b, low, cols }, &[x, w, b]))
    }

    /// Transposed 2D convolution (adjoint of [`Tape::conv2d`] w.r.t. its input).
    /// `x: [n, cin, h, w]`, `w: [cin, cout, kh, kw]`, `b: [cout]`.
    pub fn conv2d_transpose(&mut self, x: Var, w: Var, b: Var, spec: ConvTransposeSpec) -> Result<Var, NumericsError> {
        let (sx, sw, sb) = (self.shape(x), self.shape(w), self.shape(b));
        if sx.len() != 4 || sw.len() != 4 || sw[0] != sx[1] {
            return Err(NumericsError::shape("conv2d_transpose", sx, sw));
        }
        if sb != [sw[1]] {
            return Err(NumericsError::shape("conv2d_transpose", sw, sb));
        }
        let (n, cin, h, wd) = (sx[0], sx[1], sx[2], sx[3]);
        let (cout, kh, kw) = (sw[1], sw[2], sw[3]);
        let (oph, opw) = spec.output_padding;
        if oph >= spec.stride || opw >= spec.stride {
            return Err(NumericsError::shape("conv2d_transpose", sx, &[oph, opw]));
        }
        let out_h = conv::conv_transpose_out_len(h, kh, spec.stride, spec.padding, oph);
        let out_w = conv::conv_transpose_out_len(wd, kw, spec.stride, spec.padding, opw);
        let (Some(out_h), Some(out_w)) = (out_h, out_w) else {
            return Err(NumericsError::shape("conv2d_transpose", sx, sw));
        };
        // The lowering describes the forward convolution this op is the adjoint of.
        let low = Lowering {
            batch: n,
            channels: cout,
            in_h: out_h,
            in_w: out_w,
            kh,
            kw,
            stride: spec.stride,
            padding: spec.padding,
            out_h: h,
            out_w: wd,
        };
        let xt = conv::batch_to_channel_major(self.value(x).data(), n, cin, h * wd);
        let k = low.col_rows();
        let ncols = low.col_cols();
        let mut cols = vec![0.0; k * ncols];
        gemm(
            MatRef::row_major(self.value(w).data(), cin, k).t(),
            MatRef::row_major(&xt, cin, ncols),
            0.0,
            &mut cols,
        );
        let mut out = low.col2im(&cols);
        let plane = out_h * out_w;
        let bias = self.value(b).data();
        for (i, chunk) in out.chunks_mut(plane).enumerate() {
            let bb = bias[i % cout];
            chunk.iter_mut().for_each(|v| *v += bb);
        }
        let v = Tensor::new(&[n, cout, out_h, out_w], out)?;
        Ok(self.push(v, Op::ConvTranspose2d { x, w, b, low, xt, cin }, &[x, w, b]))
    }

    fn check_axis(&self, op: &'static str, x: Var, axis: usize) -> Result<(), NumericsError> {
        if axis >= self.shape(x).len() {
            return Err(NumericsError::shape(op, self.shape(x), &[axis]));
        }
        Ok(())
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var, NumericsError> {
        self.check_axis("softmax", x, axis)?;
        let v = softmax_along(self.value(x), axis, false);
        Ok(self.push(v, Op::Softmax(x, axis), &[x]))
    }

    pub fn log_softmax(&mut self, x: Var, axis: usize) -> Result<Var, NumericsError> {
        self.check_axis("log_softmax", x, axis)?;
        let v = softmax_along(self.value(x), axis, true);
        Ok(self.push(v, Op::LogSoftmax(x, axis), &[x]))
    }

    /// Stabilized `log Σ exp(x)` along `axis`; the axis is kept with length 1.
    pub fn logsumexp(&mut self, x: Var, axis: usize) -> Result<Var, NumericsError> {
        self.check_axis("logsumexp", x, axis)?;
        let xv = self.value(x);
        let (outer, len, inner) = axis_extents(xv.shape(), axis);
        let src = xv.data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| src[(o * len + k) * inner + i];
                let m = (0..len).map(at).fold(f32::NEG_INFINITY, f32::max);
                let s: f32 = (0..len).map(|k| (at(k) - m).exp()).sum();
                out[o * inner + i] = m + s.ln();
            }
        }
        let mut shape = xv.shape().to_vec();
        shape[axis] = 1;
        let v = Tensor::new(&shape, out)?;
        Ok(self.push(v, Op::LogSumExp(x, axis), &[x]))
    }

    /// Sum along `axis`, keeping the axis with length 1.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var, NumericsError> {
        self.check_axis("sum_axis", x, axis)?;
        let xv = self.value(x);
        let (outer, len, inner) = axis_extents(xv.shape(), axis);
        let src = xv.data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for k in 0..len {
                let row = &src[(o * len + k) * inner..][..inner];
                out[o * inner..][..inner].iter_mut().zip(row).for_each(|(acc, &v)| *acc += v);
            }
        }
        let mut shape = xv.shape().to_vec();
        shape[axis] = 1;
        let v = Tensor::new(&shape, out)?;
        Ok(self.push(v, Op::SumAxis(x, axis), &[x]))
    }

    /// Sum of all elements as a `[1]` tensor.
    pub fn reduce_sum(&mut self, x: Var) -> Var {
        let s: f32 = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::ReduceSum(x), &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, NumericsError> {
        let v = self.value(x).clone().reshape(shape)?;
        Ok(self.push(v, Op::Reshape(x), &[x]))
    }

    /// Sub-range `[start, start + len)` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var, NumericsError> {
        self.check_axis("slice", x, axis)?;
        let xv = self.value(x);
        let (outer, full, inner) = axis_extents(xv.shape(), axis);
        if start + len > full {
            return Err(NumericsError::shape("slice", xv.shape(), &[start, len]));
        }
        let src = xv.data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            out.extend_from_slice(&src[(o * full + start) * inner..][..len * inner]);
        }
        let mut shape = xv.shape().to_vec();
        shape[axis] = len;
        let v = Tensor::new(&shape, out)?;
        Ok(self.push(v, Op::Slice { x, axis, start }, &[x]))
    }

    /// Back-propagates from the scalar `loss`, seeding ∂loss/∂loss = 1.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NumericsError> {
        if self.value(loss).len() != 1 {
            return Err(NumericsError::NonScalarLoss { shape: self.shape(loss).to_vec() });
        }
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        // Only leaves and nodes that needed a gradient carry meaningful values.
        for (g, n) in grads.iter_mut().zip(&self.nodes) {
            if !n.needs_grad {
                *g = None;
            }
        }
        Ok(Gradients { grads, shapes })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f32>>], v: Var, delta: Vec<f32>) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.iter_mut().zip(&delta).for_each(|(a, d)| *a += d),
            slot @ None => *slot = Some(delta),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn propagate(&self, node: &Node, g: &[f32], grads: &mut [Option<Vec<f32>>]) {
        let y = node.value.data();
        let val = |v: Var| self.nodes[v.0].value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate(grads, *b, g.to_vec());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate(grads, *b, g.iter().map(|v| -v).collect());
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    let d = g.iter().zip(val(*b)).map(|(g, y)| g * y).collect();
                    self.accumulate(grads, *a, d);
                }
                if self.wants(*b) {
                    let d = g.iter().zip(val(*a)).map(|(g, x)| g * x).collect();
                    self.accumulate(grads, *b, d);
                }
            }
            Op::Scale(x, c) => self.accumulate(grads, *x, g.iter().map(|v| v * c).collect()),
            Op::AddScalar(x) => self.accumulate(grads, *x, g.to_vec()),
            Op::Relu(x) => {
                let d = g.iter().zip(val(*x)).map(|(&g, &x)| if x > 0.0 { g } else { 0.0 }).collect();
                self.accumulate(grads, *x, d);
            }
            Op::Sigmoid(x) => {
                let d = g.iter().zip(y).map(|(&g, &s)| g * s * (1.0 - s)).collect();
                self.accumulate(grads, *x, d);
            }
            Op::Tanh(x) => {
                let d = g.iter().zip(y).map(|(&g, &t)| g * (1.0 - t * t)).collect();
                self.accumulate(grads, *x, d);
            }
            Op::Exp(x) => {
                let d = g.iter().zip(y).map(|(&g, &e)| g * e).collect();
                self.accumulate(grads, *x, d);
            }
            Op::Log(x) => {
                let d = g.iter().zip(val(*x)).map(|(&g, &x)| g / x).collect();
                self.accumulate(grads, *x, d);
            }
            Op::Clamp(x, lo, hi) => {
                let d = g
                    .iter()
                    .zip(val(*x))
                    .map(|(&g, &x)| if x >= *lo && x <= *hi { g } else { 0.0 })
                    .collect();
                self.accumulate(grads, *x, d);
            }
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let gm = MatRef::row_major(g, m, n);
                if self.wants(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm(gm, MatRef::row_major(val(*b), k, n).t(), 0.0, &mut da);
                    self.accumulate(grads, *a, da);
                }
                if self.wants(*b) {
                    let mut db = vec![0.0; k * n];
                    gemm(MatRef::row_major(val(*a), m, k).t(), gm, 0.0, &mut db);
                    self.accumulate(grads, *b, db);
                }
            }
            Op::AddBias(x, b) => {
                self.accumulate(grads, *x, g.to_vec());
                if self.wants(*b) {
                    let n = self.shape(*b)[0];
                    let mut db = vec![0.0; n];
                    for row in g.chunks(n) {
                        db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                    }
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Conv2d { x, w, b, low, cols } => {
                let o = self.shape(*w)[0];
                let plane = low.out_h * low.out_w;
                let k = low.col_rows();
                let ncols = low.col_cols();
                let gm = conv::batch_to_channel_major(g, low.batch, o, plane);
                let gref = MatRef::row_major(&gm, o, ncols);
                if self.wants(*w) {
                    let mut dw = vec![0.0; o * k];
                    gemm(gref, MatRef::row_major(cols, k, ncols).t(), 0.0, &mut dw);
                    self.accumulate(grads, *w, dw);
                }
                if self.wants(*b) {
                    let db = gm.chunks(ncols).map(|r| r.iter().sum()).collect();
                    self.accumulate(grads, *b, db);
                }
                if self.wants(*x) {
                    let mut dcols = vec![0.0; k * ncols];
                    gemm(MatRef::row_major(val(*w), o, k).t(), gref, 0.0, &mut dcols);
                    self.accumulate(grads, *x, low.col2im(&dcols));
                }
            }
            Op::ConvTranspose2d { x, w, b, low, xt, cin } => {
                let cout = low.channels;
                let k = low.col_rows();
                let ncols = low.col_cols();
                let dcols = low.im2col(g);
                let dref = MatRef::row_major(&dcols, k, ncols);
                if self.wants(*w) {
                    let mut dw = vec![0.0; cin * k];
                    gemm(MatRef::row_major(xt, *cin, ncols), dref.t(), 0.0, &mut dw);
                    self.accumulate(grads, *w, dw);
                }
                if self.wants(*b) {
                    let plane = low.in_h * low.in_w;
                    let mut db = vec![0.0; cout];
                    for (i, chunk) in g.chunks(plane).enumerate() {
                        db[i % cout] += chunk.iter().sum::<f32>();
                    }
                    self.accumulate(grads, *b, db);
                }
                if self.wants(*x) {
                    let mut dxt = vec![0.0; cin * ncols];
                    gemm(MatRef::row_major(val(*w), *cin, k), dref, 0.0, &mut dxt);
                    let dx = conv::channel_to_batch_major(&dxt, low.batch, *cin, low.out_h * low.out_w);
                    self.accumulate(grads, *x, dx);
                }
            }
            Op::Softmax(x, axis) => {
                let (outer, len, inner) = axis_extents(node.value.shape(), *axis);
                let mut d = vec![0.0; g.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |k: usize| (o * len + k) * inner + i;
                        let dot: f32 = (0..len).map(|k| g[idx(k)] * y[idx(k)]).sum();
                        for k in 0..len {
                            d[idx(k)] = y[idx(k)] * (g[idx(k)] - dot);
                        }
                    }
                }
                self.accumulate(grads, *x, d);
            }
            Op::LogSoftmax(x, axis) => {
                let (outer, len, inner) = axis_extents(node.value.shape(), *axis);
                let mut d = vec![0.0; g.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |k: usize| (o * len + k) * inner + i;
                        let total: f32 = (0..len).map(|k| g[idx(k)]).sum();
                        for k in 0..len {
                            d[idx(k)] = g[idx(k)] - y[idx(k)].exp() * total;
                        }
                    }
                }
                self.accumulate(grads, *x, d);
            }
            Op::LogSumExp(x, axis) => {
                let xs = val(*x);
                let (outer, len, inner) = axis_extents(self.shape(*x), *axis);
                let mut d = vec![0.0; xs.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let r = o * inner + i;
                        for k in 0..len {
                            let j = (o * len + k) * inner + i;
                            d[j] = g[r] * (xs[j] - y[r]).exp();
                        }
                    }
                }
                self.accumulate(grads, *x, d);
            }
            Op::SumAxis(x, axis) => {
                let (outer, len, inner) = axis_extents(self.shape(*x), *axis);
                let mut d = vec![0.0; outer * len * inner];
                for o in 0..outer {
                    for k in 0..len {
                        d[(o * len + k) * inner..][..inner].copy_from_slice(&g[o * inner..][..inner]);
                    }
                }
                self.accumulate(grads, *x, d);
            }
            Op::ReduceSum(x) => {
                let n = self.value(*x).len();
                self.accumulate(grads, *x, vec![g[0]; n]);
            }
            Op::Reshape(x) => self.accumulate(grads, *x, g.to_vec()),
            Op::Slice { x, axis, start } => {
                let (outer, full, inner) = axis_extents(self.shape(*x), *axis);
                let len = node.value.shape()[*axis];
                let mut d = vec![0.0; outer * full * inner];
                for o in 0..outer {
                    d[(o * full + start) * inner..][..len * inner].copy_from_slice(&g[o * len * inner..][..len * inner]);
                }
                self.accumulate(grads, *x, d);
            }
        }
    }
}

pub fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax_along(x: &Tensor, axis: usize, log: bool) -> Tensor {
    let (outer, len, inner) = axis_extents(x.shape(), axis);
    let src = x.data();
    let mut out = vec![0.0; src.len()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |k: usize| (o * len + k) * inner + i;
            let m = (0..len).map(|k| src[idx(k)]).fold(f32::NEG_INFINITY, f32::max);
            let s: f32 = (0..len).map(|k| (src[idx(k)] - m).exp()).sum();
            let ls = s.ln();
            for k in 0..len {
                out[idx(k)] = if log { src[idx(k)] - m - ls } else { (src[idx(k)] - m).exp() / s };
            }
        }
    }
    Tensor::new(x.shape(), out).expect("same shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f32]) -> Tensor {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn relu_clips_negatives() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_vec(vec![-3.0, 0.0, 5.0]));
        let y = tape.relu(x);
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 5.0]);
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::full(&[2, 4], 0.3));
        let y = tape.softmax(x, 1).unwrap();
        assert!(tape.value(y).data().iter().all(|&p| (p - 0.25).abs() < 1e-7));
    }

    #[test]
    fn conv2d_of_ones_kernel_is_local_sum() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[1, 1, 3, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0]));
        let w = tape.param(Tensor::full(&[1, 1, 2, 2], 1.0));
        let b = tape.param(Tensor::zeros(&[1]));
        let y = tape.conv2d(x, w, b, ConvSpec { stride: 1, padding: 0 }).unwrap();
        assert_eq!(tape.value(y).shape(), &[1, 1, 2, 2]);
        assert_eq!(tape.value(y).data(), &[12.0, 16.0, 24.0, 28.0]);
    }

    #[test]
    fn sum_of_squares_gradient() {
        let mut tape = Tape::new();
        let w = tape.param(Tensor::from_vec(vec![1.0, 2.0]));
        let sq = tape.mul(w, w).unwrap();
        let loss = tape.reduce_sum(sq);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(w).data(), &[2.0, 4.0]);
        assert_eq!(grads.get(loss).data(), &[1.0]);
    }

    #[test]
    fn unreachable_parameter_has_zero_gradient() {
        let mut tape = Tape::new();
        let w = tape.param(Tensor::from_vec(vec![1.0, 2.0]));
        let unused = tape.param(Tensor::from_vec(vec![3.0, 4.0, 5.0]));
        let loss = tape.reduce_sum(w);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(unused).data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::new();
        let w = tape.param(Tensor::from_vec(vec![1.0, 2.0]));
        assert!(matches!(tape.backward(w), Err(NumericsError::NonScalarLoss { .. })));
    }

    #[test]
    fn shape_errors_name_operation_and_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[4, 2]));
        let err = tape.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("matmul") && msg.contains("[2, 3]") && msg.contains("[4, 2]"), "{msg}");
        let err = tape.add(a, b).unwrap_err().to_string();
        assert!(err.contains("add"), "{err}");
    }

    #[test]
    fn conv_transpose_restores_odd_extent() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::full(&[2, 3, 22, 42], 1.0));
        let w = tape.param(Tensor::full(&[3, 5, 4, 4], 0.1));
        let b = tape.param(Tensor::zeros(&[5]));
        let spec = ConvTransposeSpec { stride: 2, padding: 1, output_padding: (1, 1) };
        let y = tape.conv2d_transpose(x, w, b, spec).unwrap();
        assert_eq!(tape.value(y).shape(), &[2, 5, 45, 85]);
        let bad = ConvTransposeSpec { output_padding: (2, 0), ..spec };
        assert!(tape.conv2d_transpose(x, w, b, bad).is_err());
    }
}
