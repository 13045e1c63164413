use super::conv::{self, ConvGeom};
use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Concat(Vec<Var>),
    Slice(Var, usize, usize),
    Reshape(Var),
    Gather(Var, Vec<usize>),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Elu(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    ClampMin(Var, f64),
    Softmax(Var),
    LogSoftmax(Var),
    LogSumExp(Var),
    Sum(Var),
    Mean(Var),
    Conv2d(Var, Var, Var, ConvGeom),
    ConvT2d(Var, Var, Var, ConvGeom),
    MaxPool2d(Var, Vec<usize>),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op,
    needs_grad: bool,
}

/// Forward tape. Nodes are appended in evaluation order, so every node's
/// inputs precede it.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(op: &'static str, a: &[usize], b: &[usize]) -> Error {
    Error::Shape {
        op,
        lhs: a.to_vec(),
        rhs: b.to_vec(),
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

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(T) -> T) -> Var {
        let out = self.value(x).map(f);
        let ng = self.ng(&[x]);
        self.push(out, op, ng)
    }

    /// Elementwise binary op with leading-batch broadcast of `b`.
    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        op: Op,
        f: impl Fn(T, T) -> T,
    ) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (sa, sb) = (ta.shape(), tb.shape());
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(shape_err(name, sa, sb));
        }
        let n = tb.len().max(1);
        let data = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, tb.data()[i % n]))
            .collect();
        let out = Tensor::new(sa, data)?;
        let ng = self.ng(&[a, b]);
        Ok(self.push(out, op, ng))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (sa, sb) = (ta.shape(), tb.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let (da, db) = (ta.data(), tb.data());
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let av = da[i * k + p];
                if av == T::zero() {
                    continue;
                }
                for (o, &bv) in row.iter_mut().zip(&db[p * n..(p + 1) * n]) {
                    *o += av * bv;
                }
            }
        }
        let ng = self.ng(&[a, b]);
        Ok(self.push(Tensor::new(&[m, n], out)?, Op::MatMul(a, b), ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", Op::Mul(a, b), |x, y| x * y)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let c = T::of(s);
        self.unary(x, Op::Scale(x, s), |v| v * c)
    }

    pub fn add_scalar(&mut self, x: Var, s: f64) -> Var {
        let c = T::of(s);
        self.unary(x, Op::AddScalar(x), |v| v + c)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.scale(x, -1.0)
    }

    /// Concatenation along the last axis.
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        let first = *xs.first().ok_or_else(|| shape_err("concat", &[], &[]))?;
        let lead = self.shape(first)[..self.shape(first).len().saturating_sub(1)].to_vec();
        let mut widths = Vec::with_capacity(xs.len());
        for &x in xs {
            let s = self.shape(x);
            if s.is_empty() || s[..s.len() - 1] != *lead {
                return Err(shape_err("concat", self.shape(first), s));
            }
            widths.push(*s.last().unwrap());
        }
        let total: usize = widths.iter().sum();
        let rows: usize = lead.iter().product();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&x, &w) in xs.iter().zip(&widths) {
                data.extend_from_slice(&self.value(x).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let ng = self.ng(xs);
        Ok(self.push(Tensor::new(&shape, data)?, Op::Concat(xs.to_vec()), ng))
    }

    /// `x[..., start..end]`.
    pub fn slice(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let w = *s.last().unwrap_or(&0);
        if s.is_empty() || start >= end || end > w {
            return Err(shape_err("slice", &s, &[start, end]));
        }
        let rows = self.value(x).len() / w;
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(rows * (end - start));
        for r in 0..rows {
            data.extend_from_slice(&src[r * w + start..r * w + end]);
        }
        let mut shape = s;
        *shape.last_mut().unwrap() = end - start;
        let ng = self.ng(&[x]);
        Ok(self.push(Tensor::new(&shape, data)?, Op::Slice(x, start, end), ng))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshaped(shape)?;
        let ng = self.ng(&[x]);
        Ok(self.push(t, Op::Reshape(x), ng))
    }

    /// `out[..., j] = x[..., idx[j]]`.
    pub fn gather(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let w = *s.last().unwrap_or(&0);
        if s.is_empty() || idx.iter().any(|&i| i >= w) {
            return Err(shape_err("gather", &s, idx));
        }
        let rows = self.value(x).len() / w;
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(rows * idx.len());
        for r in 0..rows {
            data.extend(idx.iter().map(|&i| src[r * w + i]));
        }
        let mut shape = s;
        *shape.last_mut().unwrap() = idx.len();
        let ng = self.ng(&[x]);
        Ok(self.push(Tensor::new(&shape, data)?, Op::Gather(x, idx.to_vec()), ng))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid(x), sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Op::Tanh(x), |v| v.tanh())
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Relu(x), |v| v.max(T::zero()))
    }

    /// ELU with alpha = 1.
    pub fn elu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Elu(x), |v| if v > T::zero() { v } else { v.exp_m1() })
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, Op::Exp(x), |v| v.exp())
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, Op::Log(x), |v| v.ln())
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, Op::Square(x), |v| v * v)
    }

    /// `max(x, c)`; the gradient is zero where the floor is active.
    pub fn clamp_min(&mut self, x: Var, c: f64) -> Var {
        let cv = T::of(c);
        self.unary(x, Op::ClampMin(x, c), |v| v.max(cv))
    }

    fn rowwise(&mut self, x: Var, op: Op, reduce: bool, f: impl Fn(&[T], &mut Vec<T>)) -> Var {
        let s = self.shape(x).to_vec();
        let w = *s.last().unwrap_or(&1);
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(src.len());
        for row in src.chunks(w.max(1)) {
            f(row, &mut data);
        }
        let shape = if reduce { s[..s.len().saturating_sub(1)].to_vec() } else { s };
        let ng = self.ng(&[x]);
        self.push(Tensor::new(&shape, data).expect("row-wise shape"), op, ng)
    }

    pub fn softmax(&mut self, x: Var) -> Var {
        self.rowwise(x, Op::Softmax(x), false, |row, out| {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let z: T = row.iter().map(|&v| (v - m).exp()).sum();
            out.extend(row.iter().map(|&v| (v - m).exp() / z));
        })
    }

    pub fn log_softmax(&mut self, x: Var) -> Var {
        self.rowwise(x, Op::LogSoftmax(x), false, |row, out| {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lz = m + row.iter().map(|&v| (v - m).exp()).sum::<T>().ln();
            out.extend(row.iter().map(|&v| v - lz));
        })
    }

    /// Log-sum-exp over the last axis (which is removed).
    pub fn logsumexp(&mut self, x: Var) -> Var {
        self.rowwise(x, Op::LogSumExp(x), true, |row, out| {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            out.push(m + row.iter().map(|&v| (v - m).exp()).sum::<T>().ln());
        })
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: T = self.value(x).data().iter().copied().sum();
        let ng = self.ng(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), ng)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s: T = t.data().iter().copied().sum::<T>() / T::of(t.len() as f64);
        let ng = self.ng(&[x]);
        self.push(Tensor::scalar(s), Op::Mean(x), ng)
    }

    /// 2-D convolution. `x: [B, C, H, W]`, `w: [O, C, kh, kw]`, `b: [O]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let (sx, sw, sb) = (self.shape(x), self.shape(w), self.shape(b));
        if sx.len() != 4 || sw.len() != 4 || sx[1] != sw[1] || sb != [sw[0]] || stride == 0 {
            return Err(shape_err("conv2d", sx, sw));
        }
        if sx[2] + 2 * pad < sw[2] || sx[3] + 2 * pad < sw[3] {
            return Err(shape_err("conv2d", sx, sw));
        }
        let g = ConvGeom {
            batch: sx[0],
            in_ch: sx[1],
            in_h: sx[2],
            in_w: sx[3],
            out_ch: sw[0],
            out_h: (sx[2] + 2 * pad - sw[2]) / stride + 1,
            out_w: (sx[3] + 2 * pad - sw[3]) / stride + 1,
            kh: sw[2],
            kw: sw[3],
            stride,
            pad,
        };
        let out = conv::conv2d_forward(
            &g,
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
        );
        let t = Tensor::new(&[g.batch, g.out_ch, g.out_h, g.out_w], out)?;
        let ng = self.ng(&[x, w, b]);
        Ok(self.push(t, Op::Conv2d(x, w, b, g), ng))
    }

    /// Transposed convolution (adjoint of [`Graph::conv2d`]).
    /// `x: [B, C, H, W]`, `w: [C, O, kh, kw]`, `b: [O]`.
    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        pad: usize,
        output_pad: usize,
    ) -> Result<Var> {
        let (sx, sw, sb) = (self.shape(x), self.shape(w), self.shape(b));
        if sx.len() != 4 || sw.len() != 4 || sx[1] != sw[0] || sb != [sw[1]] || stride == 0 {
            return Err(shape_err("conv_transpose2d", sx, sw));
        }
        let full_h = (sx[2] - 1) * stride + sw[2] + output_pad;
        let full_w = (sx[3] - 1) * stride + sw[3] + output_pad;
        if full_h <= 2 * pad || full_w <= 2 * pad || output_pad >= stride.max(1) {
            return Err(shape_err("conv_transpose2d", sx, sw));
        }
        let g = ConvGeom {
            batch: sx[0],
            in_ch: sw[1],
            in_h: full_h - 2 * pad,
            in_w: full_w - 2 * pad,
            out_ch: sx[1],
            out_h: sx[2],
            out_w: sx[3],
            kh: sw[2],
            kw: sw[3],
            stride,
            pad,
        };
        let out = conv::conv_t_forward(
            &g,
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
        );
        let t = Tensor::new(&[g.batch, g.in_ch, g.in_h, g.in_w], out)?;
        let ng = self.ng(&[x, w, b]);
        Ok(self.push(t, Op::ConvT2d(x, w, b, g), ng))
    }

    pub fn maxpool2d(&mut self, x: Var, k: usize, stride: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 || k == 0 || stride == 0 || s[2] < k || s[3] < k {
            return Err(shape_err("maxpool2d", &s, &[k, stride]));
        }
        let (out, arg, oh, ow) =
            conv::maxpool_forward(self.value(x).data(), (s[0], s[1], s[2], s[3]), k, stride);
        let t = Tensor::new(&[s[0], s[1], oh, ow], out)?;
        let ng = self.ng(&[x]);
        Ok(self.push(t, Op::MaxPool2d(x, arg), ng))
    }

    /// Reverse accumulation from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(Error::Shape {
                op: "backward (loss must be scalar)",
                lhs: lt.shape().to_vec(),
                rhs: vec![],
            });
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(lt.shape(), T::one()));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, n)| if matches!(n.op, Op::Leaf) && n.needs_grad { g } else { None })
            .collect();
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn acc(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn acc_data(&self, grads: &mut [Option<Tensor<T>>], v: Var, data: Vec<T>) {
        if self.nodes[v.0].needs_grad {
            let t = Tensor::new(self.shape(v), data).expect("gradient shape");
            self.acc(grads, v, t);
        }
    }

    /// Folds a gradient shaped like the broadcast output back onto `b`.
    fn unbroadcast(&self, b: Var, g: &[T], f: impl Fn(usize) -> T) -> Vec<T> {
        let n = self.value(b).len().max(1);
        let mut out = vec![T::zero(); n];
        for (i, &gv) in g.iter().enumerate() {
            out[i % n] += gv * f(i);
        }
        out
    }

    fn backprop_node(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[i];
        let y = node.value.data();
        let gd = g.data();
        let elementwise = |x: Var, f: &dyn Fn(usize) -> T| -> Vec<T> {
            debug_assert_eq!(gd.len(), self.value(x).len());
            gd.iter().enumerate().map(|(k, &gv)| gv * f(k)).collect()
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = (ta.shape()[0], ta.shape()[1]);
                let n = tb.shape()[1];
                let (da, db) = (ta.data(), tb.data());
                if self.nodes[a.0].needs_grad {
                    let mut ga = vec![T::zero(); m * k];
                    for r in 0..m {
                        for p in 0..k {
                            let mut s = T::zero();
                            for c in 0..n {
                                s += gd[r * n + c] * db[p * n + c];
                            }
                            ga[r * k + p] = s;
                        }
                    }
                    self.acc_data(grads, *a, ga);
                }
                if self.nodes[b.0].needs_grad {
                    let mut gb = vec![T::zero(); k * n];
                    for r in 0..m {
                        for p in 0..k {
                            let av = da[r * k + p];
                            if av == T::zero() {
                                continue;
                            }
                            for c in 0..n {
                                gb[p * n + c] += av * gd[r * n + c];
                            }
                        }
                    }
                    self.acc_data(grads, *b, gb);
                }
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, g.clone());
                let gb = self.unbroadcast(*b, gd, |_| T::one());
                self.acc_data(grads, *b, gb);
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, g.clone());
                let gb = self.unbroadcast(*b, gd, |_| -T::one());
                self.acc_data(grads, *b, gb);
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a).data(), self.value(*b).data());
                let nb = tb.len().max(1);
                let ga = elementwise(*a, &|k| tb[k % nb]);
                self.acc_data(grads, *a, ga);
                let gb = self.unbroadcast(*b, gd, |k| ta[k]);
                self.acc_data(grads, *b, gb);
            }
            Op::Scale(x, s) => {
                let c = T::of(*s);
                self.acc_data(grads, *x, elementwise(*x, &|_| c));
            }
            Op::AddScalar(x) | Op::Reshape(x) => {
                let t = Tensor::new(self.shape(*x), gd.to_vec()).expect("same numel");
                self.acc(grads, *x, t);
            }
            Op::Concat(xs) => {
                let widths: Vec<usize> = xs.iter().map(|&x| self.value(x).last_dim()).collect();
                let total: usize = widths.iter().sum();
                let rows = gd.len() / total.max(1);
                let mut off = 0;
                for (&x, &w) in xs.iter().zip(&widths) {
                    if self.nodes[x.0].needs_grad {
                        let mut gx = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            gx.extend_from_slice(&gd[r * total + off..r * total + off + w]);
                        }
                        self.acc_data(grads, x, gx);
                    }
                    off += w;
                }
            }
            Op::Slice(x, start, end) => {
                let w = self.value(*x).last_dim();
                let sw = end - start;
                let rows = gd.len() / sw;
                let mut gx = vec![T::zero(); rows * w];
                for r in 0..rows {
                    gx[r * w + start..r * w + end].copy_from_slice(&gd[r * sw..(r + 1) * sw]);
                }
                self.acc_data(grads, *x, gx);
            }
            Op::Gather(x, idx) => {
                let w = self.value(*x).last_dim();
                let rows = gd.len() / idx.len();
                let mut gx = vec![T::zero(); rows * w];
                for r in 0..rows {
                    for (j, &src) in idx.iter().enumerate() {
                        gx[r * w + src] += gd[r * idx.len() + j];
                    }
                }
                self.acc_data(grads, *x, gx);
            }
            Op::Sigmoid(x) => {
                self.acc_data(grads, *x, elementwise(*x, &|k| y[k] * (T::one() - y[k])))
            }
            Op::Tanh(x) => self.acc_data(grads, *x, elementwise(*x, &|k| T::one() - y[k] * y[k])),
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                let f = |k: usize| if xv[k] > T::zero() { T::one() } else { T::zero() };
                self.acc_data(grads, *x, elementwise(*x, &f));
            }
            Op::Elu(x) => {
                let xv = self.value(*x).data();
                let f = |k: usize| if xv[k] > T::zero() { T::one() } else { y[k] + T::one() };
                self.acc_data(grads, *x, elementwise(*x, &f));
            }
            Op::Exp(x) => self.acc_data(grads, *x, elementwise(*x, &|k| y[k])),
            Op::Log(x) => {
                let xv = self.value(*x).data();
                self.acc_data(grads, *x, elementwise(*x, &|k| T::one() / xv[k]));
            }
            Op::Square(x) => {
                let xv = self.value(*x).data();
                self.acc_data(grads, *x, elementwise(*x, &|k| T::of(2.0) * xv[k]));
            }
            Op::ClampMin(x, c) => {
                let xv = self.value(*x).data();
                let cv = T::of(*c);
                let f = |k: usize| if xv[k] >= cv { T::one() } else { T::zero() };
                self.acc_data(grads, *x, elementwise(*x, &f));
            }
            Op::Softmax(x) => {
                let w = self.value(*x).last_dim();
                let mut gx = Vec::with_capacity(gd.len());
                for (yr, gr) in y.chunks(w).zip(gd.chunks(w)) {
                    let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    gx.extend(yr.iter().zip(gr).map(|(&yv, &gv)| yv * (gv - dot)));
                }
                self.acc_data(grads, *x, gx);
            }
            Op::LogSoftmax(x) => {
                let w = self.value(*x).last_dim();
                let mut gx = Vec::with_capacity(gd.len());
                for (yr, gr) in y.chunks(w).zip(gd.chunks(w)) {
                    let gs: T = gr.iter().copied().sum();
                    gx.extend(yr.iter().zip(gr).map(|(&yv, &gv)| gv - yv.exp() * gs));
                }
                self.acc_data(grads, *x, gx);
            }
            Op::LogSumExp(x) => {
                let xt = self.value(*x);
                let w = xt.last_dim();
                let mut gx = Vec::with_capacity(xt.len());
                for (r, row) in xt.data().chunks(w).enumerate() {
                    gx.extend(row.iter().map(|&v| gd[r] * (v - y[r]).exp()));
                }
                self.acc_data(grads, *x, gx);
            }
            Op::Sum(x) => {
                let n = self.value(*x).len();
                self.acc_data(grads, *x, vec![gd[0]; n]);
            }
            Op::Mean(x) => {
                let n = self.value(*x).len();
                self.acc_data(grads, *x, vec![gd[0] / T::of(n as f64); n]);
            }
            Op::Conv2d(x, w, b, geom) => {
                let (dx, dw, db) =
                    conv::conv2d_backward(geom, self.value(*x).data(), self.value(*w).data(), gd);
                self.acc_data(grads, *x, dx);
                self.acc_data(grads, *w, dw);
                self.acc_data(grads, *b, db);
            }
            Op::ConvT2d(x, w, b, geom) => {
                let (dx, dw, db) =
                    conv::conv_t_backward(geom, self.value(*x).data(), self.value(*w).data(), gd);
                self.acc_data(grads, *x, dx);
                self.acc_data(grads, *w, dw);
                self.acc_data(grads, *b, db);
            }
            Op::MaxPool2d(x, arg) => {
                let mut gx = vec![T::zero(); self.value(*x).len()];
                for (&src, &gv) in arg.iter().zip(gd) {
                    gx[src] += gv;
                }
                self.acc_data(grads, *x, gx);
            }
        }
    }
}

/// Gradients of a scalar loss with respect to every parameter leaf.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of `v`; zeros if the loss does not depend on it.
    pub fn get(&self, v: Var) -> Tensor<T> {
        self.grads[v.0]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }

    pub fn wrt(&self, vars: &[Var]) -> Vec<Tensor<T>> {
        vars.iter().map(|&v| self.get(v)).collect()
    }
}
