//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! Every op appends a node whose inputs already live on the tape, so the
//! tape order is a topological order and the backward pass is a single
//! reverse sweep. Gradients are only propagated into nodes that transitively
//! depend on a [`Tape::variable`]; constants (e.g. frozen weights during an
//! attack) cost nothing on the way back.
//!
//! Image tensors are NHWC, convolution kernels are `[kh, kw, c_in, c_out]`
//! and dense weights are `[d_in, d_out]`.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(0);

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

impl Var {
    pub fn index(self) -> usize {
        self.index
    }
}

/// Spatial padding mode of a convolution. Stride is always 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    /// Zero padding that keeps the spatial size (odd kernels only).
    Same,
    /// No padding; output shrinks by `kernel - 1`.
    Valid,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    BiasAdd(usize, usize),
    Relu(usize),
    Softmax(usize),
    CrossEntropy {
        probs: usize,
        labels: Vec<usize>,
    },
    SoftmaxCrossEntropy {
        logits: usize,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
    Flatten(usize),
    Conv2d {
        input: usize,
        kernel: usize,
        bias: usize,
        padding: Padding,
    },
    MaxPool {
        input: usize,
        argmax: Vec<usize>,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::BiasAdd(..) => "bias_add",
            Op::Relu(_) => "relu",
            Op::Softmax(_) => "softmax",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
            Op::Flatten(_) => "flatten",
            Op::Conv2d { .. } => "conv2d",
            Op::MaxPool { .. } => "max_pool",
        }
    }
}

struct Node<T: Scalar> {
    value: Arc<Tensor<T>>,
    op: Op,
    requires_grad: bool,
}

/// Record of primitive ops for one forward pass. Confined to one thread.
pub struct Tape<T: Scalar = f32> {
    id: u64,
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a value that gradients do not flow into.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(Arc::new(value), false)
    }

    pub fn constant_shared(&mut self, value: Arc<Tensor<T>>) -> Var {
        self.leaf(value, false)
    }

    /// Records a value whose gradient is wanted.
    pub fn variable(&mut self, value: Tensor<T>) -> Var {
        self.leaf(Arc::new(value), true)
    }

    pub fn variable_shared(&mut self, value: Arc<Tensor<T>>) -> Var {
        self.leaf(value, true)
    }

    fn leaf(&mut self, value: Arc<Tensor<T>>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn idx(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(Error::UnknownVariable(v.index));
        }
        Ok(v.index)
    }

    /// Value of a recorded variable.
    ///
    /// Panics if `v` belongs to another tape.
    pub fn value(&self, v: Var) -> &Tensor<T> {
        let i = self.idx(v).expect("variable from a different tape");
        &self.nodes[i].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op, inputs: &[usize]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite {
                op: op.name().to_string(),
            });
        }
        let requires_grad = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        self.nodes.push(Node {
            value: Arc::new(value),
            op,
            requires_grad,
        });
        Ok(Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        })
    }

    fn shape(&self, i: usize) -> &[usize] {
        self.nodes[i].value.shape()
    }

    /// `[n, d] x [d, k] -> [n, k]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (sa, sb) = (self.shape(ia), self.shape(ib));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(mismatch("matmul", sa, sb));
        }
        let (n, d, k) = (sa[0], sa[1], sb[1]);
        let (av, bv) = (self.nodes[ia].value.data(), self.nodes[ib].value.data());
        let mut out = vec![T::zero(); n * k];
        for r in 0..n {
            let row = &mut out[r * k..(r + 1) * k];
            for j in 0..d {
                let a_rj = av[r * d + j];
                let brow = &bv[j * k..(j + 1) * k];
                for (o, &b) in row.iter_mut().zip(brow) {
                    *o += a_rj * b;
                }
            }
        }
        let value = Tensor::new(vec![n, k], out)?;
        self.push(value, Op::MatMul(ia, ib), &[ia, ib])
    }

    /// Elementwise sum of equally shaped tensors.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        if self.shape(ia) != self.shape(ib) {
            return Err(mismatch("add", self.shape(ia), self.shape(ib)));
        }
        let av = &self.nodes[ia].value;
        let bv = &self.nodes[ib].value;
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| x + y).collect();
        let value = Tensor::new(av.shape().to_vec(), data)?;
        self.push(value, Op::Add(ia, ib), &[ia, ib])
    }

    /// Adds a bias vector along the last axis.
    pub fn bias_add(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (ix, ib) = (self.idx(x)?, self.idx(bias)?);
        let (sx, sb) = (self.shape(ix), self.shape(ib));
        if sb.len() != 1 || sx.last() != Some(&sb[0]) {
            return Err(mismatch("bias_add", sx, sb));
        }
        let k = sb[0];
        let bv = self.nodes[ib].value.data();
        let mut data = self.nodes[ix].value.data().to_vec();
        for row in data.chunks_mut(k) {
            for (o, &b) in row.iter_mut().zip(bv) {
                *o += b;
            }
        }
        let value = Tensor::new(sx.to_vec(), data)?;
        self.push(value, Op::BiasAdd(ix, ib), &[ix, ib])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let ix = self.idx(x)?;
        let value = self.nodes[ix].value.map(|v| if v > T::zero() { v } else { T::zero() });
        self.push(value, Op::Relu(ix), &[ix])
    }

    /// Row-wise softmax of a `[n, k]` tensor, max-subtracted for stability.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let ix = self.idx(x)?;
        let sx = self.shape(ix);
        if sx.len() != 2 {
            return Err(Error::InvalidShape {
                shape: sx.to_vec(),
                reason: "softmax expects [batch, classes]".into(),
            });
        }
        let k = sx[1];
        let probs = softmax_rows(self.nodes[ix].value.data(), k);
        let value = Tensor::new(sx.to_vec(), probs.iter().map(|&p| T::from_f64(p)).collect())?;
        self.push(value, Op::Softmax(ix), &[ix])
    }

    /// Mean negative log-probability of `labels` under row-wise `probs`.
    pub fn cross_entropy(&mut self, probs: Var, labels: &[usize]) -> Result<Var> {
        let ip = self.idx(probs)?;
        let k = self.check_labels("cross_entropy", ip, labels)?;
        let pv = self.nodes[ip].value.data();
        let n = labels.len();
        let loss = labels
            .iter()
            .enumerate()
            .map(|(r, &l)| -pv[r * k + l].as_f64().ln())
            .sum::<f64>()
            / n as f64;
        let value = Tensor::scalar(T::from_f64(loss));
        self.push(
            value,
            Op::CrossEntropy {
                probs: ip,
                labels: labels.to_vec(),
            },
            &[ip],
        )
    }

    /// Fused softmax + cross-entropy on raw logits (log-sum-exp form).
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let il = self.idx(logits)?;
        let k = self.check_labels("softmax_cross_entropy", il, labels)?;
        let zv = self.nodes[il].value.data();
        let n = labels.len();
        let probs = softmax_rows(zv, k);
        let mut loss = 0.0f64;
        for (r, &l) in labels.iter().enumerate() {
            let row = &zv[r * k..(r + 1) * k];
            let max = row.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v.as_f64() - max).exp()).sum::<f64>().ln();
            loss += lse - row[l].as_f64();
        }
        let value = Tensor::scalar(T::from_f64(loss / n as f64));
        self.push(
            value,
            Op::SoftmaxCrossEntropy {
                logits: il,
                labels: labels.to_vec(),
                probs,
            },
            &[il],
        )
    }

    fn check_labels(&self, op: &'static str, i: usize, labels: &[usize]) -> Result<usize> {
        let s = self.shape(i);
        if s.len() != 2 || s[0] != labels.len() {
            return Err(mismatch(op, s, &[labels.len()]));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= s[1]) {
            return Err(Error::InvalidParameter(format!(
                "{op}: label {bad} out of range for {} classes",
                s[1]
            )));
        }
        Ok(s[1])
    }

    /// `[n, ...] -> [n, prod(...)]`.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let ix = self.idx(x)?;
        let sx = self.shape(ix);
        let n = sx[0];
        let d = sx[1..].iter().product::<usize>().max(1);
        let value = Tensor::new(vec![n, d], self.nodes[ix].value.data().to_vec())?;
        self.push(value, Op::Flatten(ix), &[ix])
    }

    /// Stride-1 convolution of `[n, h, w, c_in]` with `[kh, kw, c_in, c_out]` plus bias.
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Var, padding: Padding) -> Result<Var> {
        let (ii, ik, ib) = (self.idx(input)?, self.idx(kernel)?, self.idx(bias)?);
        let (si, sk, sb) = (self.shape(ii), self.shape(ik), self.shape(ib));
        if si.len() != 4 || sk.len() != 4 || si[3] != sk[2] {
            return Err(mismatch("conv2d", si, sk));
        }
        if sb.len() != 1 || sb[0] != sk[3] {
            return Err(mismatch("conv2d", sk, sb));
        }
        let g = ConvGeometry::new(si, sk, padding)?;
        let x = self.nodes[ii].value.data();
        let w = self.nodes[ik].value.data();
        let b = self.nodes[ib].value.data();
        let mut out = vec![T::zero(); g.n * g.oh * g.ow * g.cout];
        for n in 0..g.n {
            for oy in 0..g.oh {
                for ox in 0..g.ow {
                    let obase = ((n * g.oh + oy) * g.ow + ox) * g.cout;
                    let orow = &mut out[obase..obase + g.cout];
                    orow.copy_from_slice(b);
                    g.for_taps(oy, ox, |ibase, kbase| {
                        for ci in 0..g.cin {
                            let v = x[n * g.h * g.w * g.cin + ibase + ci];
                            let krow = &w[kbase + ci * g.cout..kbase + (ci + 1) * g.cout];
                            for (o, &kv) in orow.iter_mut().zip(krow) {
                                *o += v * kv;
                            }
                        }
                    });
                }
            }
        }
        let value = Tensor::new(vec![g.n, g.oh, g.ow, g.cout], out)?;
        self.push(
            value,
            Op::Conv2d {
                input: ii,
                kernel: ik,
                bias: ib,
                padding,
            },
            &[ii, ik, ib],
        )
    }

    /// Non-overlapping `size x size` max pooling of `[n, h, w, c]`.
    pub fn max_pool(&mut self, x: Var, size: usize) -> Result<Var> {
        let ix = self.idx(x)?;
        let s = self.shape(ix).to_vec();
        if s.len() != 4 || size == 0 || s[1] < size || s[2] < size {
            return Err(Error::InvalidShape {
                shape: s,
                reason: format!("max_pool with window {size} needs [n, h>={size}, w>={size}, c]"),
            });
        }
        let (n, h, w, c) = (s[0], s[1], s[2], s[3]);
        let (oh, ow) = (h / size, w / size);
        let xv = self.nodes[ix].value.data();
        let mut out = Vec::with_capacity(n * oh * ow * c);
        let mut argmax = Vec::with_capacity(n * oh * ow * c);
        for b in 0..n {
            for oy in 0..oh {
                for ox in 0..ow {
                    for ch in 0..c {
                        let mut best = usize::MAX;
                        for dy in 0..size {
                            for dx in 0..size {
                                let i = ((b * h + oy * size + dy) * w + ox * size + dx) * c + ch;
                                if best == usize::MAX || xv[i] > xv[best] {
                                    best = i;
                                }
                            }
                        }
                        out.push(xv[best]);
                        argmax.push(best);
                    }
                }
            }
        }
        let value = Tensor::new(vec![n, oh, ow, c], out)?;
        self.push(value, Op::MaxPool { input: ix, argmax }, &[ix])
    }

    /// Gradients of a scalar `loss` with respect to every variable it depends on.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let il = self.idx(loss)?;
        let shape = self.shape(il);
        if shape.iter().product::<usize>() != 1 {
            return Err(Error::NonScalarLoss(shape.to_vec()));
        }
        self.backward_with_seed(loss, Tensor::full(shape, T::one()))
    }

    /// Vector-Jacobian product: propagates `seed` (shaped like `output`) back
    /// through the tape.
    pub fn backward_with_seed(&self, output: Var, seed: Tensor<T>) -> Result<Gradients<T>> {
        let io = self.idx(output)?;
        if seed.shape() != self.shape(io) {
            return Err(mismatch("backward seed", seed.shape(), self.shape(io)));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.nodes[io].requires_grad {
            grads[io] = Some(seed);
        }
        for i in (0..=io).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(Gradients { tape: self.id, grads })
    }

    fn wants(&self, i: usize) -> bool {
        self.nodes[i].requires_grad
    }

    fn propagate(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let gv = g.data();
        match &self.nodes[i].op {
            Op::Leaf => {}
            &Op::MatMul(ia, ib) => {
                let (sa, sb) = (self.shape(ia), self.shape(ib));
                let (n, d, k) = (sa[0], sa[1], sb[1]);
                let av = self.nodes[ia].value.data();
                let bv = self.nodes[ib].value.data();
                if self.wants(ia) {
                    let ga = accumulator(grads, ia, sa);
                    for r in 0..n {
                        let grow = &gv[r * k..(r + 1) * k];
                        for j in 0..d {
                            let brow = &bv[j * k..(j + 1) * k];
                            ga[r * d + j] += dot(grow, brow);
                        }
                    }
                }
                if self.wants(ib) {
                    let gb = accumulator(grads, ib, sb);
                    for r in 0..n {
                        let grow = &gv[r * k..(r + 1) * k];
                        for j in 0..d {
                            let a = av[r * d + j];
                            for (o, &gg) in gb[j * k..(j + 1) * k].iter_mut().zip(grow) {
                                *o += a * gg;
                            }
                        }
                    }
                }
            }
            &Op::Add(ia, ib) => {
                for src in [ia, ib] {
                    if self.wants(src) {
                        let acc = accumulator(grads, src, g.shape());
                        for (o, &gg) in acc.iter_mut().zip(gv) {
                            *o += gg;
                        }
                    }
                }
            }
            &Op::BiasAdd(ix, ib) => {
                if self.wants(ix) {
                    let acc = accumulator(grads, ix, g.shape());
                    for (o, &gg) in acc.iter_mut().zip(gv) {
                        *o += gg;
                    }
                }
                if self.wants(ib) {
                    let k = self.shape(ib)[0];
                    let acc = accumulator(grads, ib, &[k]);
                    for row in gv.chunks(k) {
                        for (o, &gg) in acc.iter_mut().zip(row) {
                            *o += gg;
                        }
                    }
                }
            }
            &Op::Relu(ix) => {
                if self.wants(ix) {
                    let xv = self.nodes[ix].value.data();
                    let acc = accumulator(grads, ix, g.shape());
                    for ((o, &gg), &x) in acc.iter_mut().zip(gv).zip(xv) {
                        if x > T::zero() {
                            *o += gg;
                        }
                    }
                }
            }
            &Op::Softmax(ix) => {
                if self.wants(ix) {
                    let k = g.shape()[1];
                    let pv = self.nodes[i].value.data();
                    let acc = accumulator(grads, ix, g.shape());
                    for ((orow, grow), prow) in acc.chunks_mut(k).zip(gv.chunks(k)).zip(pv.chunks(k)) {
                        let inner: f64 = grow.iter().zip(prow).map(|(a, b)| a.as_f64() * b.as_f64()).sum();
                        for ((o, &gg), &p) in orow.iter_mut().zip(grow).zip(prow) {
                            *o += T::from_f64(p.as_f64() * (gg.as_f64() - inner));
                        }
                    }
                }
            }
            Op::CrossEntropy { probs, labels } => {
                let ip = *probs;
                if self.wants(ip) {
                    let k = self.shape(ip)[1];
                    let scale = gv[0].as_f64() / labels.len() as f64;
                    let pv = self.nodes[ip].value.data();
                    let acc = accumulator(grads, ip, self.shape(ip));
                    for (r, &l) in labels.iter().enumerate() {
                        acc[r * k + l] += T::from_f64(-scale / pv[r * k + l].as_f64());
                    }
                }
            }
            Op::SoftmaxCrossEntropy { logits, labels, probs } => {
                let il = *logits;
                if self.wants(il) {
                    let k = self.shape(il)[1];
                    let scale = gv[0].as_f64() / labels.len() as f64;
                    let acc = accumulator(grads, il, self.shape(il));
                    for (r, &l) in labels.iter().enumerate() {
                        for c in 0..k {
                            let target = if c == l { 1.0 } else { 0.0 };
                            acc[r * k + c] += T::from_f64(scale * (probs[r * k + c] - target));
                        }
                    }
                }
            }
            &Op::Flatten(ix) => {
                if self.wants(ix) {
                    let acc = accumulator(grads, ix, self.shape(ix));
                    for (o, &gg) in acc.iter_mut().zip(gv) {
                        *o += gg;
                    }
                }
            }
            &Op::Conv2d { input, kernel, bias, padding } => {
                let geo = ConvGeometry::new(self.shape(input), self.shape(kernel), padding)?;
                self.conv_backward(&geo, input, kernel, bias, gv, grads);
            }
            Op::MaxPool { input, argmax } => {
                let ix = *input;
                if self.wants(ix) {
                    let acc = accumulator(grads, ix, self.shape(ix));
                    for (&src, &gg) in argmax.iter().zip(gv) {
                        acc[src] += gg;
                    }
                }
            }
        }
        Ok(())
    }

    fn conv_backward(
        &self,
        geo: &ConvGeometry,
        input: usize,
        kernel: usize,
        bias: usize,
        gv: &[T],
        grads: &mut [Option<Tensor<T>>],
    ) {
        let x = self.nodes[input].value.data();
        let w = self.nodes[kernel].value.data();
        let img = geo.h * geo.w * geo.cin;
        if self.wants(input) {
            let gin = accumulator(grads, input, self.shape(input));
            for n in 0..geo.n {
                for oy in 0..geo.oh {
                    for ox in 0..geo.ow {
                        let obase = ((n * geo.oh + oy) * geo.ow + ox) * geo.cout;
                        let grow = &gv[obase..obase + geo.cout];
                        geo.for_taps(oy, ox, |ibase, kbase| {
                            for ci in 0..geo.cin {
                                let krow = &w[kbase + ci * geo.cout..kbase + (ci + 1) * geo.cout];
                                gin[n * img + ibase + ci] += dot(grow, krow);
                            }
                        });
                    }
                }
            }
        }
        if self.wants(kernel) {
            let gk = accumulator(grads, kernel, self.shape(kernel));
            for n in 0..geo.n {
                for oy in 0..geo.oh {
                    for ox in 0..geo.ow {
                        let obase = ((n * geo.oh + oy) * geo.ow + ox) * geo.cout;
                        let grow = &gv[obase..obase + geo.cout];
                        geo.for_taps(oy, ox, |ibase, kbase| {
                            for ci in 0..geo.cin {
                                let v = x[n * img + ibase + ci];
                                let krow = &mut gk[kbase + ci * geo.cout..kbase + (ci + 1) * geo.cout];
                                for (o, &gg) in krow.iter_mut().zip(grow) {
                                    *o += v * gg;
                                }
                            }
                        });
                    }
                }
            }
        }
        if self.wants(bias) {
            let gb = accumulator(grads, bias, &[geo.cout]);
            for grow in gv.chunks(geo.cout) {
                for (o, &gg) in gb.iter_mut().zip(grow) {
                    *o += gg;
                }
            }
        }
    }
}

/// Output of a backward pass, indexed by [`Var`].
pub struct Gradients<T: Scalar = f32> {
    tape: u64,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient for `v`, or `None` when the output does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get(v.index).and_then(|g| g.as_ref())
    }

    /// Takes the gradient for `v` out, substituting zeros shaped like
    /// `like` when the output does not depend on it.
    pub fn take_or_zeros(&mut self, v: Var, like: &[usize]) -> Tensor<T> {
        if v.tape == self.tape {
            if let Some(g) = self.grads.get_mut(v.index).and_then(|g| g.take()) {
                return g;
            }
        }
        Tensor::zeros(like)
    }
}

struct ConvGeometry {
    n: usize,
    h: usize,
    w: usize,
    cin: usize,
    kh: usize,
    kw: usize,
    cout: usize,
    oh: usize,
    ow: usize,
    pad: usize,
}

impl ConvGeometry {
    fn new(si: &[usize], sk: &[usize], padding: Padding) -> Result<Self> {
        let (n, h, w, cin) = (si[0], si[1], si[2], si[3]);
        let (kh, kw, cout) = (sk[0], sk[1], sk[3]);
        let (pad, oh, ow) = match padding {
            Padding::Same => {
                if kh != kw || kh % 2 == 0 {
                    return Err(Error::InvalidShape {
                        shape: sk.to_vec(),
                        reason: "same padding needs a square odd kernel".into(),
                    });
                }
                ((kh - 1) / 2, h, w)
            }
            Padding::Valid => {
                if h < kh || w < kw {
                    return Err(mismatch("conv2d", si, sk));
                }
                (0, h - kh + 1, w - kw + 1)
            }
        };
        Ok(Self {
            n,
            h,
            w,
            cin,
            kh,
            kw,
            cout,
            oh,
            ow,
            pad,
        })
    }

    /// Calls `f(input_offset_within_image, kernel_offset)` for each in-bounds tap.
    #[inline]
    fn for_taps(&self, oy: usize, ox: usize, mut f: impl FnMut(usize, usize)) {
        for ky in 0..self.kh {
            let iy = oy + ky;
            if iy < self.pad || iy - self.pad >= self.h {
                continue;
            }
            let iy = iy - self.pad;
            for kx in 0..self.kw {
                let ix = ox + kx;
                if ix < self.pad || ix - self.pad >= self.w {
                    continue;
                }
                let ix = ix - self.pad;
                f((iy * self.w + ix) * self.cin, (ky * self.kw + kx) * self.cin * self.cout);
            }
        }
    }
}

fn accumulator<'a, T: Scalar>(grads: &'a mut [Option<Tensor<T>>], i: usize, shape: &[usize]) -> &'a mut [T] {
    grads[i].get_or_insert_with(|| Tensor::zeros(shape)).data_mut()
}

#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

fn mismatch(op: &'static str, a: &[usize], b: &[usize]) -> Error {
    Error::ShapeMismatch {
        op,
        left: a.to_vec(),
        right: b.to_vec(),
    }
}

/// Max-subtracted softmax of each `k`-wide row, computed in `f64`.
pub(crate) fn softmax_rows<T: Scalar>(values: &[T], k: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    for row in values.chunks(k) {
        let max = row.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
        let start = out.len();
        let mut sum = 0.0;
        for v in row {
            let e = (v.as_f64() - max).exp();
            sum += e;
            out.push(e);
        }
        for p in &mut out[start..] {
            *p /= sum;
        }
    }
    out
}
