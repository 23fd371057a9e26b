//! Tape-based reverse-mode differentiation over small dense f32 tensors.
//!
//! A [`Tape`] owns every value produced during a forward pass. Operations
//! append nodes in execution order, so the tape is topologically sorted by
//! construction and [`Tape::backward`] is a single reverse sweep.
//!
//! Parameters can be placed on a tape by reference ([`Tape::param`]); the
//! tape then borrows them for its lifetime and never copies the weights.

pub mod kernels;

use std::borrow::Cow;

use crate::error::{Error, Result};
use kernels::ConvGeometry;

/// Row-major dense tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape("tensor", &shape, &[data.len()]));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
        }
    }

    /// A `[1×n]` row vector.
    pub fn row(data: Vec<f32>) -> Self {
        Tensor {
            shape: vec![1, data.len()],
            data,
        }
    }

    pub fn scalar(v: f32) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Rows of a 2-D tensor.
    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// The pointwise operations available through [`Tape::elementwise`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
    Sigmoid,
    Tanh,
    Relu,
    /// Softmax over the last axis.
    Softmax,
    Log,
    Exp,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        m: usize,
        k: usize,
        n: usize,
    },
    Add {
        a: Var,
        b: Var,
    },
    Sub {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Softmax {
        a: Var,
        cols: usize,
    },
    Conv2d {
        input: Var,
        kernels: Var,
        bias: Option<Var>,
        geom: ConvGeometry,
    },
    MaxPool {
        input: Var,
        argmax: Vec<u32>,
    },
    Reshape(Var),
    Transpose01 {
        a: Var,
        d0: usize,
        d1: usize,
        inner: usize,
    },
    ConcatLast {
        inputs: Vec<Var>,
        widths: Vec<usize>,
    },
    SliceLast {
        a: Var,
        start: usize,
        cols: usize,
    },
    Rows {
        a: Var,
        start: usize,
    },
    ConcatRows {
        inputs: Vec<Var>,
    },
    Sum(Var),
    Scale {
        a: Var,
        c: f32,
    },
    CrossEntropy {
        logits: Var,
        target: usize,
        probs: Vec<f32>,
    },
}

fn grad_slot<'g>(nodes: &[Node<'_>], grads: &'g mut [Option<Vec<f32>>], v: Var) -> Option<&'g mut Vec<f32>> {
    let node = &nodes[v.0];
    if !node.requires_grad {
        return None;
    }
    let n = node.value.len();
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]))
}

struct Node<'a> {
    shape: Vec<usize>,
    value: Cow<'a, [f32]>,
    op: Op,
    requires_grad: bool,
}

/// Records a forward computation for later gradient evaluation.
///
/// A tape is single-owner; independent tapes may run on different threads.
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
    grads: Vec<Option<Vec<f32>>>,
    record: bool,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a> Tape<'a> {
    /// A tape that records backward rules.
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
            record: true,
        }
    }

    /// A forward-only tape; nothing on it requires a gradient.
    pub fn inference() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
            record: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Cow<'a, [f32]>, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        let requires_grad = requires_grad && self.record;
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Places an owned tensor on the tape.
    pub fn leaf(&mut self, t: Tensor, requires_grad: bool) -> Var {
        self.push(t.shape, Cow::Owned(t.data), Op::Leaf, requires_grad)
    }

    /// Places a borrowed parameter on the tape; it requires a gradient when the
    /// tape records.
    pub fn param(&mut self, t: &'a Tensor) -> Var {
        self.push(t.shape.clone(), Cow::Borrowed(&t.data), Op::Leaf, true)
    }

    /// Places borrowed data on the tape as a constant.
    pub fn constant(&mut self, shape: &[usize], data: &'a [f32]) -> Result<Var> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::shape("constant", shape, &[data.len()]));
        }
        Ok(self.push(shape.to_vec(), Cow::Borrowed(data), Op::Leaf, false))
    }

    pub fn zeros(&mut self, shape: &[usize]) -> Var {
        self.leaf(Tensor::zeros(shape.to_vec()), false)
    }

    pub fn value(&self, v: Var) -> &[f32] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor {
            shape: n.shape.clone(),
            data: n.value.to_vec(),
        }
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Gradient accumulated by the last [`Tape::backward`]; `None` when the
    /// value does not require a gradient. Values disconnected from the loss
    /// report zeros.
    pub fn grad(&self, v: Var) -> Option<Cow<'_, [f32]>> {
        if !self.rg(v) {
            return None;
        }
        match self.grads.get(v.0).and_then(|g| g.as_ref()) {
            Some(g) => Some(Cow::Borrowed(g)),
            None => Some(Cow::Owned(vec![0.0; self.nodes[v.0].value.len()])),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = kernels::matmul(self.value(a), self.value(b), m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(vec![m, n], Cow::Owned(out), Op::MatMul { a, b, m, k, n }, rg))
    }

    /// `b` must either match `a`'s shape or equal a trailing part of it
    /// (leading unit axes of `b` are ignored).
    fn check_broadcast(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let trimmed: &[usize] = {
            let lead = sb.iter().take_while(|&&d| d == 1).count();
            &sb[lead.min(sb.len().saturating_sub(1))..]
        };
        let ok = sa == sb || (trimmed.len() <= sa.len() && sa.ends_with(trimmed));
        if ok {
            Ok(())
        } else {
            Err(Error::shape(op, sa, sb))
        }
    }

    fn binary(&mut self, kind: ElementwiseOp, a: Var, b: Var) -> Result<Var> {
        let name = match kind {
            ElementwiseOp::Add => "add",
            ElementwiseOp::Sub => "sub",
            _ => "mul",
        };
        self.check_broadcast(name, a, b)?;
        let va = self.value(a);
        let vb = self.value(b);
        let nb = vb.len();
        let f: fn(f32, f32) -> f32 = match kind {
            ElementwiseOp::Add => |x, y| x + y,
            ElementwiseOp::Sub => |x, y| x - y,
            _ => |x, y| x * y,
        };
        let mut out = Vec::with_capacity(va.len());
        if nb > 0 {
            for chunk in va.chunks(nb) {
                out.extend(chunk.iter().zip(vb).map(|(&x, &y)| f(x, y)));
            }
        }
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a) || self.rg(b);
        let op = match kind {
            ElementwiseOp::Add => Op::Add { a, b },
            ElementwiseOp::Sub => Op::Sub { a, b },
            _ => Op::Mul { a, b },
        };
        Ok(self.push(shape, Cow::Owned(out), op, rg))
    }

    fn unary(&mut self, kind: ElementwiseOp, a: Var) -> Result<Var> {
        let va = self.value(a);
        let out: Vec<f32> = match kind {
            ElementwiseOp::Sigmoid => va.iter().map(|&x| kernels::sigmoid(x)).collect(),
            ElementwiseOp::Tanh => va.iter().map(|&x| x.tanh()).collect(),
            ElementwiseOp::Relu => va.iter().map(|&x| x.max(0.0)).collect(),
            ElementwiseOp::Exp => va.iter().map(|&x| x.exp()).collect(),
            ElementwiseOp::Log => va.iter().map(|&x| x.ln()).collect(),
            ElementwiseOp::Softmax => {
                let cols = self.shape(a).last().copied().unwrap_or(1);
                if cols == 0 {
                    return Err(Error::shape("softmax", self.shape(a), &[]));
                }
                kernels::softmax_rows(va, cols)
            }
            _ => unreachable!("binary op routed to unary"),
        };
        let shape = self.shape(a).to_vec();
        let op = match kind {
            ElementwiseOp::Sigmoid => Op::Sigmoid(a),
            ElementwiseOp::Tanh => Op::Tanh(a),
            ElementwiseOp::Relu => Op::Relu(a),
            ElementwiseOp::Exp => Op::Exp(a),
            ElementwiseOp::Log => Op::Log(a),
            _ => Op::Softmax {
                a,
                cols: *shape.last().unwrap_or(&1),
            },
        };
        let rg = self.rg(a);
        Ok(self.push(shape, Cow::Owned(out), op, rg))
    }

    /// Pointwise operation; binary kinds require `b`.
    pub fn elementwise(&mut self, kind: ElementwiseOp, a: Var, b: Option<Var>) -> Result<Var> {
        match kind {
            ElementwiseOp::Add | ElementwiseOp::Sub | ElementwiseOp::Mul => {
                let b = b.ok_or_else(|| Error::Contract(format!("{kind:?} needs two operands")))?;
                self.binary(kind, a, b)
            }
            _ => {
                if b.is_some() {
                    return Err(Error::Contract(format!("{kind:?} takes one operand")));
                }
                self.unary(kind, a)
            }
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(ElementwiseOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(ElementwiseOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(ElementwiseOp::Mul, a, b)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(ElementwiseOp::Sigmoid, a).expect("unary op")
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(ElementwiseOp::Tanh, a).expect("unary op")
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(ElementwiseOp::Relu, a).expect("unary op")
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(ElementwiseOp::Exp, a).expect("unary op")
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(ElementwiseOp::Log, a).expect("unary op")
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        self.unary(ElementwiseOp::Softmax, a)
    }

    /// Zero-padded 2-D cross-correlation of a `C_in×H×W` input with
    /// `C_out×C_in×kh×kw` kernels and an optional per-channel bias.
    pub fn conv2d(&mut self, input: Var, kernels: Var, bias: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (si, sk) = (self.shape(input), self.shape(kernels));
        if si.len() != 3 || sk.len() != 4 || si[0] != sk[1] || sk[2] % 2 == 0 || sk[3] % 2 == 0 {
            return Err(Error::shape("conv2d", si, sk));
        }
        let geom = ConvGeometry {
            c_in: si[0],
            h: si[1],
            w: si[2],
            c_out: sk[0],
            kh: sk[2],
            kw: sk[3],
            stride,
            pad,
        };
        let (ho, wo) = geom.output_hw().ok_or_else(|| Error::shape("conv2d", si, sk))?;
        if let Some(b) = bias {
            if self.shape(b).iter().product::<usize>() != geom.c_out {
                return Err(Error::shape("conv2d bias", self.shape(b), &[geom.c_out]));
            }
        }
        let out = kernels::conv2d(
            self.value(input),
            self.value(kernels),
            bias.map(|b| self.value(b)),
            &geom,
        );
        let rg = self.rg(input) || self.rg(kernels) || bias.is_some_and(|b| self.rg(b));
        Ok(self.push(
            vec![geom.c_out, ho, wo],
            Cow::Owned(out),
            Op::Conv2d {
                input,
                kernels,
                bias,
                geom,
            },
            rg,
        ))
    }

    /// 2×2 max pooling with stride 2 over a `C×H×W` input.
    pub fn maxpool2d(&mut self, input: Var) -> Result<Var> {
        let s = self.shape(input);
        if s.len() != 3 || s[1] < 2 || s[2] < 2 {
            return Err(Error::shape("maxpool2d", s, &[2, 2]));
        }
        let (c, h, w) = (s[0], s[1], s[2]);
        let (out, argmax) = kernels::maxpool2x2(self.value(input), c, h, w);
        let rg = self.rg(input);
        Ok(self.push(
            vec![c, h / 2, w / 2],
            Cow::Owned(out),
            Op::MaxPool { input, argmax },
            rg,
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        if shape.iter().product::<usize>() != self.value(a).len() {
            return Err(Error::shape("reshape", self.shape(a), shape));
        }
        let value = self.value(a).to_vec();
        let rg = self.rg(a);
        Ok(self.push(shape.to_vec(), Cow::Owned(value), Op::Reshape(a), rg))
    }

    /// Swaps the two leading axes: `[A×B×…] → [B×A×…]`.
    pub fn transpose01(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        if s.len() < 2 {
            return Err(Error::shape("transpose01", s, &[]));
        }
        let (d0, d1) = (s[0], s[1]);
        let inner: usize = s[2..].iter().product();
        let mut shape = s.to_vec();
        shape.swap(0, 1);
        let v = self.value(a);
        let mut out = Vec::with_capacity(v.len());
        for j in 0..d1 {
            for i in 0..d0 {
                let off = (i * d1 + j) * inner;
                out.extend_from_slice(&v[off..off + inner]);
            }
        }
        let rg = self.rg(a);
        Ok(self.push(shape, Cow::Owned(out), Op::Transpose01 { a, d0, d1, inner }, rg))
    }

    /// Concatenates 2-D tensors with equal row counts along the last axis.
    pub fn concat_last(&mut self, inputs: &[Var]) -> Result<Var> {
        let first = *inputs
            .first()
            .ok_or_else(|| Error::Contract("concat of nothing".into()))?;
        let rows = self.shape(first)[0];
        let mut widths = Vec::with_capacity(inputs.len());
        for &v in inputs {
            let s = self.shape(v);
            if s.len() != 2 || s[0] != rows {
                return Err(Error::shape("concat_last", self.shape(first), s));
            }
            widths.push(s[1]);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&v, &w) in inputs.iter().zip(&widths) {
                out.extend_from_slice(&self.value(v)[r * w..(r + 1) * w]);
            }
        }
        let rg = inputs.iter().any(|&v| self.rg(v));
        Ok(self.push(
            vec![rows, total],
            Cow::Owned(out),
            Op::ConcatLast {
                inputs: inputs.to_vec(),
                widths,
            },
            rg,
        ))
    }

    /// Columns `start..start+len` of a 2-D tensor.
    pub fn slice_last(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 2 || start + len > s[1] {
            return Err(Error::shape("slice_last", s, &[start, len]));
        }
        let (rows, cols) = (s[0], s[1]);
        let v = self.value(a);
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&v[r * cols + start..r * cols + start + len]);
        }
        let rg = self.rg(a);
        Ok(self.push(vec![rows, len], Cow::Owned(out), Op::SliceLast { a, start, cols }, rg))
    }

    /// Rows `start..start+count` of a 2-D tensor.
    pub fn rows(&mut self, a: Var, start: usize, count: usize) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 2 || start + count > s[0] {
            return Err(Error::shape("rows", s, &[start, count]));
        }
        let cols = s[1];
        let out = self.value(a)[start * cols..(start + count) * cols].to_vec();
        let rg = self.rg(a);
        Ok(self.push(vec![count, cols], Cow::Owned(out), Op::Rows { a, start }, rg))
    }

    /// Stacks 2-D tensors with equal column counts along the first axis.
    pub fn concat_rows(&mut self, inputs: &[Var]) -> Result<Var> {
        let first = *inputs
            .first()
            .ok_or_else(|| Error::Contract("concat of nothing".into()))?;
        let cols = self.shape(first)[1];
        let mut rows = 0;
        for &v in inputs {
            let s = self.shape(v);
            if s.len() != 2 || s[1] != cols {
                return Err(Error::shape("concat_rows", self.shape(first), s));
            }
            rows += s[0];
        }
        let mut out = Vec::with_capacity(rows * cols);
        for &v in inputs {
            out.extend_from_slice(self.value(v));
        }
        let rg = inputs.iter().any(|&v| self.rg(v));
        Ok(self.push(
            vec![rows, cols],
            Cow::Owned(out),
            Op::ConcatRows {
                inputs: inputs.to_vec(),
            },
            rg,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: f32 = self.value(a).iter().sum();
        let rg = self.rg(a);
        self.push(vec![1], Cow::Owned(vec![s]), Op::Sum(a), rg)
    }

    pub fn scale(&mut self, a: Var, c: f32) -> Var {
        let out: Vec<f32> = self.value(a).iter().map(|&x| x * c).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a);
        self.push(shape, Cow::Owned(out), Op::Scale { a, c }, rg)
    }

    /// Negative log-likelihood of `target` under softmax(`logits`), for a
    /// single row of logits.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let v = self.value(logits);
        if target >= v.len() {
            return Err(Error::shape("cross_entropy", self.shape(logits), &[target]));
        }
        let max = v.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let lse = v.iter().map(|&x| (x - max).exp()).sum::<f32>().ln() + max;
        let loss = lse - v[target];
        let probs = kernels::softmax_rows(v, v.len());
        let rg = self.rg(logits);
        Ok(self.push(
            vec![1],
            Cow::Owned(vec![loss]),
            Op::CrossEntropy { logits, target, probs },
            rg,
        ))
    }

    /// Accumulates d(loss)/d(value) into every value that requires a gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        if !self.rg(loss) {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = self.grads[idx].take() else { continue };
            self.propagate(idx, &g);
            self.grads[idx] = Some(g);
        }
        Ok(())
    }

    fn propagate(&mut self, idx: usize, g: &[f32]) {
        // values are read from `nodes`, gradients written to `grads`
        let nodes = &self.nodes;
        let grads = &mut self.grads;
        let node = &nodes[idx];
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul { a, b, m, k, n } => {
                let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
                if let Some(da) = grad_slot(nodes, grads, a) {
                    kernels::matmul_backward(va, vb, g, m, k, n, Some(da), None);
                }
                if let Some(db) = grad_slot(nodes, grads, b) {
                    kernels::matmul_backward(va, vb, g, m, k, n, None, Some(db));
                }
            }
            &Op::Add { a, b } | &Op::Sub { a, b } => {
                let sign = if matches!(node.op, Op::Sub { .. }) { -1.0 } else { 1.0 };
                if let Some(da) = grad_slot(nodes, grads, a) {
                    for (d, &x) in da.iter_mut().zip(g) {
                        *d += x;
                    }
                }
                if let Some(db) = grad_slot(nodes, grads, b) {
                    let nb = db.len();
                    for (i, &x) in g.iter().enumerate() {
                        db[i % nb] += sign * x;
                    }
                }
            }
            &Op::Mul { a, b } => {
                let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
                let nb = vb.len();
                if let Some(da) = grad_slot(nodes, grads, a) {
                    for (i, d) in da.iter_mut().enumerate() {
                        *d += g[i] * vb[i % nb];
                    }
                }
                if let Some(db) = grad_slot(nodes, grads, b) {
                    for (i, &x) in g.iter().enumerate() {
                        db[i % nb] += x * va[i];
                    }
                }
            }
            &Op::Sigmoid(a) => {
                let y = &node.value;
                if let Some(da) = grad_slot(nodes, grads, a) {
                    for i in 0..da.len() {
                        da[i] += g[i] * y[i] * (1.0 - y[i]);
                    }
                }
            }
            &Op::Tanh(a) => {
                let y = &node.value;
                if let Some(da) = grad_slot(nodes, grads, a) {
                    for i in 0..da.len() {
                        da[i] += g[i] * (1.0 - y[i] * y[i]);
                    }
                }
            }
            &Op::Relu(a) => {
                let x = &nodes[a.0].value;
                if let Some(da) = grad_slot(nodes, grads, a) {
                    for i in 0..da.len() {
                        if x[i] > 0.0 {
                            da[i] += g[i];
                        }
                    }
                }
            }
            &Op::Exp(a) => {
                let y = &node.value;
                if let Some(da) = grad_slot(nodes, grads, a) {
                    for i in 0..da.len() {
                        da[i] += g[i] * y[i];
                    }
                }
            }
            &Op::Log(a) => {
                let x = &nodes[a.0].value;
                if let Some(da) = grad_slot(nodes, grads, a) {
                    for i in 0..da.len() {
                        da[i] += g[i] / x[i];
                    }
                }
            }
            &Op::Softmax { a, cols } => {
                let y = &node.value;
                if let Some(da) = grad_slot(nodes, grads, a) {
                    for ((drow, yrow), grow) in da.chunks_mut(cols).zip(y.chunks(cols)).zip(g.chunks(cols)) {
                        let dot: f32 = yrow.iter().zip(grow).map(|(p, q)| p * q).sum();
                        for j in 0..cols {
                            drow[j] += yrow[j] * (grow[j] - dot);
                        }
                    }
                }
            }
            &Op::Conv2d {
                input,
                kernels: kern,
                bias,
                ref geom,
            } => {
                let (vi, vk) = (&nodes[input.0].value, &nodes[kern.0].value);
                if let Some(di) = grad_slot(nodes, grads, input) {
                    kernels::conv2d_backward(vi, vk, g, geom, Some(di), None, None);
                }
                if let Some(dk) = grad_slot(nodes, grads, kern) {
                    kernels::conv2d_backward(vi, vk, g, geom, None, Some(dk), None);
                }
                if let Some(db) = bias.and_then(|b| grad_slot(nodes, grads, b)) {
                    let plane = g.len() / geom.c_out;
                    for co in 0..geom.c_out {
                        db[co] += g[co * plane..(co + 1) * plane].iter().sum::<f32>();
                    }
                }
            }
            Op::MaxPool { input, argmax } => {
                if let Some(di) = grad_slot(nodes, grads, *input) {
                    for (&src, &x) in argmax.iter().zip(g) {
                        di[src as usize] += x;
                    }
                }
            }
            &Op::Reshape(a) => {
                if let Some(da) = grad_slot(nodes, grads, a) {
                    for (d, &x) in da.iter_mut().zip(g) {
                        *d += x;
                    }
                }
            }
            &Op::Transpose01 { a, d0, d1, inner } => {
                if let Some(da) = grad_slot(nodes, grads, a) {
                    for j in 0..d1 {
                        for i in 0..d0 {
                            let src = (j * d0 + i) * inner;
                            let dst = (i * d1 + j) * inner;
                            for t in 0..inner {
                                da[dst + t] += g[src + t];
                            }
                        }
                    }
                }
            }
            Op::ConcatLast { inputs, widths } => {
                let total: usize = widths.iter().sum();
                let rows = g.len() / total.max(1);
                let mut off = 0;
                for (&v, &w) in inputs.iter().zip(widths) {
                    if let Some(dv) = grad_slot(nodes, grads, v) {
                        for r in 0..rows {
                            for c in 0..w {
                                dv[r * w + c] += g[r * total + off + c];
                            }
                        }
                    }
                    off += w;
                }
            }
            &Op::SliceLast { a, start, cols } => {
                let len = node.shape[1];
                if let Some(da) = grad_slot(nodes, grads, a) {
                    for r in 0..node.shape[0] {
                        for c in 0..len {
                            da[r * cols + start + c] += g[r * len + c];
                        }
                    }
                }
            }
            &Op::Rows { a, start } => {
                let cols = node.shape[1];
                if let Some(da) = grad_slot(nodes, grads, a) {
                    for (d, &x) in da[start * cols..].iter_mut().zip(g) {
                        *d += x;
                    }
                }
            }
            Op::ConcatRows { inputs } => {
                let mut off = 0;
                for &v in inputs {
                    let n = nodes[v.0].value.len();
                    if let Some(dv) = grad_slot(nodes, grads, v) {
                        for (d, &x) in dv.iter_mut().zip(&g[off..off + n]) {
                            *d += x;
                        }
                    }
                    off += n;
                }
            }
            &Op::Sum(a) => {
                if let Some(da) = grad_slot(nodes, grads, a) {
                    for d in da.iter_mut() {
                        *d += g[0];
                    }
                }
            }
            &Op::Scale { a, c } => {
                if let Some(da) = grad_slot(nodes, grads, a) {
                    for (d, &x) in da.iter_mut().zip(g) {
                        *d += c * x;
                    }
                }
            }
            Op::CrossEntropy { logits, target, probs } => {
                if let Some(dl) = grad_slot(nodes, grads, *logits) {
                    for (j, d) in dl.iter_mut().enumerate() {
                        let onehot = if j == *target { 1.0 } else { 0.0 };
                        *d += g[0] * (probs[j] - onehot);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_matmul() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::new(vec![2, 2], vec![1., 0., 0., 1.]).unwrap(), false);
        let b = t.leaf(Tensor::new(vec![2, 1], vec![3., 4.]).unwrap(), false);
        let c = t.matmul(a, b).unwrap();
        assert_eq!(t.value(c), &[3., 4.]);
    }

    #[test]
    fn row_times_column() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::new(vec![1, 2], vec![1., 2.]).unwrap(), false);
        let b = t.leaf(Tensor::new(vec![2, 1], vec![3., 4.]).unwrap(), false);
        let c = t.matmul(a, b).unwrap();
        assert_eq!(t.shape(c), &[1, 1]);
        assert_eq!(t.value(c), &[11.]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut t = Tape::new();
        let a = t.zeros(&[2, 3]);
        let b = t.zeros(&[2, 3]);
        let err = t.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3] vs [2, 3]"), "{err}");
    }

    #[test]
    fn scalar_unaries() {
        let mut t = Tape::new();
        let z = t.leaf(Tensor::scalar(0.0), false);
        let th = t.tanh(z);
        assert_eq!(t.value(th), &[0.0]);
        let one = t.leaf(Tensor::scalar(1.0), false);
        let s = t.sigmoid(one);
        let expected = 1.0 / (1.0 + (-1.0f64).exp());
        assert!((t.value(s)[0] as f64 - expected).abs() < 1e-7);
        assert!((t.value(s)[0] - 0.731_058_6).abs() < 1e-6);
        let pair = t.leaf(Tensor::row(vec![0.0, 0.0]), false);
        let sm = t.softmax(pair).unwrap();
        assert_eq!(t.value(sm), &[0.5, 0.5]);
    }

    #[test]
    fn broadcast_rejects_non_trailing_shapes() {
        let mut t = Tape::new();
        let a = t.zeros(&[3, 4]);
        let b = t.zeros(&[3]);
        assert!(matches!(t.add(a, b), Err(Error::Shape { .. })));
        let c = t.zeros(&[1, 4]);
        assert!(t.add(a, c).is_ok());
        let d = t.zeros(&[4]);
        assert!(t.mul(a, d).is_ok());
    }

    #[test]
    fn elementwise_arity_is_checked() {
        let mut t = Tape::new();
        let a = t.zeros(&[2]);
        assert!(t.elementwise(ElementwiseOp::Add, a, None).is_err());
        assert!(t.elementwise(ElementwiseOp::Tanh, a, Some(a)).is_err());
        assert!(t.elementwise(ElementwiseOp::Exp, a, None).is_ok());
    }

    #[test]
    fn square_gradient() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::scalar(3.0), true);
        let y = t.mul(x, x).unwrap();
        t.backward(y).unwrap();
        assert_eq!(t.grad(x).unwrap().as_ref(), &[6.0]);
    }

    #[test]
    fn disconnected_grad_stays_zero() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::scalar(3.0), true);
        let unused = t.leaf(Tensor::row(vec![1.0, 2.0]), true);
        let y = t.mul(x, x).unwrap();
        t.backward(y).unwrap();
        assert_eq!(t.grad(unused).unwrap().as_ref(), &[0.0, 0.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::row(vec![1.0, 2.0]), true);
        assert!(matches!(t.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn inference_tape_records_no_gradients() {
        let mut t = Tape::inference();
        let w = Tensor::scalar(2.0);
        let p = t.param(&w);
        let y = t.mul(p, p).unwrap();
        assert!(!t.requires_grad(y));
        t.backward(y).unwrap();
        assert!(t.grad(p).is_none());
    }

    #[test]
    fn conv_identity_kernel() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::new(vec![1, 4, 4], vec![1.0; 16]).unwrap(), false);
        let k = t.leaf(Tensor::new(vec![1, 1, 1, 1], vec![1.0]).unwrap(), false);
        let y = t.conv2d(x, k, None, 1, 0).unwrap();
        assert_eq!(t.shape(y), &[1, 4, 4]);
        assert!(t.value(y).iter().all(|&v| v == 1.0));
    }

    #[test]
    fn conv_valid_average_is_mean() {
        let mut t = Tape::new();
        let data: Vec<f32> = (1..=9).map(|v| v as f32).collect();
        let x = t.leaf(Tensor::new(vec![1, 3, 3], data).unwrap(), false);
        let k = t.leaf(Tensor::new(vec![1, 1, 3, 3], vec![1.0 / 9.0; 9]).unwrap(), false);
        let y = t.conv2d(x, k, None, 1, 0).unwrap();
        assert_eq!(t.shape(y), &[1, 1, 1]);
        assert!((t.value(y)[0] - 5.0).abs() < 1e-6);
    }

    #[test]
    fn conv_kernel_larger_than_input_errors() {
        let mut t = Tape::new();
        let x = t.zeros(&[1, 2, 2]);
        let k = t.zeros(&[1, 1, 3, 3]);
        assert!(matches!(t.conv2d(x, k, None, 1, 0), Err(Error::Shape { .. })));
    }

    #[test]
    fn maxpool_cases() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::new(vec![1, 2, 2], vec![1., 2., 3., 4.]).unwrap(), false);
        let y = t.maxpool2d(x).unwrap();
        assert_eq!(t.value(y), &[4.0]);
        let c = t.leaf(Tensor::new(vec![2, 4, 6], vec![7.0; 48]).unwrap(), false);
        let p = t.maxpool2d(c).unwrap();
        assert_eq!(t.shape(p), &[2, 2, 3]);
        assert!(t.value(p).iter().all(|&v| v == 7.0));
        let small = t.zeros(&[1, 1, 4]);
        assert!(t.maxpool2d(small).is_err());
    }

    #[test]
    fn maxpool_ties_route_to_first() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::new(vec![1, 2, 2], vec![5., 5., 5., 5.]).unwrap(), true);
        let y = t.maxpool2d(x).unwrap();
        let s = t.sum(y);
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap().as_ref(), &[1., 0., 0., 0.]);
    }

    #[test]
    fn transpose01_roundtrip() {
        let mut t = Tape::new();
        let data: Vec<f32> = (0..24).map(|v| v as f32).collect();
        let x = t.leaf(Tensor::new(vec![2, 3, 4], data.clone()).unwrap(), false);
        let y = t.transpose01(x).unwrap();
        assert_eq!(t.shape(y), &[3, 2, 4]);
        assert_eq!(&t.value(y)[4..8], &data[12..16]);
        let z = t.transpose01(y).unwrap();
        assert_eq!(t.value(z), &data[..]);
    }
}
