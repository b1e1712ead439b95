//! Single-use computation graph recording forward primitives for reverse-mode
//! differentiation.
//!
//! A [`Graph`] is built fresh for every forward pass. Nodes are appended in
//! evaluation order, so a reverse sweep over the node list is a valid
//! topological order for the backward pass. Parameters enter the graph through
//! [`Graph::param`], which hands out one shared leaf per parameter: using a
//! weight in two branches (clear and adverse, say) accumulates both path
//! gradients into that single leaf.

use std::collections::HashMap;

use crate::error::{AutodiffError, Result};
use crate::kernels;
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    BiasAdd { x: Var, bias: Var, axis: usize },
    MatMul(Var, Var),
    Transpose(Var),
    Conv3x3 { x: Var, w: Var, b: Var, stride: usize, cols: Vec<f64> },
    Upsample { x: Var, factor: usize },
    Relu(Var),
    Softmax { x: Var, axis: usize },
    LogSoftmax { x: Var, axis: usize },
    Log(Var),
    Exp(Var),
    Sum(Var),
    Mean(Var),
    Concat { parts: Vec<Var>, axis: usize },
    L2Norm(Var),
    Dot(Var, Var),
    Reshape(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    param_leaves: HashMap<ParamId, Var>,
    consumed: bool,
    frozen: bool,
}

/// Gradients produced by one backward pass.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    params: Vec<(ParamId, Var)>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`, or `None` when no gradient
    /// reached it (constants, detached values, unconnected nodes).
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient for every parameter that entered the graph. Parameters that
    /// entered but were not reachable from the loss get an all-zero gradient.
    pub fn param_grads(&self) -> impl Iterator<Item = (ParamId, Option<&[f64]>)> + '_ {
        self.params.iter().map(|&(id, v)| (id, self.get(v)))
    }
}

fn mismatch(op: &'static str, a: &[usize], b: &[usize]) -> AutodiffError {
    AutodiffError::ShapeMismatch {
        op,
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    }
}

fn invalid(op: &'static str, msg: impl Into<String>) -> AutodiffError {
    AutodiffError::InvalidArgument {
        op,
        msg: msg.into(),
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, contrib: Vec<f64>) {
    match slot {
        Some(g) => g.iter_mut().zip(contrib).for_each(|(a, b)| *a += b),
        None => *slot = Some(contrib),
    }
}

fn accumulate_with(slot: &mut Option<Vec<f64>>, len: usize, f: impl FnOnce(&mut [f64])) {
    let g = slot.get_or_insert_with(|| vec![0.0; len]);
    f(g);
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// A graph for inference: parameters enter as constants, so nothing is
    /// retained for a backward pass.
    pub fn inference() -> Self {
        Self {
            frozen: true,
            ..Self::default()
        }
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

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A value that never receives gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A free leaf that receives gradient (used for inputs under test).
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf for a stored parameter. Repeated calls with the same id return the
    /// same node, so every use of a parameter shares one gradient slot.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.param_leaves.get(&id) {
            return v;
        }
        let v = self.push(store.value(id).clone(), Op::Leaf, !self.frozen);
        self.param_leaves.insert(id, v);
        v
    }

    /// Copy of `v` cut off from the graph: gradient never flows through it.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.nodes[v.0].value.clone();
        self.constant(t)
    }

    fn binary_same_shape(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.shape() != tb.shape() {
            return Err(mismatch(op, ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    fn unary(&self, x: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let t = &self.nodes[x.0].value;
        Tensor::new(t.shape().to_vec(), t.data().iter().map(|&v| f(v)).collect())
            .expect("unary op preserves shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary_same_shape("add", a, b, |x, y| x + y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary_same_shape("sub", a, b, |x, y| x - y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary_same_shape("mul", a, b, |x, y| x * y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::Mul(a, b), rg))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary_same_shape("div", a, b, |x, y| x / y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::Div(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let t = self.unary(x, |v| v * s);
        let rg = self.rg(&[x]);
        self.push(t, Op::Scale(x, s), rg)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let t = self.unary(x, |v| v + c);
        let rg = self.rg(&[x]);
        self.push(t, Op::AddScalar(x), rg)
    }

    /// Adds `bias[j]` to every element whose index along `axis` is `j`.
    pub fn bias_add(&mut self, x: Var, bias: Var, axis: usize) -> Result<Var> {
        let (tx, tb) = (&self.nodes[x.0].value, &self.nodes[bias.0].value);
        if axis >= tx.shape().len() || tb.len() != tx.shape()[axis] {
            return Err(mismatch("bias_add", tx.shape(), tb.shape()));
        }
        let (outer, n, inner) = kernels::split_axis(tx.shape(), axis);
        let mut data = tx.data().to_vec();
        for o in 0..outer {
            for (j, &b) in tb.data().iter().enumerate() {
                let start = (o * n + j) * inner;
                data[start..start + inner].iter_mut().for_each(|v| *v += b);
            }
        }
        let t = Tensor::new(tx.shape().to_vec(), data)?;
        let rg = self.rg(&[x, bias]);
        Ok(self.push(t, Op::BiasAdd { x, bias, axis }, rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(mismatch("matmul", ta.shape(), tb.shape()));
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let mut out = vec![0.0; m * n];
        kernels::gemm(m, k, n, ta.data(), false, tb.data(), false, 0.0, &mut out);
        let t = Tensor::new(vec![m, n], out)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let tx = &self.nodes[x.0].value;
        if tx.shape().len() != 2 {
            return Err(invalid("transpose", format!("expected a matrix, got {:?}", tx.shape())));
        }
        let (r, c) = (tx.shape()[0], tx.shape()[1]);
        let t = Tensor::new(vec![c, r], transpose_data(tx.data(), r, c))?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::Transpose(x), rg))
    }

    /// 3×3 convolution with zero padding 1: `x` is `C×H×W`, `w` is `O×C×3×3`,
    /// `b` has `O` entries. Stride 1 keeps the spatial size; stride 2 halves it
    /// (rounding up).
    pub fn conv3x3(&mut self, x: Var, w: Var, b: Var, stride: usize) -> Result<Var> {
        let (tx, tw, tb) = (
            &self.nodes[x.0].value,
            &self.nodes[w.0].value,
            &self.nodes[b.0].value,
        );
        if stride == 0 {
            return Err(invalid("conv3x3", "stride must be positive"));
        }
        let xs = tx.shape();
        let ws = tw.shape();
        if xs.len() != 3 || ws.len() != 4 || ws[1] != xs[0] || ws[2] != 3 || ws[3] != 3 {
            return Err(mismatch("conv3x3", xs, ws));
        }
        if tb.len() != ws[0] {
            return Err(mismatch("conv3x3", ws, tb.shape()));
        }
        let (c, h, wd) = (xs[0], xs[1], xs[2]);
        let o = ws[0];
        let (ho, wo) = (kernels::conv_out(h, stride), kernels::conv_out(wd, stride));
        let cols = kernels::im2col(tx.data(), c, h, wd, stride);
        let plane = ho * wo;
        let mut out = vec![0.0; o * plane];
        for (oc, &bv) in tb.data().iter().enumerate() {
            out[oc * plane..(oc + 1) * plane].fill(bv);
        }
        kernels::gemm(o, c * 9, plane, tw.data(), false, &cols, false, 1.0, &mut out);
        let t = Tensor::new(vec![o, ho, wo], out)?;
        let rg = self.rg(&[x, w, b]);
        let cols = if rg { cols } else { Vec::new() };
        Ok(self.push(t, Op::Conv3x3 { x, w, b, stride, cols }, rg))
    }

    /// Bilinear upsampling of a `C×H×W` map by an integer factor.
    pub fn upsample(&mut self, x: Var, factor: usize) -> Result<Var> {
        let tx = &self.nodes[x.0].value;
        if tx.shape().len() != 3 || factor == 0 {
            return Err(invalid(
                "upsample",
                format!("expected C×H×W and factor ≥ 1, got {:?} ×{factor}", tx.shape()),
            ));
        }
        let (c, h, w) = (tx.shape()[0], tx.shape()[1], tx.shape()[2]);
        let t = Tensor::new(
            vec![c, h * factor, w * factor],
            kernels::upsample(tx.data(), c, h, w, factor),
        )?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::Upsample { x, factor }, rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.unary(x, |v| if v > 0.0 { v } else { 0.0 });
        let rg = self.rg(&[x]);
        self.push(t, Op::Relu(x), rg)
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = self.log_softmax_value("softmax", x, axis)?;
        let t = Tensor::new(t.shape().to_vec(), t.data().iter().map(|v| v.exp()).collect())?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::Softmax { x, axis }, rg))
    }

    pub fn log_softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = self.log_softmax_value("log_softmax", x, axis)?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::LogSoftmax { x, axis }, rg))
    }

    fn log_softmax_value(&self, op: &'static str, x: Var, axis: usize) -> Result<Tensor> {
        let tx = &self.nodes[x.0].value;
        if axis >= tx.shape().len() {
            return Err(invalid(op, format!("axis {axis} out of range for {:?}", tx.shape())));
        }
        let (outer, n, inner) = kernels::split_axis(tx.shape(), axis);
        let src = tx.data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * n + j) * inner + i;
                let max = (0..n).map(|j| src[idx(j)]).fold(f64::NEG_INFINITY, f64::max);
                let lse = max + (0..n).map(|j| (src[idx(j)] - max).exp()).sum::<f64>().ln();
                for j in 0..n {
                    out[idx(j)] = src[idx(j)] - lse;
                }
            }
        }
        Tensor::new(tx.shape().to_vec(), out)
    }

    pub fn ln(&mut self, x: Var) -> Var {
        let t = self.unary(x, f64::ln);
        let rg = self.rg(&[x]);
        self.push(t, Op::Log(x), rg)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let t = self.unary(x, f64::exp);
        let rg = self.rg(&[x]);
        self.push(t, Op::Exp(x), rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.nodes[x.0].value.data().iter().sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = &self.nodes[x.0].value;
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Mean(x), rg)
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| invalid("concat", "no inputs"))?;
        let base = self.nodes[first.0].value.shape().to_vec();
        if axis >= base.len() {
            return Err(invalid("concat", format!("axis {axis} out of range for {base:?}")));
        }
        let mut total = 0;
        for p in parts {
            let s = self.nodes[p.0].value.shape();
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(mismatch("concat", &base, s));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = kernels::split_axis(&shape, axis);
        let mut data = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for p in parts {
                let t = &self.nodes[p.0].value;
                let chunk = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let t = Tensor::new(shape, data)?;
        let rg = self.rg(parts);
        Ok(self.push(
            t,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            rg,
        ))
    }

    /// Euclidean norm of all entries.
    pub fn l2_norm(&mut self, x: Var) -> Var {
        let n = self.nodes[x.0].value.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(n), Op::L2Norm(x), rg)
    }

    /// Inner product of two equally sized tensors (flattened).
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.len() != tb.len() {
            return Err(mismatch("dot", ta.shape(), tb.shape()));
        }
        let s = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).sum();
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::scalar(s), Op::Dot(a, b), rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.nodes[x.0].value.clone().reshape(shape)?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::Reshape(x), rg))
    }

    /// Runs the reverse sweep from a scalar `loss`.
    ///
    /// The graph can be swept once; a second call fails with
    /// [`AutodiffError::GraphConsumed`].
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(AutodiffError::GraphConsumed);
        }
        let lt = &self.nodes[loss.0].value;
        if lt.len() != 1 {
            return Err(AutodiffError::NonScalarLoss(lt.shape().to_vec()));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if node.requires_grad {
                self.backprop(node, &g, &mut grads);
            }
            grads[i] = Some(g);
        }

        let mut params: Vec<(ParamId, Var)> =
            self.param_leaves.iter().map(|(&id, &v)| (id, v)).collect();
        params.sort_by_key(|&(id, _)| id);
        for &(_, v) in &params {
            if grads[v.0].is_none() {
                grads[v.0] = Some(vec![0.0; self.nodes[v.0].value.len()]);
            }
        }
        Ok(Gradients { grads, params })
    }

    fn backprop(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let live = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if live(*a) {
                    accumulate(&mut grads[a.0], g.to_vec());
                }
                if live(*b) {
                    accumulate(&mut grads[b.0], g.to_vec());
                }
            }
            Op::Sub(a, b) => {
                if live(*a) {
                    accumulate(&mut grads[a.0], g.to_vec());
                }
                if live(*b) {
                    accumulate(&mut grads[b.0], g.iter().map(|v| -v).collect());
                }
            }
            Op::Mul(a, b) => {
                if live(*a) {
                    let c = g.iter().zip(val(*b).data()).map(|(g, y)| g * y).collect();
                    accumulate(&mut grads[a.0], c);
                }
                if live(*b) {
                    let c = g.iter().zip(val(*a).data()).map(|(g, x)| g * x).collect();
                    accumulate(&mut grads[b.0], c);
                }
            }
            Op::Div(a, b) => {
                let (ta, tb) = (val(*a).data(), val(*b).data());
                if live(*a) {
                    let c = g.iter().zip(tb).map(|(g, y)| g / y).collect();
                    accumulate(&mut grads[a.0], c);
                }
                if live(*b) {
                    let c = g
                        .iter()
                        .zip(ta.iter().zip(tb))
                        .map(|(g, (x, y))| -g * x / (y * y))
                        .collect();
                    accumulate(&mut grads[b.0], c);
                }
            }
            Op::Scale(x, s) => {
                accumulate(&mut grads[x.0], g.iter().map(|v| v * s).collect());
            }
            Op::AddScalar(x) | Op::Reshape(x) => {
                accumulate(&mut grads[x.0], g.to_vec());
            }
            Op::BiasAdd { x, bias, axis } => {
                if live(*x) {
                    accumulate(&mut grads[x.0], g.to_vec());
                }
                if live(*bias) {
                    let (outer, n, inner) = kernels::split_axis(val(*x).shape(), *axis);
                    accumulate_with(&mut grads[bias.0], n, |gb| {
                        for o in 0..outer {
                            for (j, slot) in gb.iter_mut().enumerate() {
                                let start = (o * n + j) * inner;
                                *slot += g[start..start + inner].iter().sum::<f64>();
                            }
                        }
                    });
                }
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                if live(*a) {
                    accumulate_with(&mut grads[a.0], m * k, |ga| {
                        kernels::gemm(m, n, k, g, false, tb.data(), true, 1.0, ga)
                    });
                }
                if live(*b) {
                    accumulate_with(&mut grads[b.0], k * n, |gb| {
                        kernels::gemm(k, m, n, ta.data(), true, g, false, 1.0, gb)
                    });
                }
            }
            Op::Transpose(x) => {
                let s = val(*x).shape();
                accumulate(&mut grads[x.0], transpose_data(g, s[1], s[0]));
            }
            Op::Conv3x3 {
                x,
                w,
                b,
                stride,
                cols,
            } => {
                let (tx, tw) = (val(*x), val(*w));
                let (c, h, wd) = (tx.shape()[0], tx.shape()[1], tx.shape()[2]);
                let o = tw.shape()[0];
                let plane = g.len() / o;
                if live(*w) {
                    accumulate_with(&mut grads[w.0], tw.len(), |gw| {
                        kernels::gemm(o, plane, c * 9, g, false, cols, true, 1.0, gw)
                    });
                }
                if live(*b) {
                    accumulate_with(&mut grads[b.0], o, |gb| {
                        for (oc, slot) in gb.iter_mut().enumerate() {
                            *slot += g[oc * plane..(oc + 1) * plane].iter().sum::<f64>();
                        }
                    });
                }
                if live(*x) {
                    let mut gcols = vec![0.0; c * 9 * plane];
                    kernels::gemm(c * 9, o, plane, tw.data(), true, g, false, 0.0, &mut gcols);
                    accumulate(&mut grads[x.0], kernels::col2im(&gcols, c, h, wd, *stride));
                }
            }
            Op::Upsample { x, factor } => {
                let s = val(*x).shape();
                let gx = kernels::upsample_backward(g, s[0], s[1], s[2], *factor);
                accumulate(&mut grads[x.0], gx);
            }
            Op::Relu(x) => {
                let c = g
                    .iter()
                    .zip(val(*x).data())
                    .map(|(g, &v)| if v > 0.0 { *g } else { 0.0 })
                    .collect();
                accumulate(&mut grads[x.0], c);
            }
            Op::Softmax { x, axis } => {
                let y = node.value.data();
                let (outer, n, inner) = kernels::split_axis(node.value.shape(), *axis);
                let mut gx = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |j: usize| (o * n + j) * inner + i;
                        let dotp: f64 = (0..n).map(|j| g[idx(j)] * y[idx(j)]).sum();
                        for j in 0..n {
                            gx[idx(j)] = y[idx(j)] * (g[idx(j)] - dotp);
                        }
                    }
                }
                accumulate(&mut grads[x.0], gx);
            }
            Op::LogSoftmax { x, axis } => {
                let y = node.value.data();
                let (outer, n, inner) = kernels::split_axis(node.value.shape(), *axis);
                let mut gx = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |j: usize| (o * n + j) * inner + i;
                        let gsum: f64 = (0..n).map(|j| g[idx(j)]).sum();
                        for j in 0..n {
                            gx[idx(j)] = g[idx(j)] - y[idx(j)].exp() * gsum;
                        }
                    }
                }
                accumulate(&mut grads[x.0], gx);
            }
            Op::Log(x) => {
                let c = g.iter().zip(val(*x).data()).map(|(g, v)| g / v).collect();
                accumulate(&mut grads[x.0], c);
            }
            Op::Exp(x) => {
                let c = g.iter().zip(node.value.data()).map(|(g, y)| g * y).collect();
                accumulate(&mut grads[x.0], c);
            }
            Op::Sum(x) => {
                accumulate(&mut grads[x.0], vec![g[0]; val(*x).len()]);
            }
            Op::Mean(x) => {
                let n = val(*x).len();
                accumulate(&mut grads[x.0], vec![g[0] / n as f64; n]);
            }
            Op::Concat { parts, axis } => {
                let (outer, total, inner) = kernels::split_axis(node.value.shape(), *axis);
                let mut offset = 0;
                for p in parts {
                    let len_p = val(*p).shape()[*axis];
                    if live(*p) {
                        let chunk = len_p * inner;
                        let mut gp = Vec::with_capacity(outer * chunk);
                        for o in 0..outer {
                            let start = o * total * inner + offset * inner;
                            gp.extend_from_slice(&g[start..start + chunk]);
                        }
                        accumulate(&mut grads[p.0], gp);
                    }
                    offset += len_p;
                }
            }
            Op::L2Norm(x) => {
                let n = node.value.item();
                let c = if n > 0.0 {
                    val(*x).data().iter().map(|v| g[0] * v / n).collect()
                } else {
                    vec![0.0; val(*x).len()]
                };
                accumulate(&mut grads[x.0], c);
            }
            Op::Dot(a, b) => {
                if live(*a) {
                    accumulate(&mut grads[a.0], val(*b).data().iter().map(|v| g[0] * v).collect());
                }
                if live(*b) {
                    accumulate(&mut grads[b.0], val(*a).data().iter().map(|v| g[0] * v).collect());
                }
            }
        }
    }
}

fn transpose_data(src: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; src.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = src[r * cols + c];
        }
    }
    out
}
