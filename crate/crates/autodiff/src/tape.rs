//! Define-by-run reverse-mode tape.
//!
//! Every operation appends a node holding its output value and the handles of
//! its inputs. Nodes are appended in evaluation order, so walking the node list
//! backwards from the root visits every node after all of its consumers.

use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use crate::error::{AutodiffError, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{gemm, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Matmul(Var, Var),
    Concat { inputs: Vec<Var>, axis: usize },
    Slice { input: Var, axis: usize, start: usize },
    Sum(Var),
    SumAxis { input: Var, axis: usize },
    Mean(Var),
    Tanh(Var),
    Sigmoid(Var),
    Elu(Var),
    Softplus(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Softmax(Var),
    Broadcast { input: Var, map: Vec<usize> },
    Reshape(Var),
    Scale(Var, f64),
    AddScalar(Var),
    ClampMin(Var, f64),
}

#[derive(Debug)]
struct Node {
    value: Arc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Records operations for one forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    bindings: HashMap<(u64, ParamId), Var>,
    frozen: HashSet<u64>,
    bound: Vec<(u64, ParamId, Var)>,
}

/// Gradients of a scalar root with respect to every node that requires grad.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient buffer for `var`, or `None` if no gradient reached it.
    pub fn raw(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    /// Gradient of `var` shaped like its value; zeros when unreached.
    pub fn wrt(&self, tape: &Tape, var: Var) -> Tensor {
        let shape = tape.shape(var).to_vec();
        match self.raw(var) {
            Some(g) => Tensor::from_parts(shape, g.to_vec()),
            None => Tensor::zeros(&shape),
        }
    }
}

fn binary_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let n = a.len().max(b.len());
    let mut out = vec![0; n];
    for i in 0..n {
        let da = if i + a.len() >= n { a[i + a.len() - n] } else { 1 };
        let db = if i + b.len() >= n { b[i + b.len() - n] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => {
                return Err(AutodiffError::ShapeMismatch {
                    op,
                    lhs: a.to_vec(),
                    rhs: b.to_vec(),
                })
            }
        };
    }
    Ok(out)
}

/// Flat source index for every flat index of `dst` under right-aligned broadcasting.
fn broadcast_map(src: &[usize], dst: &[usize]) -> Vec<usize> {
    let n = dst.len();
    let offset = n - src.len();
    let mut src_strides = vec![0usize; n];
    let mut stride = 1;
    for i in (0..src.len()).rev() {
        src_strides[i + offset] = if src[i] == 1 { 0 } else { stride };
        stride *= src[i];
    }
    let total: usize = dst.iter().product();
    let mut map = Vec::with_capacity(total);
    let mut idx = vec![0usize; n];
    let mut cur = 0usize;
    for _ in 0..total {
        map.push(cur);
        for d in (0..n).rev() {
            idx[d] += 1;
            cur += src_strides[d];
            if idx[d] < dst[d] {
                break;
            }
            cur -= src_strides[d] * idx[d];
            idx[d] = 0;
        }
    }
    map
}

fn outer_inner(shape: &[usize], axis: usize) -> (usize, usize) {
    (
        shape[..axis].iter().product(),
        shape[axis + 1..].iter().product(),
    )
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

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    pub fn data(&self, var: Var) -> &[f64] {
        self.nodes[var.0].value.data()
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    /// Scalar value of a single-element node.
    pub fn item(&self, var: Var) -> f64 {
        self.nodes[var.0].value.data()[0]
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.push_shared(Arc::new(value), op, requires_grad)
    }

    fn push_shared(&mut self, value: Arc<Tensor>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf input that receives a gradient.
    pub fn var(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf input without gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Copy of `x` cut off from the gradient flow.
    pub fn detach(&mut self, x: Var) -> Var {
        let value = Arc::clone(&self.nodes[x.0].value);
        self.push_shared(value, Op::Leaf, false)
    }

    /// Treat every parameter of `store` as a constant on this tape.
    pub fn freeze(&mut self, store: &ParamStore) {
        self.frozen.insert(store.uid());
    }

    /// Leaf bound to a stored parameter. Repeated calls return the same node,
    /// so recurrent unrolls accumulate into one gradient.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let key = (store.uid(), id);
        if let Some(&v) = self.bindings.get(&key) {
            return v;
        }
        let trainable = !self.frozen.contains(&store.uid());
        let v = self.push_shared(store.shared_value(id), Op::Leaf, trainable);
        self.bindings.insert(key, v);
        if trainable {
            self.bound.push((store.uid(), id, v));
        }
        v
    }

    /// Trainable parameters of `store` bound on this tape.
    pub fn bound_params(&self, store: &ParamStore) -> impl Iterator<Item = (ParamId, Var)> + '_ {
        let uid = store.uid();
        self.bound
            .iter()
            .filter(move |(u, _, _)| *u == uid)
            .map(|&(_, id, v)| (id, v))
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let value = self.nodes[x.0].value.map(f);
        let rg = self.rg(&[x]);
        self.push(value, op, rg)
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        make: impl Fn(Var, Var) -> Op,
    ) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let (a, b) = if sa == sb {
            (a, b)
        } else {
            let out = binary_shape(name, &sa, &sb)?;
            let a = if sa == out { a } else { self.broadcast(a, &out)? };
            let b = if sb == out { b } else { self.broadcast(b, &out)? };
            (a, b)
        };
        let va = &self.nodes[a.0].value;
        let vb = &self.nodes[b.0].value;
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::from_parts(va.shape().to_vec(), data);
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, make(a, b), rg))
    }

    /// Elementwise sum with right-aligned broadcasting.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul)
    }

    /// `[m, k] @ [k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(AutodiffError::ShapeMismatch {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.data(a), false, self.data(b), false, &mut out, 0.0);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::Matmul(a, b), rg))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs.first().ok_or_else(|| AutodiffError::InvalidArgument {
            op: "concat",
            shape: Vec::new(),
            reason: "no inputs".into(),
        })?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(AutodiffError::InvalidArgument {
                op: "concat",
                shape: base,
                reason: format!("axis {axis} out of range"),
            });
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let ok = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (x, y))| i == axis || x == y);
            if !ok {
                return Err(AutodiffError::ShapeMismatch {
                    op: "concat",
                    lhs: base,
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let (outer, inner) = outer_inner(&base, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let chunk = self.shape(v)[axis] * inner;
                data.extend_from_slice(&self.data(v)[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let rg = self.rg(inputs);
        Ok(self.push(
            Tensor::from_parts(shape, data),
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            rg,
        ))
    }

    /// Elements `start..end` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || start > end || end > shape[axis] {
            return Err(AutodiffError::InvalidArgument {
                op: "slice",
                shape,
                reason: format!("range {start}..{end} on axis {axis}"),
            });
        }
        let (outer, inner) = outer_inner(&shape, axis);
        let src = self.data(x);
        let width = (end - start) * inner;
        let row = shape[axis] * inner;
        let mut data = Vec::with_capacity(outer * width);
        for o in 0..outer {
            let off = o * row + start * inner;
            data.extend_from_slice(&src[off..off + width]);
        }
        let mut out = shape;
        out[axis] = end - start;
        let rg = self.rg(&[x]);
        Ok(self.push(
            Tensor::from_parts(out, data),
            Op::Slice {
                input: x,
                axis,
                start,
            },
            rg,
        ))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.data(x).iter().sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    /// Mean of all elements, as a scalar.
    pub fn mean(&mut self, x: Var) -> Var {
        let d = self.data(x);
        let s = d.iter().sum::<f64>() / d.len() as f64;
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Mean(x), rg)
    }

    /// Sum over `axis`, removing it.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(AutodiffError::InvalidArgument {
                op: "sum_axis",
                shape,
                reason: format!("axis {axis} out of range"),
            });
        }
        let (outer, inner) = outer_inner(&shape, axis);
        let n = shape[axis];
        let src = self.data(x);
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for j in 0..n {
                let off = (o * n + j) * inner;
                for i in 0..inner {
                    data[o * inner + i] += src[off + i];
                }
            }
        }
        let mut out = shape;
        out.remove(axis);
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::from_parts(out, data), Op::SumAxis { input: x, axis }, rg))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    /// ELU with unit scale.
    pub fn elu(&mut self, x: Var) -> Var {
        self.unary(x, |v| if v > 0.0 { v } else { v.exp_m1() }, Op::Elu(x))
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(x, softplus, Op::Softplus(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, f64::exp, Op::Exp(x))
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, f64::ln, Op::Log(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, |v| v * v, Op::Square(x))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |v| v * c, Op::Scale(x, c))
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.scale(x, -1.0)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |v| v + c, Op::AddScalar(x))
    }

    /// `max(x, floor)`; no gradient below the floor.
    pub fn clamp_min(&mut self, x: Var, floor: f64) -> Var {
        self.unary(x, |v| v.max(floor), Op::ClampMin(x, floor))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let c = *shape.last().ok_or_else(|| AutodiffError::InvalidArgument {
            op: "softmax",
            shape: shape.clone(),
            reason: "scalar input".into(),
        })?;
        let mut data = self.data(x).to_vec();
        if c > 0 {
            for row in data.chunks_mut(c) {
                softmax_in_place(row);
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::from_parts(shape, data), Op::Softmax(x), rg))
    }

    /// Broadcast `x` to `shape` (right-aligned, size-1 or missing dims expand).
    pub fn broadcast(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let src = self.shape(x).to_vec();
        let compatible = src.len() <= shape.len()
            && src
                .iter()
                .rev()
                .zip(shape.iter().rev())
                .all(|(&s, &d)| s == d || s == 1);
        if !compatible {
            return Err(AutodiffError::ShapeMismatch {
                op: "broadcast",
                lhs: src,
                rhs: shape.to_vec(),
            });
        }
        let map = broadcast_map(&src, shape);
        let s = self.data(x);
        let data = map.iter().map(|&i| s[i]).collect();
        let rg = self.rg(&[x]);
        Ok(self.push(
            Tensor::from_parts(shape.to_vec(), data),
            Op::Broadcast { input: x, map },
            rg,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).reshape(shape).map_err(|_| AutodiffError::ShapeMismatch {
            op: "reshape",
            lhs: self.shape(x).to_vec(),
            rhs: shape.to_vec(),
        })?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    /// Reverse pass from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let root_value = &self.nodes[root.0].value;
        if root_value.len() != 1 {
            return Err(AutodiffError::NonScalarRoot(root_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        if !self.nodes[root.0].requires_grad {
            return Ok(Gradients { grads });
        }
        grads[root.0] = Some(vec![1.0]);
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let out = node.value.data();
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.len()]);
            f(slot);
        };
        let elementwise = |x: Var, d: &dyn Fn(usize) -> f64, acc: &mut dyn FnMut(Var, &mut dyn FnMut(&mut [f64]))| {
            acc(x, &mut |s| {
                for (i, si) in s.iter_mut().enumerate() {
                    *si += g[i] * d(i);
                }
            })
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, &mut |s| s.iter_mut().zip(g).for_each(|(x, y)| *x += y));
                acc(*b, &mut |s| s.iter_mut().zip(g).for_each(|(x, y)| *x += y));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |s| s.iter_mut().zip(g).for_each(|(x, y)| *x += y));
                acc(*b, &mut |s| s.iter_mut().zip(g).for_each(|(x, y)| *x -= y));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.data(*a), self.data(*b));
                acc(*a, &mut |s| {
                    for i in 0..s.len() {
                        s[i] += g[i] * vb[i];
                    }
                });
                acc(*b, &mut |s| {
                    for i in 0..s.len() {
                        s[i] += g[i] * va[i];
                    }
                });
            }
            Op::Matmul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let (va, vb) = (self.data(*a), self.data(*b));
                // dA = G @ B^T, dB = A^T @ G
                acc(*a, &mut |s| gemm(m, n, k, g, false, vb, true, s, 1.0));
                acc(*b, &mut |s| gemm(k, m, n, va, true, g, false, s, 1.0));
            }
            Op::Concat { inputs, axis } => {
                let shape = node.value.shape();
                let (outer, inner) = outer_inner(shape, *axis);
                let total = shape[*axis] * inner;
                let mut offset = 0;
                for &v in inputs {
                    let chunk = self.shape(v)[*axis] * inner;
                    acc(v, &mut |s| {
                        for o in 0..outer {
                            let src = &g[o * total + offset..o * total + offset + chunk];
                            s[o * chunk..(o + 1) * chunk]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(x, y)| *x += y);
                        }
                    });
                    offset += chunk;
                }
            }
            Op::Slice { input, axis, start } => {
                let in_shape = self.shape(*input);
                let (outer, inner) = outer_inner(in_shape, *axis);
                let row = in_shape[*axis] * inner;
                let width = node.value.shape()[*axis] * inner;
                acc(*input, &mut |s| {
                    for o in 0..outer {
                        let off = o * row + start * inner;
                        s[off..off + width]
                            .iter_mut()
                            .zip(&g[o * width..(o + 1) * width])
                            .for_each(|(x, y)| *x += y);
                    }
                });
            }
            Op::Sum(x) => acc(*x, &mut |s| s.iter_mut().for_each(|v| *v += g[0])),
            Op::Mean(x) => {
                let n = self.nodes[x.0].value.len() as f64;
                acc(*x, &mut |s| s.iter_mut().for_each(|v| *v += g[0] / n));
            }
            Op::SumAxis { input, axis } => {
                let in_shape = self.shape(*input);
                let (outer, inner) = outer_inner(in_shape, *axis);
                let n = in_shape[*axis];
                acc(*input, &mut |s| {
                    for o in 0..outer {
                        for j in 0..n {
                            let off = (o * n + j) * inner;
                            for i in 0..inner {
                                s[off + i] += g[o * inner + i];
                            }
                        }
                    }
                });
            }
            Op::Tanh(x) => elementwise(*x, &|i| 1.0 - out[i] * out[i], &mut acc),
            Op::Sigmoid(x) => elementwise(*x, &|i| out[i] * (1.0 - out[i]), &mut acc),
            Op::Elu(x) => {
                let xv = self.data(*x);
                elementwise(*x, &|i| if xv[i] > 0.0 { 1.0 } else { out[i] + 1.0 }, &mut acc)
            }
            Op::Softplus(x) => {
                let xv = self.data(*x);
                elementwise(*x, &|i| sigmoid(xv[i]), &mut acc)
            }
            Op::Exp(x) => elementwise(*x, &|i| out[i], &mut acc),
            Op::Log(x) => {
                let xv = self.data(*x);
                elementwise(*x, &|i| 1.0 / xv[i], &mut acc)
            }
            Op::Square(x) => {
                let xv = self.data(*x);
                elementwise(*x, &|i| 2.0 * xv[i], &mut acc)
            }
            Op::Scale(x, c) => elementwise(*x, &|_| *c, &mut acc),
            Op::AddScalar(x) => elementwise(*x, &|_| 1.0, &mut acc),
            Op::ClampMin(x, floor) => {
                let xv = self.data(*x);
                elementwise(*x, &|i| if xv[i] >= *floor { 1.0 } else { 0.0 }, &mut acc)
            }
            Op::Softmax(x) => {
                let c = *node.value.shape().last().unwrap_or(&1);
                acc(*x, &mut |s| {
                    for ((srow, grow), yrow) in
                        s.chunks_mut(c).zip(g.chunks(c)).zip(out.chunks(c))
                    {
                        let dot: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            srow[j] += yrow[j] * (grow[j] - dot);
                        }
                    }
                });
            }
            Op::Broadcast { input, map } => acc(*input, &mut |s| {
                for (gi, &si) in g.iter().zip(map) {
                    s[si] += gi;
                }
            }),
            Op::Reshape(x) => acc(*x, &mut |s| s.iter_mut().zip(g).for_each(|(a, b)| *a += b)),
        }
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(v: f64) -> f64 {
    if v > 30.0 {
        v
    } else {
        v.max(0.0) + (-v.abs()).exp().ln_1p()
    }
}

pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_identity() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::matrix(&[vec![1.0, 2.0], vec![3.0, 4.0]]));
        let i = t.constant(Tensor::eye(2));
        let c = t.matmul(a, i).unwrap();
        assert_eq!(t.data(c), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn activations_at_zero() {
        let mut t = Tape::new();
        let z = t.constant(Tensor::scalar(0.0));
        let th = t.tanh(z);
        let sg = t.sigmoid(z);
        assert_eq!(t.item(th), 0.0);
        assert_eq!(t.item(sg), 0.5);
        let u = t.constant(Tensor::vector(vec![0.0; 3]));
        let s = t.softmax(u).unwrap();
        for &p in t.data(s) {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn square_gradient() {
        let mut t = Tape::new();
        let x = t.var(Tensor::scalar(3.0));
        let y = t.mul(x, x).unwrap();
        let g = t.backward(y).unwrap();
        assert_eq!(g.wrt(&t, x).item(), Some(6.0));

        let mut t = Tape::new();
        let x = t.var(Tensor::scalar(0.0));
        let y = t.tanh(x);
        let g = t.backward(y).unwrap();
        assert_eq!(g.wrt(&t, x).item(), Some(1.0));
    }

    #[test]
    fn fan_out_accumulates() {
        let mut t = Tape::new();
        let x = t.var(Tensor::scalar(1.5));
        let y = t.add(x, x).unwrap();
        let g = t.backward(y).unwrap();
        assert_eq!(g.wrt(&t, x).item(), Some(2.0));
    }

    #[test]
    fn rejects_bad_shapes() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::zeros(&[2, 3]));
        let b = t.constant(Tensor::zeros(&[2, 3]));
        let err = t.matmul(a, b).unwrap_err();
        assert_eq!(
            err.to_string(),
            "matmul: incompatible shapes [2, 3] and [2, 3]"
        );
        let c = t.constant(Tensor::zeros(&[4]));
        assert!(t.add(a, c).is_err());
        let d = t.constant(Tensor::zeros(&[3, 3]));
        assert!(t.concat(&[a, d], 1).is_err());
        assert!(t.concat(&[a, d], 0).is_ok());
        let v = t.constant(Tensor::zeros(&[2, 2]));
        assert!(matches!(t.backward(v), Err(AutodiffError::NonScalarRoot(_))));
    }

    #[test]
    fn broadcasting_binary_ops() {
        let mut t = Tape::new();
        let x = t.var(Tensor::matrix(&[vec![1.0, 2.0], vec![3.0, 4.0]]));
        let b = t.var(Tensor::vector(vec![10.0, 20.0]));
        let m = t.var(Tensor::matrix(&[vec![1.0], vec![0.0]]));
        let y = t.add(x, b).unwrap();
        assert_eq!(t.data(y), &[11.0, 22.0, 13.0, 24.0]);
        let z = t.mul(y, m).unwrap();
        assert_eq!(t.data(z), &[11.0, 22.0, 0.0, 0.0]);
        let s = t.sum(z);
        let g = t.backward(s).unwrap();
        assert_eq!(g.wrt(&t, b).data(), &[1.0, 1.0]);
        assert_eq!(g.wrt(&t, m).data(), &[33.0, 37.0]);
    }

    #[test]
    fn detach_blocks_gradient() {
        let mut t = Tape::new();
        let x = t.var(Tensor::scalar(2.0));
        let d = t.detach(x);
        let y = t.mul(x, d).unwrap();
        let g = t.backward(y).unwrap();
        assert_eq!(g.wrt(&t, x).item(), Some(2.0));
    }
}
