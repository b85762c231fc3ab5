//! Define-by-run computation graph with reverse-mode differentiation.
//!
//! Every operation evaluates eagerly and appends a node holding its output,
//! so node ids are always in topological order. [`Graph::backward`] walks the
//! nodes in reverse, accumulating adjoints into per-node buffers.

use std::collections::BTreeMap;
use std::sync::Arc;

use super::tensor::{axis_split, gemm, Tensor};
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnaryKind {
    Tanh,
    Sigmoid,
    Relu,
    Exp,
    Log,
    Neg,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceKind {
    Max,
    Sum,
    Mean,
}

/// Probabilities below this are clamped before the log in [`Graph::nll`].
pub const PROB_FLOOR: f64 = 1e-12;

enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    BatchMatMul(NodeId, NodeId),
    Transpose(NodeId),
    Unary(UnaryKind, NodeId),
    Map {
        x: NodeId,
        df: fn(f64) -> f64,
    },
    Binary {
        kind: BinaryKind,
        x: NodeId,
        y: NodeId,
    },
    Softmax {
        x: NodeId,
        axis: usize,
    },
    Reduce {
        kind: ReduceKind,
        x: NodeId,
        axis: usize,
        argmax: Vec<usize>,
    },
    Gather {
        table: NodeId,
        ids: Vec<usize>,
        skip_row0: bool,
    },
    Concat {
        inputs: Vec<NodeId>,
        axis: usize,
    },
    Narrow {
        x: NodeId,
        axis: usize,
        start: usize,
    },
    Reshape(NodeId),
    Unfold {
        x: NodeId,
        width: usize,
    },
    MaskFill {
        x: NodeId,
        keep: Vec<bool>,
    },
    Nll {
        probs: NodeId,
        labels: Vec<usize>,
    },
}

struct Node {
    value: Arc<Tensor>,
    op: Op,
    requires_grad: bool,
    param: bool,
}

/// Gradients of a scalar loss with respect to every parameter leaf.
#[derive(Debug, Clone)]
pub struct Gradients {
    by_leaf: BTreeMap<NodeId, Tensor>,
}

impl Gradients {
    pub fn get(&self, leaf: NodeId) -> Option<&Tensor> {
        self.by_leaf.get(&leaf)
    }

    pub fn take(&mut self, leaf: NodeId) -> Option<Tensor> {
        self.by_leaf.remove(&leaf)
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, &Tensor)> {
        self.by_leaf.iter().map(|(&k, v)| (k, v))
    }

    pub fn len(&self) -> usize {
        self.by_leaf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_leaf.is_empty()
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers a trainable leaf.
    pub fn param(&mut self, value: impl Into<Arc<Tensor>>) -> NodeId {
        self.push_leaf(value.into(), true)
    }

    /// Registers a leaf that receives no gradient.
    pub fn constant(&mut self, value: impl Into<Arc<Tensor>>) -> NodeId {
        self.push_leaf(value.into(), false)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    pub fn is_param(&self, id: NodeId) -> bool {
        self.nodes[id.0].param
    }

    pub fn params(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.param)
            .map(|(i, _)| NodeId(i))
    }

    fn push_leaf(&mut self, value: Arc<Tensor>, param: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: param,
            param,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[NodeId]) -> NodeId {
        let requires_grad = inputs.iter().any(|i| self.nodes[i.0].requires_grad);
        self.nodes.push(Node {
            value: Arc::new(value),
            op,
            requires_grad,
            param: false,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Matrix product of `[m×k]` and `[k×n]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k) = av.dims2()?;
        let (k2, n) = bv.dims2()?;
        if k != k2 {
            return Err(Error::Dimension(format!(
                "matmul of {:?} by {:?}: inner dimensions differ",
                av.shape(),
                bv.shape()
            )));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, av.data(), false, bv.data(), false, 0.0, &mut out);
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push(value, Op::MatMul(a, b), &[a, b]))
    }

    /// Batched product of `[B×m×k]` and `[B×k×n]`.
    pub fn batch_matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        let (&[ba, m, k], &[bb, k2, n]) = (av.shape(), bv.shape()) else {
            return Err(Error::Dimension(format!(
                "batch_matmul needs rank-3 operands, got {:?} and {:?}",
                av.shape(),
                bv.shape()
            )));
        };
        if ba != bb || k != k2 {
            return Err(Error::Dimension(format!(
                "batch_matmul of {:?} by {:?}: batch or inner dimensions differ",
                av.shape(),
                bv.shape()
            )));
        }
        let mut out = vec![0.0; ba * m * n];
        for i in 0..ba {
            gemm(
                m,
                k,
                n,
                &av.data()[i * m * k..],
                false,
                &bv.data()[i * k * n..],
                false,
                0.0,
                &mut out[i * m * n..],
            );
        }
        let value = Tensor::new(vec![ba, m, n], out)?;
        Ok(self.push(value, Op::BatchMatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = self.value(x);
        let (r, c) = xv.dims2()?;
        let value = Tensor::new(vec![c, r], transpose_data(xv.data(), r, c))?;
        Ok(self.push(value, Op::Transpose(x), &[x]))
    }

    pub fn unary(&mut self, kind: UnaryKind, x: NodeId) -> Result<NodeId> {
        let xv = self.value(x);
        if kind == UnaryKind::Log {
            if let Some(bad) = xv.data().iter().find(|&&v| v <= 0.0) {
                return Err(Error::Domain(format!("log of non-positive value {bad}")));
            }
        }
        let value = xv.map(|v| unary_forward(kind, v));
        Ok(self.push(value, Op::Unary(kind, x), &[x]))
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        self.unary(UnaryKind::Tanh, x).expect("tanh is total")
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        self.unary(UnaryKind::Sigmoid, x).expect("sigmoid is total")
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        self.unary(UnaryKind::Relu, x).expect("relu is total")
    }

    /// Elementwise `f` with a caller-supplied derivative `df`.
    pub fn map(&mut self, x: NodeId, f: fn(f64) -> f64, df: fn(f64) -> f64) -> NodeId {
        let value = self.value(x).map(f);
        self.push(value, Op::Map { x, df }, &[x])
    }

    /// Elementwise binary op. `y` may either match `x` exactly or match a
    /// trailing suffix of `x`'s shape (optionally with a leading 1), in which
    /// case it is repeated along the leading axes.
    pub fn binary(&mut self, kind: BinaryKind, x: NodeId, y: NodeId) -> Result<NodeId> {
        let (xv, yv) = (self.value(x), self.value(y));
        if !broadcastable(xv.shape(), yv.shape()) {
            return Err(Error::Dimension(format!(
                "cannot broadcast {:?} onto {:?}",
                yv.shape(),
                xv.shape()
            )));
        }
        let q = yv.numel();
        let ydata = yv.data();
        let data = xv
            .data()
            .iter()
            .enumerate()
            .map(|(i, &a)| {
                let b = ydata[i % q];
                match kind {
                    BinaryKind::Add => a + b,
                    BinaryKind::Sub => a - b,
                    BinaryKind::Mul => a * b,
                }
            })
            .collect();
        let value = Tensor::new(xv.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Binary { kind, x, y }, &[x, y]))
    }

    pub fn add(&mut self, x: NodeId, y: NodeId) -> Result<NodeId> {
        self.binary(BinaryKind::Add, x, y)
    }

    pub fn sub(&mut self, x: NodeId, y: NodeId) -> Result<NodeId> {
        self.binary(BinaryKind::Sub, x, y)
    }

    pub fn mul(&mut self, x: NodeId, y: NodeId) -> Result<NodeId> {
        self.binary(BinaryKind::Mul, x, y)
    }

    /// Max-shifted softmax along `axis`.
    pub fn softmax(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        let xv = self.value(x);
        check_axis(xv.shape(), axis)?;
        let (outer, n, inner) = axis_split(xv.shape(), axis);
        let src = xv.data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| o * n * inner + j * inner + i;
                let max = (0..n).map(|j| src[at(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for j in 0..n {
                    let e = (src[at(j)] - max).exp();
                    out[at(j)] = e;
                    total += e;
                }
                for j in 0..n {
                    out[at(j)] /= total;
                }
            }
        }
        let value = Tensor::new(xv.shape().to_vec(), out)?;
        Ok(self.push(value, Op::Softmax { x, axis }, &[x]))
    }

    /// Reduces along `axis`, removing it from the shape. Max routes its
    /// gradient to the first maximal element.
    pub fn reduce(&mut self, kind: ReduceKind, x: NodeId, axis: usize) -> Result<NodeId> {
        let xv = self.value(x);
        check_axis(xv.shape(), axis)?;
        let (outer, n, inner) = axis_split(xv.shape(), axis);
        let src = xv.data();
        let mut out = vec![0.0; outer * inner];
        let mut argmax = Vec::new();
        if kind == ReduceKind::Max {
            argmax = vec![0; outer * inner];
        }
        for o in 0..outer {
            for i in 0..inner {
                let base = o * n * inner + i;
                let slot = o * inner + i;
                match kind {
                    ReduceKind::Max => {
                        let mut best = base;
                        for j in 1..n {
                            let at = base + j * inner;
                            if src[at] > src[best] {
                                best = at;
                            }
                        }
                        out[slot] = src[best];
                        argmax[slot] = best;
                    }
                    ReduceKind::Sum | ReduceKind::Mean => {
                        let s: f64 = (0..n).map(|j| src[base + j * inner]).sum();
                        out[slot] = if kind == ReduceKind::Mean {
                            s / n as f64
                        } else {
                            s
                        };
                    }
                }
            }
        }
        let mut shape = xv.shape().to_vec();
        shape.remove(axis);
        let value = Tensor::new(shape, out)?;
        Ok(self.push(
            value,
            Op::Reduce {
                kind,
                x,
                axis,
                argmax,
            },
            &[x],
        ))
    }

    /// Sum of every element, as a scalar.
    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let n = self.value(x).numel();
        let flat = self.reshape(x, &[n]).expect("numel preserved");
        self.reduce(ReduceKind::Sum, flat, 0)
            .expect("axis 0 exists")
    }

    /// Looks up rows of `table` (`[V×d]`). The output has shape
    /// `lead ++ [d]`. When `skip_row0` is set, id 0 reads as a zero vector
    /// and row 0 receives no gradient.
    pub fn gather_rows(
        &mut self,
        table: NodeId,
        ids: &[usize],
        lead: &[usize],
        skip_row0: bool,
    ) -> Result<NodeId> {
        let tv = self.value(table);
        let (rows, d) = tv.dims2()?;
        if lead.iter().product::<usize>() != ids.len() {
            return Err(Error::Dimension(format!(
                "{} ids cannot fill leading shape {lead:?}",
                ids.len()
            )));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(Error::Contract(format!(
                "id {bad} out of range for table with {rows} rows"
            )));
        }
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            if skip_row0 && i == 0 {
                out.resize(out.len() + d, 0.0);
            } else {
                out.extend_from_slice(tv.row(i));
            }
        }
        let mut shape = lead.to_vec();
        shape.push(d);
        let value = Tensor::new(shape, out)?;
        let op = Op::Gather {
            table,
            ids: ids.to_vec(),
            skip_row0,
        };
        Ok(self.push(value, op, &[table]))
    }

    pub fn concat(&mut self, inputs: &[NodeId], axis: usize) -> Result<NodeId> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::Dimension("concat of zero tensors".into()))?;
        let base = self.value(*first).shape().to_vec();
        check_axis(&base, axis)?;
        let mut total = 0;
        for &id in inputs {
            let s = self.value(id).shape();
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::Dimension(format!(
                    "concat along axis {axis}: {s:?} incompatible with {base:?}"
                )));
            }
            total += s[axis];
        }
        let (outer, _, inner) = axis_split(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &id in inputs {
                let v = self.value(id);
                let chunk = v.shape()[axis] * inner;
                out.extend_from_slice(&v.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let value = Tensor::new(shape, out)?;
        Ok(self.push(
            value,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            inputs,
        ))
    }

    /// `len` consecutive entries along `axis` starting at `start`.
    pub fn narrow(&mut self, x: NodeId, axis: usize, start: usize, len: usize) -> Result<NodeId> {
        let xv = self.value(x);
        check_axis(xv.shape(), axis)?;
        let (outer, n, inner) = axis_split(xv.shape(), axis);
        if len == 0 || start + len > n {
            return Err(Error::Dimension(format!(
                "narrow [{start}, {}) out of bounds for axis {axis} of {:?}",
                start + len,
                xv.shape()
            )));
        }
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let from = o * n * inner + start * inner;
            out.extend_from_slice(&xv.data()[from..from + len * inner]);
        }
        let mut shape = xv.shape().to_vec();
        shape[axis] = len;
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::Narrow { x, axis, start }, &[x]))
    }

    /// Index `index` along `axis`, dropping the axis.
    pub fn select(&mut self, x: NodeId, axis: usize, index: usize) -> Result<NodeId> {
        let narrowed = self.narrow(x, axis, index, 1)?;
        let mut shape = self.shape(x).to_vec();
        shape.remove(axis);
        self.reshape(narrowed, &shape)
    }

    /// Stacks equal-shape tensors along a new `axis`.
    pub fn stack(&mut self, inputs: &[NodeId], axis: usize) -> Result<NodeId> {
        let mut expanded = Vec::with_capacity(inputs.len());
        for &id in inputs {
            let mut shape = self.shape(id).to_vec();
            if axis > shape.len() {
                return Err(Error::Dimension(format!(
                    "stack axis {axis} out of range for {shape:?}"
                )));
            }
            shape.insert(axis, 1);
            expanded.push(self.reshape(id, &shape)?);
        }
        self.concat(&expanded, axis)
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let value = self.value(x).reshape(shape)?;
        Ok(self.push(value, Op::Reshape(x), &[x]))
    }

    /// Sliding windows over time: `[B×L×d]` → `[B×(L−w+1)×(w·d)]`, where each
    /// output row concatenates `w` consecutive input rows.
    pub fn unfold(&mut self, x: NodeId, width: usize) -> Result<NodeId> {
        let xv = self.value(x);
        let &[b, l, d] = xv.shape() else {
            return Err(Error::Dimension(format!(
                "unfold needs [B×L×d], got {:?}",
                xv.shape()
            )));
        };
        if width == 0 || width > l {
            return Err(Error::Contract(format!(
                "window width {width} does not fit sequence length {l}"
            )));
        }
        let t = l - width + 1;
        let mut out = Vec::with_capacity(b * t * width * d);
        for bi in 0..b {
            for ti in 0..t {
                let from = (bi * l + ti) * d;
                out.extend_from_slice(&xv.data()[from..from + width * d]);
            }
        }
        let value = Tensor::new(vec![b, t, width * d], out)?;
        Ok(self.push(value, Op::Unfold { x, width }, &[x]))
    }

    /// Replaces entries whose `keep` flag is false with −∞.
    pub fn mask_fill(&mut self, x: NodeId, keep: &[bool]) -> Result<NodeId> {
        let xv = self.value(x);
        if keep.len() != xv.numel() {
            return Err(Error::Dimension(format!(
                "mask of {} entries for tensor {:?}",
                keep.len(),
                xv.shape()
            )));
        }
        let data = xv
            .data()
            .iter()
            .zip(keep)
            .map(|(&v, &k)| if k { v } else { f64::NEG_INFINITY })
            .collect();
        let value = Tensor::new(xv.shape().to_vec(), data)?;
        let op = Op::MaskFill {
            x,
            keep: keep.to_vec(),
        };
        Ok(self.push(value, op, &[x]))
    }

    /// Mean negative log-likelihood of `labels` under probability rows
    /// `probs` (`[B×C]`), clamping probabilities at [`PROB_FLOOR`].
    pub fn nll(&mut self, probs: NodeId, labels: &[usize]) -> Result<NodeId> {
        let pv = self.value(probs);
        let (b, c) = pv.dims2()?;
        if labels.len() != b {
            return Err(Error::Dimension(format!(
                "{} labels for {b} probability rows",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::Contract(format!(
                "label {bad} out of range for {c} classes"
            )));
        }
        let total: f64 = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| -pv.data()[i * c + l].max(PROB_FLOOR).ln())
            .sum();
        let value = Tensor::scalar(total / b as f64);
        let op = Op::Nll {
            probs,
            labels: labels.to_vec(),
        };
        Ok(self.push(value, op, &[probs]))
    }

    /// Reverse-mode pass from a scalar `loss`. Returns a gradient for every
    /// parameter leaf; leaves the loss does not depend on get zeros.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(lv.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(upstream) = grads[idx].take() else {
                continue;
            };
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(upstream);
                continue;
            }
            self.propagate(node, &upstream, &mut grads);
        }

        let by_leaf = self
            .params()
            .map(|id| {
                let g = grads
                    .get_mut(id.0)
                    .and_then(Option::take)
                    .unwrap_or_else(|| Tensor::zeros(self.value(id).shape()));
                (id, g)
            })
            .collect();
        Ok(Gradients { by_leaf })
    }

    fn wants(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn propagate(&self, node: &Node, up: &Tensor, grads: &mut [Option<Tensor>]) {
        let out = &node.value;
        let g = up.data();
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                let (av, bv) = (self.value(a), self.value(b));
                let (m, k) = (av.shape()[0], av.shape()[1]);
                let n = bv.shape()[1];
                if self.wants(a) {
                    let buf = grad_buf(grads, a, av);
                    gemm(m, n, k, g, false, bv.data(), true, 1.0, buf.data_mut());
                }
                if self.wants(b) {
                    let buf = grad_buf(grads, b, bv);
                    gemm(k, m, n, av.data(), true, g, false, 1.0, buf.data_mut());
                }
            }
            &Op::BatchMatMul(a, b) => {
                let (av, bv) = (self.value(a), self.value(b));
                let &[batch, m, k] = av.shape() else {
                    unreachable!()
                };
                let n = bv.shape()[2];
                if self.wants(a) {
                    let buf = grad_buf(grads, a, av);
                    for i in 0..batch {
                        gemm(
                            m,
                            n,
                            k,
                            &g[i * m * n..],
                            false,
                            &bv.data()[i * k * n..],
                            true,
                            1.0,
                            &mut buf.data_mut()[i * m * k..],
                        );
                    }
                }
                if self.wants(b) {
                    let buf = grad_buf(grads, b, bv);
                    for i in 0..batch {
                        gemm(
                            k,
                            m,
                            n,
                            &av.data()[i * m * k..],
                            true,
                            &g[i * m * n..],
                            false,
                            1.0,
                            &mut buf.data_mut()[i * k * n..],
                        );
                    }
                }
            }
            &Op::Transpose(x) => {
                let (r, c) = (out.shape()[0], out.shape()[1]);
                let t = transpose_data(g, r, c);
                add_into(grad_buf(grads, x, self.value(x)).data_mut(), &t);
            }
            &Op::Unary(kind, x) => {
                let xv = self.value(x);
                let buf = grad_buf(grads, x, xv);
                for (i, slot) in buf.data_mut().iter_mut().enumerate() {
                    *slot += g[i] * unary_derivative(kind, xv.data()[i], out.data()[i]);
                }
            }
            &Op::Map { x, df } => {
                let xv = self.value(x);
                let buf = grad_buf(grads, x, xv);
                for (i, slot) in buf.data_mut().iter_mut().enumerate() {
                    *slot += g[i] * df(xv.data()[i]);
                }
            }
            &Op::Binary { kind, x, y } => {
                let (xv, yv) = (self.value(x), self.value(y));
                let q = yv.numel();
                if self.wants(x) {
                    let buf = grad_buf(grads, x, xv);
                    for (i, slot) in buf.data_mut().iter_mut().enumerate() {
                        *slot += match kind {
                            BinaryKind::Add | BinaryKind::Sub => g[i],
                            BinaryKind::Mul => g[i] * yv.data()[i % q],
                        };
                    }
                }
                if self.wants(y) {
                    let buf = grad_buf(grads, y, yv);
                    let dy = buf.data_mut();
                    for (i, &gi) in g.iter().enumerate() {
                        dy[i % q] += match kind {
                            BinaryKind::Add => gi,
                            BinaryKind::Sub => -gi,
                            BinaryKind::Mul => gi * xv.data()[i],
                        };
                    }
                }
            }
            &Op::Softmax { x, axis } => {
                let (outer, n, inner) = axis_split(out.shape(), axis);
                let y = out.data();
                let buf = grad_buf(grads, x, self.value(x));
                let dx = buf.data_mut();
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |j: usize| o * n * inner + j * inner + i;
                        let dot: f64 = (0..n).map(|j| y[at(j)] * g[at(j)]).sum();
                        for j in 0..n {
                            dx[at(j)] += y[at(j)] * (g[at(j)] - dot);
                        }
                    }
                }
            }
            Op::Reduce {
                kind,
                x,
                axis,
                argmax,
            } => {
                let xv = self.value(*x);
                let (outer, n, inner) = axis_split(xv.shape(), *axis);
                let buf = grad_buf(grads, *x, xv);
                let dx = buf.data_mut();
                match kind {
                    ReduceKind::Max => {
                        for (slot, &src) in argmax.iter().enumerate() {
                            dx[src] += g[slot];
                        }
                    }
                    ReduceKind::Sum | ReduceKind::Mean => {
                        let scale = if *kind == ReduceKind::Mean {
                            1.0 / n as f64
                        } else {
                            1.0
                        };
                        for o in 0..outer {
                            for j in 0..n {
                                for i in 0..inner {
                                    dx[o * n * inner + j * inner + i] += scale * g[o * inner + i];
                                }
                            }
                        }
                    }
                }
            }
            Op::Gather {
                table,
                ids,
                skip_row0,
            } => {
                let tv = self.value(*table);
                let d = tv.shape()[1];
                let buf = grad_buf(grads, *table, tv);
                for (p, &id) in ids.iter().enumerate() {
                    if *skip_row0 && id == 0 {
                        continue;
                    }
                    add_into(buf.row_mut(id), &g[p * d..(p + 1) * d]);
                }
            }
            Op::Concat { inputs, axis } => {
                let (outer, total, inner) = axis_split(out.shape(), *axis);
                let mut offset = 0;
                for &id in inputs {
                    let v = self.value(id);
                    let len = v.shape()[*axis];
                    if self.wants(id) {
                        let buf = grad_buf(grads, id, v);
                        let dx = buf.data_mut();
                        for o in 0..outer {
                            let from = o * total * inner + offset * inner;
                            add_into(
                                &mut dx[o * len * inner..(o + 1) * len * inner],
                                &g[from..from + len * inner],
                            );
                        }
                    }
                    offset += len;
                }
            }
            &Op::Narrow { x, axis, start } => {
                let xv = self.value(x);
                let (outer, n, inner) = axis_split(xv.shape(), axis);
                let len = out.shape()[axis];
                let buf = grad_buf(grads, x, xv);
                let dx = buf.data_mut();
                for o in 0..outer {
                    let to = o * n * inner + start * inner;
                    add_into(
                        &mut dx[to..to + len * inner],
                        &g[o * len * inner..(o + 1) * len * inner],
                    );
                }
            }
            &Op::Reshape(x) => {
                add_into(grad_buf(grads, x, self.value(x)).data_mut(), g);
            }
            &Op::Unfold { x, width } => {
                let xv = self.value(x);
                let &[b, l, d] = xv.shape() else {
                    unreachable!()
                };
                let t = l - width + 1;
                let buf = grad_buf(grads, x, xv);
                let dx = buf.data_mut();
                for bi in 0..b {
                    for ti in 0..t {
                        let to = (bi * l + ti) * d;
                        let from = (bi * t + ti) * width * d;
                        add_into(&mut dx[to..to + width * d], &g[from..from + width * d]);
                    }
                }
            }
            Op::MaskFill { x, keep } => {
                let buf = grad_buf(grads, *x, self.value(*x));
                for ((slot, &gi), &k) in buf.data_mut().iter_mut().zip(g).zip(keep) {
                    if k {
                        *slot += gi;
                    }
                }
            }
            Op::Nll { probs, labels } => {
                let pv = self.value(*probs);
                let c = pv.shape()[1];
                let scale = g[0] / labels.len() as f64;
                let buf = grad_buf(grads, *probs, pv);
                for (i, &l) in labels.iter().enumerate() {
                    let p = pv.data()[i * c + l];
                    if p > PROB_FLOOR {
                        buf.data_mut()[i * c + l] -= scale / p;
                    }
                }
            }
        }
    }
}

fn grad_buf<'a>(grads: &'a mut [Option<Tensor>], id: NodeId, like: &Tensor) -> &'a mut Tensor {
    grads[id.0].get_or_insert_with(|| Tensor::zeros(like.shape()))
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn transpose_data(src: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = src[i * c + j];
        }
    }
    out
}

fn check_axis(shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        return Err(Error::Dimension(format!(
            "axis {axis} out of range for shape {shape:?}"
        )));
    }
    Ok(())
}

fn broadcastable(x: &[usize], y: &[usize]) -> bool {
    if x == y {
        return true;
    }
    let y = match y.split_first() {
        Some((1, rest)) if !x.ends_with(y) => rest,
        _ => y,
    };
    x.ends_with(y)
}

fn unary_forward(kind: UnaryKind, x: f64) -> f64 {
    match kind {
        UnaryKind::Tanh => x.tanh(),
        UnaryKind::Sigmoid => 1.0 / (1.0 + (-x).exp()),
        UnaryKind::Relu => x.max(0.0),
        UnaryKind::Exp => x.exp(),
        UnaryKind::Log => x.ln(),
        UnaryKind::Neg => -x,
    }
}

fn unary_derivative(kind: UnaryKind, x: f64, y: f64) -> f64 {
    match kind {
        UnaryKind::Tanh => 1.0 - y * y,
        UnaryKind::Sigmoid => y * (1.0 - y),
        UnaryKind::Relu => {
            if x > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        UnaryKind::Exp => y,
        UnaryKind::Log => 1.0 / x,
        UnaryKind::Neg => -1.0,
    }
}
