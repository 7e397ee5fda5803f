//! Define-by-run gradient tape.
//!
//! Every operation appends a node holding its output value, its inputs and
//! whatever forward intermediates its backward rule needs. Node order is
//! execution order, which is already topological. `backward` walks the
//! nodes once in reverse and then clears the tape.

use std::collections::BTreeMap;
use std::sync::Arc;

use super::kernels::{self, axis_view};
use super::{BinaryOp, Tensor};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var {
    pub(crate) index: usize,
    pub(crate) generation: u64,
}

pub(crate) enum Value {
    Owned(Tensor),
    Shared(Arc<Tensor>),
}

impl Value {
    fn tensor(&self) -> &Tensor {
        match self {
            Value::Owned(t) => t,
            Value::Shared(t) => t,
        }
    }
}

pub(crate) enum Op {
    Leaf,
    MatMul { a: Var, b: Var },
    Binary { a: Var, b: Var, op: BinaryOp },
    AddRow { x: Var, bias: Var },
    Scale { x: Var, factor: f64 },
    Concat { parts: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, start: usize },
    Permute { x: Var, sources: Vec<usize> },
    Reshape { x: Var },
    Pool { x: Var, axis: usize, bins: Vec<(usize, usize)> },
    Softmax { x: Var, axis: usize },
    Gelu { x: Var },
    Tanh { x: Var },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, rstd: Vec<f64> },
    Embedding { table: Var, ids: Vec<usize> },
    CrossEntropy { logits: Var, target: usize, probs: Vec<f64> },
    Sum { x: Var },
}

pub(crate) struct Node {
    pub(crate) value: Value,
    pub(crate) op: Op,
    pub(crate) requires_grad: bool,
    param: Option<ParamId>,
}

/// Gradients produced by one backward pass.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    leaves: BTreeMap<Var, Tensor>,
    params: BTreeMap<ParamId, Tensor>,
    visits: usize,
}

impl Gradients {
    /// Gradient of a leaf created with `requires_grad`.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.leaves.get(&v)
    }

    /// Gradient of a trainable parameter, summed over every binding.
    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.get(&id)
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.params.iter().map(|(k, v)| (*k, v))
    }

    /// Number of nodes the reverse sweep processed.
    pub fn node_visits(&self) -> usize {
        self.visits
    }
}

/// Ordered record of executed differentiable operations.
#[derive(Default)]
pub struct Tape {
    pub(crate) nodes: Vec<Node>,
    generation: u64,
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

    /// A leaf value; with `requires_grad` its gradient is reported by `backward`.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push_node(Value::Owned(value), Op::Leaf, requires_grad, None)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Binds a stored parameter. Frozen parameters become constants.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let trainable = store.get(id).trainable;
        self.push_node(
            Value::Shared(store.shared(id)),
            Op::Leaf,
            trainable,
            trainable.then_some(id),
        )
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.check(v).expect("stale variable");
        self.nodes[v.index].value.tensor()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.index].requires_grad
    }

    pub(crate) fn check(&self, v: Var) -> Result<()> {
        if v.generation != self.generation || v.index >= self.nodes.len() {
            return Err(Error::Usage(
                "variable belongs to a tape that has already run backward".into(),
            ));
        }
        Ok(())
    }

    fn push_node(&mut self, value: Value, op: Op, requires_grad: bool, param: Option<ParamId>) -> Var {
        debug_assert!(value.tensor().is_finite(), "non-finite value produced");
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            param,
        });
        Var {
            index: self.nodes.len() - 1,
            generation: self.generation,
        }
    }

    pub(crate) fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.index].requires_grad);
        self.push_node(Value::Owned(value), op, requires_grad, None)
    }

    /// Reverse-mode sweep from a scalar `loss`. Clears the tape afterwards;
    /// variables recorded before the call become invalid.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        self.check(loss)?;
        if self.value(loss).len() != 1 {
            return Err(Error::argument(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.index] = Some(vec![1.0]);
        let mut out = Gradients::default();

        for i in (0..=loss.index).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            out.visits += 1;
            if let Op::Leaf = node.op {
                let t = Tensor::new(node.value.tensor().shape(), g).expect("gradient shape");
                match node.param {
                    Some(id) => match out.params.get_mut(&id) {
                        Some(acc) => {
                            for (a, b) in acc.data_mut().iter_mut().zip(t.data()) {
                                *a += b;
                            }
                        }
                        None => {
                            out.params.insert(id, t);
                        }
                    },
                    None => {
                        let var = Var {
                            index: i,
                            generation: self.generation,
                        };
                        out.leaves.insert(var, t);
                    }
                }
                continue;
            }
            self.backward_node(i, &g, &mut grads);
        }

        self.nodes.clear();
        self.generation += 1;
        Ok(out)
    }

    fn val(&self, v: Var) -> &[f64] {
        self.nodes[v.index].value.tensor().data()
    }

    fn shp(&self, v: Var) -> &[usize] {
        self.nodes[v.index].value.tensor().shape()
    }

    fn backward_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = node.value.tensor();
        // Accumulates into an input's gradient buffer when that input wants one.
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            let n = &self.nodes[v.index];
            if !n.requires_grad {
                return;
            }
            let len = n.value.tensor().len();
            let buf = grads[v.index].get_or_insert_with(|| vec![0.0; len]);
            f(buf);
        };
        match &node.op {
            Op::Leaf => unreachable!(),
            Op::MatMul { a, b } => {
                let (sa, sb) = (self.shp(*a), self.shp(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let (va, vb) = (self.val(*a), self.val(*b));
                acc(*a, &mut |ga| kernels::matmul_nt_into(g, vb, ga, m, k, n));
                acc(*b, &mut |gb| kernels::matmul_tn_into(va, g, gb, m, k, n));
            }
            Op::Binary { a, b, op } => {
                let (va, vb) = (self.val(*a), self.val(*b));
                match op {
                    BinaryOp::Add => {
                        acc(*a, &mut |ga| add_assign(ga, g));
                        acc(*b, &mut |gb| add_assign(gb, g));
                    }
                    BinaryOp::Sub => {
                        acc(*a, &mut |ga| add_assign(ga, g));
                        acc(*b, &mut |gb| {
                            for (d, s) in gb.iter_mut().zip(g) {
                                *d -= s;
                            }
                        });
                    }
                    BinaryOp::Mul => {
                        acc(*a, &mut |ga| {
                            for ((d, s), y) in ga.iter_mut().zip(g).zip(vb) {
                                *d += s * y;
                            }
                        });
                        acc(*b, &mut |gb| {
                            for ((d, s), x) in gb.iter_mut().zip(g).zip(va) {
                                *d += s * x;
                            }
                        });
                    }
                }
            }
            Op::AddRow { x, bias } => {
                let c = self.shp(*bias)[0];
                acc(*x, &mut |gx| add_assign(gx, g));
                acc(*bias, &mut |gb| {
                    for row in g.chunks(c) {
                        add_assign(gb, row);
                    }
                });
            }
            Op::Scale { x, factor } => {
                acc(*x, &mut |gx| {
                    for (d, s) in gx.iter_mut().zip(g) {
                        *d += factor * s;
                    }
                });
            }
            Op::Concat { parts, axis } => {
                let (outer, total, inner) = axis_view(out.shape(), *axis);
                let mut offset = 0;
                for p in parts {
                    let n = self.shp(*p)[*axis];
                    acc(*p, &mut |gp| {
                        for o in 0..outer {
                            let src = &g[(o * total + offset) * inner..(o * total + offset + n) * inner];
                            add_assign(&mut gp[o * n * inner..(o + 1) * n * inner], src);
                        }
                    });
                    offset += n;
                }
            }
            Op::Slice { x, axis, start } => {
                let (outer, n, inner) = axis_view(self.shp(*x), *axis);
                let len = out.shape()[*axis];
                acc(*x, &mut |gx| {
                    for o in 0..outer {
                        let dst = &mut gx[(o * n + start) * inner..(o * n + start + len) * inner];
                        add_assign(dst, &g[o * len * inner..(o + 1) * len * inner]);
                    }
                });
            }
            Op::Permute { x, sources } => {
                acc(*x, &mut |gx| {
                    for (s, &src) in g.iter().zip(sources) {
                        gx[src] += s;
                    }
                });
            }
            Op::Reshape { x } => acc(*x, &mut |gx| add_assign(gx, g)),
            Op::Pool { x, axis, bins } => {
                let view = axis_view(self.shp(*x), *axis);
                acc(*x, &mut |gx| kernels::pool_axis_backward(g, gx, view, bins));
            }
            Op::Softmax { x, axis } => {
                let y = out.data();
                let (outer, n, inner) = axis_view(out.shape(), *axis);
                acc(*x, &mut |gx| {
                    for o in 0..outer {
                        for j in 0..inner {
                            let at = |t: usize| (o * n + t) * inner + j;
                            let dot: f64 = (0..n).map(|t| g[at(t)] * y[at(t)]).sum();
                            for t in 0..n {
                                gx[at(t)] += y[at(t)] * (g[at(t)] - dot);
                            }
                        }
                    }
                });
            }
            Op::Gelu { x } => {
                let vx = self.val(*x);
                acc(*x, &mut |gx| {
                    for ((d, s), &xv) in gx.iter_mut().zip(g).zip(vx) {
                        *d += s * kernels::gelu_grad(xv);
                    }
                });
            }
            Op::Tanh { x } => {
                let y = out.data();
                acc(*x, &mut |gx| {
                    for ((d, s), yv) in gx.iter_mut().zip(g).zip(y) {
                        *d += s * (1.0 - yv * yv);
                    }
                });
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let d = self.shp(*gamma)[0];
                let gam = self.val(*gamma);
                acc(*gamma, &mut |gg| {
                    for (gr, xr) in g.chunks(d).zip(xhat.chunks(d)) {
                        for ((a, s), h) in gg.iter_mut().zip(gr).zip(xr) {
                            *a += s * h;
                        }
                    }
                });
                acc(*beta, &mut |gb| {
                    for gr in g.chunks(d) {
                        add_assign(gb, gr);
                    }
                });
                acc(*x, &mut |gx| {
                    let rows = g.chunks(d).zip(xhat.chunks(d)).zip(gx.chunks_mut(d));
                    for (((gr, xr), dst), r) in rows.zip(rstd) {
                        let dxhat: Vec<f64> = gr.iter().zip(gam).map(|(s, w)| s * w).collect();
                        let mean_d = dxhat.iter().sum::<f64>() / d as f64;
                        let mean_dx = dxhat.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                        for ((o, dh), h) in dst.iter_mut().zip(&dxhat).zip(xr) {
                            *o += r * (dh - mean_d - h * mean_dx);
                        }
                    }
                });
            }
            Op::Embedding { table, ids } => {
                let d = self.shp(*table)[1];
                acc(*table, &mut |gt| {
                    for (row, &id) in g.chunks(d).zip(ids) {
                        add_assign(&mut gt[id * d..(id + 1) * d], row);
                    }
                });
            }
            Op::CrossEntropy {
                logits,
                target,
                probs,
            } => {
                let s = g[0];
                acc(*logits, &mut |gl| {
                    for (c, (d, p)) in gl.iter_mut().zip(probs).enumerate() {
                        let onehot = if c == *target { 1.0 } else { 0.0 };
                        *d += s * (p - onehot);
                    }
                });
            }
            Op::Sum { x } => {
                let s = g[0];
                acc(*x, &mut |gx| {
                    for d in gx.iter_mut() {
                        *d += s;
                    }
                });
            }
        }
    }
}

fn add_assign(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
