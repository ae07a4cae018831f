//! Define-by-run computation graph.
//!
//! A [`Graph`] is built fresh for every example or minibatch. Nodes are
//! appended in creation order, which is always a valid topological order, so
//! the backward pass is a single reverse sweep. Parameters are read in place
//! from a borrowed [`ParameterStore`]; gradients come back as a [`Gradients`]
//! map instead of being written into the store, which keeps the store shared
//! and read-only while a graph is alive.

use std::collections::{HashMap, HashSet};

use rand::Rng as _;

use super::params::{Gradients, ParamId, ParameterStore};
use super::tensor::{axpy, dot, Tensor};
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule for [`Graph::custom`]: given input values, the forward output
/// and the gradient w.r.t. the output, returns one gradient per input.
pub type BackwardFn = Box<dyn Fn(&[&Tensor], &Tensor, &Tensor) -> Vec<Tensor>>;

enum Value {
    Owned(Tensor),
    Param(ParamId),
}

enum Op {
    Constant,
    Param(ParamId),
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Softmax(NodeId),
    Log(NodeId),
    Concat(Vec<NodeId>),
    Slice(NodeId, usize),
    Stack(Vec<NodeId>),
    Transpose(NodeId),
    Lookup(NodeId, usize),
    Dropout(NodeId, Vec<f64>),
    Sum(NodeId),
    Mean(NodeId),
    PickNegLogSoftmax {
        logits: NodeId,
        index: usize,
        probs: Vec<f64>,
    },
    Entropy(NodeId),
    Custom(Vec<NodeId>, BackwardFn),
}

struct Node {
    value: Value,
    op: Op,
    requires_grad: bool,
}

pub struct Graph<'s> {
    store: &'s ParameterStore,
    nodes: Vec<Node>,
    param_nodes: HashMap<ParamId, NodeId>,
    frozen: HashSet<ParamId>,
    dropout_rng: Option<Rng>,
    check_finite: bool,
}

impl<'s> Graph<'s> {
    /// Inference-mode graph: dropout is the identity.
    pub fn new(store: &'s ParameterStore) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
            frozen: HashSet::new(),
            dropout_rng: None,
            check_finite: cfg!(debug_assertions),
        }
    }

    /// Training-mode graph drawing dropout masks from `rng`.
    pub fn training(store: &'s ParameterStore, rng: Rng) -> Self {
        let mut g = Self::new(store);
        g.dropout_rng = Some(rng);
        g
    }

    pub fn is_training(&self) -> bool {
        self.dropout_rng.is_some()
    }

    /// Hands back the dropout stream so the caller can continue it.
    pub fn into_rng(self) -> Option<Rng> {
        self.dropout_rng
    }

    pub fn set_check_finite(&mut self, on: bool) {
        self.check_finite = on;
    }

    pub fn store(&self) -> &'s ParameterStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Parameters frozen here are read as constants: no gradient reaches them.
    pub fn freeze<I: IntoIterator<Item = ParamId>>(&mut self, ids: I) {
        for id in ids {
            self.frozen.insert(id);
            self.param_nodes.remove(&id);
        }
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        match &self.nodes[id.0].value {
            Value::Owned(t) => t,
            Value::Param(p) => self.store.value(*p),
        }
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.value(id).shape()
    }

    fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op, inputs: &[NodeId]) -> Result<NodeId> {
        if self.check_finite && !value.all_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let requires_grad = inputs.iter().any(|&i| self.requires_grad(i));
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            requires_grad,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op: Op::Constant,
            requires_grad: false,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn zeros(&mut self, shape: &[usize]) -> NodeId {
        self.constant(Tensor::zeros(shape))
    }

    /// Same value as `x`, cut off from the backward pass.
    pub fn detach(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).clone();
        self.constant(v)
    }

    /// Node reading parameter `id`. Repeated calls return the same node so
    /// every use accumulates into one gradient.
    pub fn param(&mut self, id: ParamId) -> NodeId {
        if let Some(&n) = self.param_nodes.get(&id) {
            return n;
        }
        let frozen = self.frozen.contains(&id);
        self.nodes.push(Node {
            value: Value::Param(id),
            op: if frozen { Op::Constant } else { Op::Param(id) },
            requires_grad: !frozen,
        });
        let n = NodeId(self.nodes.len() - 1);
        self.param_nodes.insert(id, n);
        n
    }

    /// `[m,k]·[k] -> [m]` or `[m,k]·[k,n] -> [m,n]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rank() != 2 || av.cols() != bv.rows() || bv.rank() > 2 {
            return Err(Error::shape("matmul", av.shape(), bv.shape()));
        }
        let m = av.rows();
        let out = if bv.rank() == 1 {
            let x = bv.data();
            Tensor::vector((0..m).map(|i| dot(av.row(i), x)).collect())
        } else {
            let n = bv.cols();
            let mut out = vec![0.0; m * n];
            for i in 0..m {
                let orow = &mut out[i * n..(i + 1) * n];
                for (k, &aik) in av.row(i).iter().enumerate() {
                    if aik != 0.0 {
                        axpy(aik, bv.row(k), orow);
                    }
                }
            }
            Tensor::new(vec![m, n], out)?
        };
        self.push("matmul", out, Op::MatMul(a, b), &[a, b])
    }

    /// Elementwise sum. A rank-1 `b` is broadcast over the rows of a rank-2 `a`.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        let out = if av.shape() == bv.shape() {
            let data = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
            Tensor::new(av.shape().to_vec(), data)?
        } else if av.rank() == 2 && bv.rank() == 1 && av.cols() == bv.len() {
            let mut out = av.clone();
            let n = bv.len();
            for row in out.data_mut().chunks_mut(n) {
                for (o, y) in row.iter_mut().zip(bv.data()) {
                    *o += y;
                }
            }
            out
        } else {
            return Err(Error::shape("add", av.shape(), bv.shape()));
        };
        self.push("add", out, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = self.zip_same("sub", a, b, |x, y| x - y)?;
        self.push("sub", out, Op::Sub(a, b), &[a, b])
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = self.zip_same("mul", a, b, |x, y| x * y)?;
        self.push("mul", out, Op::Mul(a, b), &[a, b])
    }

    fn zip_same(&self, op: &'static str, a: NodeId, b: NodeId, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::shape(op, av.shape(), bv.shape()));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(av.shape().to_vec(), data)
    }

    fn map(&self, x: NodeId, f: impl Fn(f64) -> f64) -> Tensor {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| f(v)).collect();
        Tensor::new(xv.shape().to_vec(), data).expect("shape preserved")
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> Result<NodeId> {
        let out = self.map(x, |v| v * factor);
        self.push("scale", out, Op::Scale(x, factor), &[x])
    }

    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId> {
        let out = self.map(x, f64::tanh);
        self.push("tanh", out, Op::Tanh(x), &[x])
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        let out = self.map(x, sigmoid);
        self.push("sigmoid", out, Op::Sigmoid(x), &[x])
    }

    /// Softmax over a rank-1 tensor.
    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = self.value(x);
        if xv.rank() != 1 {
            return Err(Error::shape("softmax", xv.shape(), &[]));
        }
        let out = Tensor::vector(softmax(xv.data()));
        self.push("softmax", out, Op::Softmax(x), &[x])
    }

    pub fn log(&mut self, x: NodeId) -> Result<NodeId> {
        let out = self.map(x, f64::ln);
        self.push("log", out, Op::Log(x), &[x])
    }

    /// Concatenation of rank-1 tensors.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::contract("concat of zero tensors"));
        }
        if parts.len() == 1 {
            return Ok(parts[0]);
        }
        let mut data = Vec::new();
        for &p in parts {
            let v = self.value(p);
            if v.rank() != 1 {
                return Err(Error::shape("concat", v.shape(), &[]));
            }
            data.extend_from_slice(v.data());
        }
        self.push("concat", Tensor::vector(data), Op::Concat(parts.to_vec()), parts)
    }

    /// `x[start..start + len]` of a rank-1 tensor.
    pub fn slice(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let xv = self.value(x);
        if xv.rank() != 1 || len == 0 || start + len > xv.len() {
            return Err(Error::shape("slice", xv.shape(), &[start, len]));
        }
        let out = Tensor::vector(xv.data()[start..start + len].to_vec());
        self.push("slice", out, Op::Slice(x, start), &[x])
    }

    /// Stacks equal-length rank-1 tensors as the rows of a matrix.
    pub fn stack(&mut self, rows: &[NodeId]) -> Result<NodeId> {
        if rows.is_empty() {
            return Err(Error::contract("stack of zero rows"));
        }
        let d = self.value(rows[0]).len();
        let mut data = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            let v = self.value(r);
            if v.rank() != 1 || v.len() != d {
                return Err(Error::shape("stack", v.shape(), &[d]));
            }
            data.extend_from_slice(v.data());
        }
        let out = Tensor::new(vec![rows.len(), d], data)?;
        self.push("stack", out, Op::Stack(rows.to_vec()), rows)
    }

    pub fn transpose(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = self.value(x);
        if xv.rank() != 2 {
            return Err(Error::shape("transpose", xv.shape(), &[]));
        }
        let out = transposed(xv);
        self.push("transpose", out, Op::Transpose(x), &[x])
    }

    /// Row `row` of an embedding table `[V, d]`.
    pub fn lookup(&mut self, table: NodeId, row: usize) -> Result<NodeId> {
        let tv = self.value(table);
        if tv.rank() != 2 {
            return Err(Error::shape("lookup", tv.shape(), &[row]));
        }
        if row >= tv.rows() {
            return Err(Error::contract(format!(
                "lookup index {row} out of range for table with {} rows",
                tv.rows()
            )));
        }
        let out = Tensor::vector(tv.row(row).to_vec());
        self.push("lookup", out, Op::Lookup(table, row), &[table])
    }

    /// Inverted dropout: at training time each element is kept with
    /// probability `1 - rate` and scaled by `1 / (1 - rate)`.
    pub fn dropout(&mut self, x: NodeId, rate: f64) -> Result<NodeId> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::contract(format!("dropout rate {rate} outside [0, 1)")));
        }
        let Some(rng) = self.dropout_rng.as_mut() else {
            return Ok(x);
        };
        if rate == 0.0 {
            return Ok(x);
        }
        let n = match &self.nodes[x.0].value {
            Value::Owned(t) => t.len(),
            Value::Param(p) => self.store.value(*p).len(),
        };
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..n)
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let xv = self.value(x);
        let data = xv.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let out = Tensor::new(xv.shape().to_vec(), data)?;
        self.push("dropout", out, Op::Dropout(x, mask), &[x])
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        let out = Tensor::scalar(self.value(x).sum());
        self.push("sum", out, Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = self.value(x);
        let out = Tensor::scalar(xv.sum() / xv.len() as f64);
        self.push("mean", out, Op::Mean(x), &[x])
    }

    /// `-log softmax(logits)[index]`, computed stably.
    pub fn pick_neg_log_softmax(&mut self, logits: NodeId, index: usize) -> Result<NodeId> {
        let lv = self.value(logits);
        if lv.rank() != 1 {
            return Err(Error::shape("pick_neg_log_softmax", lv.shape(), &[index]));
        }
        if index >= lv.len() {
            return Err(Error::contract(format!(
                "token id {index} out of range for {} classes",
                lv.len()
            )));
        }
        let x = lv.data();
        let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let log_z = max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let out = Tensor::scalar(log_z - x[index]);
        let probs = x.iter().map(|v| (v - log_z).exp()).collect();
        self.push(
            "pick_neg_log_softmax",
            out,
            Op::PickNegLogSoftmax { logits, index, probs },
            &[logits],
        )
    }

    /// Shannon entropy `-Σ p ln p` (natural log) of a probability vector.
    pub fn entropy(&mut self, p: NodeId) -> Result<NodeId> {
        let pv = self.value(p);
        if pv.rank() != 1 {
            return Err(Error::shape("entropy", pv.shape(), &[]));
        }
        let h: f64 = pv.data().iter().filter(|&&v| v > 0.0).map(|&v| -v * v.ln()).sum();
        self.push("entropy", Tensor::scalar(h), Op::Entropy(p), &[p])
    }

    /// Node with a caller-supplied value and backward rule.
    pub fn custom(&mut self, inputs: &[NodeId], value: Tensor, backward: BackwardFn) -> Result<NodeId> {
        self.push("custom", value, Op::Custom(inputs.to_vec(), backward), inputs)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if self.value(loss).shape() != [1] {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Tensor::scalar(1.0));
        let mut out = Gradients::new();

        for k in (0..=loss.0).rev() {
            let Some(g) = grads[k].take() else { continue };
            let node = &self.nodes[k];
            if !node.requires_grad {
                continue;
            }
            let y = self.value(NodeId(k));
            match &node.op {
                Op::Constant => {}
                Op::Param(pid) => out.add(*pid, g),
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (m, kdim) = (av.rows(), av.cols());
                    if bv.rank() == 1 {
                        if self.requires_grad(*a) {
                            let ga = self.slot(&mut grads, *a);
                            for i in 0..m {
                                axpy(g.data()[i], bv.data(), &mut ga.data_mut()[i * kdim..(i + 1) * kdim]);
                            }
                        }
                        if self.requires_grad(*b) {
                            let gb = self.slot(&mut grads, *b);
                            for i in 0..m {
                                axpy(g.data()[i], av.row(i), gb.data_mut());
                            }
                        }
                    } else {
                        let n = bv.cols();
                        if self.requires_grad(*a) {
                            let ga = self.slot(&mut grads, *a);
                            for i in 0..m {
                                let grow = &g.data()[i * n..(i + 1) * n];
                                for kk in 0..kdim {
                                    ga.data_mut()[i * kdim + kk] += dot(grow, bv.row(kk));
                                }
                            }
                        }
                        if self.requires_grad(*b) {
                            let gb = self.slot(&mut grads, *b);
                            for i in 0..m {
                                let grow = &g.data()[i * n..(i + 1) * n];
                                for (kk, &aik) in av.row(i).iter().enumerate() {
                                    axpy(aik, grow, &mut gb.data_mut()[kk * n..(kk + 1) * n]);
                                }
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    if self.requires_grad(*a) {
                        self.slot(&mut grads, *a).add_assign(&g);
                    }
                    if self.requires_grad(*b) {
                        let same = self.value(*a).shape() == self.value(*b).shape();
                        let gb = self.slot(&mut grads, *b);
                        if same {
                            gb.add_assign(&g);
                        } else {
                            let n = gb.len();
                            for row in g.data().chunks(n) {
                                axpy(1.0, row, gb.data_mut());
                            }
                        }
                    }
                }
                Op::Sub(a, b) => {
                    if self.requires_grad(*a) {
                        self.slot(&mut grads, *a).add_assign(&g);
                    }
                    if self.requires_grad(*b) {
                        axpy(-1.0, g.data(), self.slot(&mut grads, *b).data_mut());
                    }
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    if self.requires_grad(*a) {
                        let ga = self.slot(&mut grads, *a);
                        for ((o, gi), bi) in ga.data_mut().iter_mut().zip(g.data()).zip(bv.data()) {
                            *o += gi * bi;
                        }
                    }
                    if self.requires_grad(*b) {
                        let gb = self.slot(&mut grads, *b);
                        for ((o, gi), ai) in gb.data_mut().iter_mut().zip(g.data()).zip(av.data()) {
                            *o += gi * ai;
                        }
                    }
                }
                Op::Scale(x, c) => {
                    axpy(*c, g.data(), self.slot(&mut grads, *x).data_mut());
                }
                Op::Tanh(x) => {
                    let gx = self.slot(&mut grads, *x);
                    for ((o, gi), yi) in gx.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                        *o += gi * (1.0 - yi * yi);
                    }
                }
                Op::Sigmoid(x) => {
                    let gx = self.slot(&mut grads, *x);
                    for ((o, gi), yi) in gx.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                        *o += gi * yi * (1.0 - yi);
                    }
                }
                Op::Softmax(x) => {
                    let s = dot(g.data(), y.data());
                    let gx = self.slot(&mut grads, *x);
                    for ((o, gi), yi) in gx.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                        *o += yi * (gi - s);
                    }
                }
                Op::Log(x) => {
                    let xv = self.value(*x);
                    let gx = self.slot(&mut grads, *x);
                    for ((o, gi), xi) in gx.data_mut().iter_mut().zip(g.data()).zip(xv.data()) {
                        *o += gi / xi;
                    }
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let n = self.value(p).len();
                        if self.requires_grad(p) {
                            axpy(1.0, &g.data()[off..off + n], self.slot(&mut grads, p).data_mut());
                        }
                        off += n;
                    }
                }
                Op::Slice(x, start) => {
                    let gx = self.slot(&mut grads, *x);
                    axpy(1.0, g.data(), &mut gx.data_mut()[*start..*start + g.len()]);
                }
                Op::Stack(rows) => {
                    let d = y.cols();
                    for (i, &r) in rows.iter().enumerate() {
                        if self.requires_grad(r) {
                            axpy(1.0, &g.data()[i * d..(i + 1) * d], self.slot(&mut grads, r).data_mut());
                        }
                    }
                }
                Op::Transpose(x) => {
                    let gt = transposed(&g);
                    self.slot(&mut grads, *x).add_assign(&gt);
                }
                Op::Lookup(table, row) => {
                    let gt = self.slot(&mut grads, *table);
                    let d = gt.cols();
                    axpy(1.0, g.data(), &mut gt.data_mut()[row * d..(row + 1) * d]);
                }
                Op::Dropout(x, mask) => {
                    let gx = self.slot(&mut grads, *x);
                    for ((o, gi), m) in gx.data_mut().iter_mut().zip(g.data()).zip(mask) {
                        *o += gi * m;
                    }
                }
                Op::Sum(x) => {
                    let gv = g.item();
                    for o in self.slot(&mut grads, *x).data_mut() {
                        *o += gv;
                    }
                }
                Op::Mean(x) => {
                    let n = self.value(*x).len() as f64;
                    let gv = g.item() / n;
                    for o in self.slot(&mut grads, *x).data_mut() {
                        *o += gv;
                    }
                }
                Op::PickNegLogSoftmax { logits, index, probs } => {
                    let gv = g.item();
                    let gl = self.slot(&mut grads, *logits);
                    for (o, p) in gl.data_mut().iter_mut().zip(probs) {
                        *o += gv * p;
                    }
                    gl.data_mut()[*index] -= gv;
                }
                Op::Entropy(p) => {
                    let gv = g.item();
                    let pv = self.value(*p);
                    let gp = self.slot(&mut grads, *p);
                    for (o, &pi) in gp.data_mut().iter_mut().zip(pv.data()) {
                        if pi > 0.0 {
                            *o -= gv * (pi.ln() + 1.0);
                        }
                    }
                }
                Op::Custom(inputs, backward) => {
                    let values: Vec<&Tensor> = inputs.iter().map(|&i| self.value(i)).collect();
                    let gins = backward(&values, y, &g);
                    if gins.len() != inputs.len() {
                        return Err(Error::contract("custom backward returned wrong arity"));
                    }
                    for (&i, gi) in inputs.iter().zip(gins) {
                        if self.requires_grad(i) {
                            let slot = self.slot(&mut grads, i);
                            if slot.shape() != gi.shape() {
                                return Err(Error::shape("custom backward", slot.shape(), gi.shape()));
                            }
                            slot.add_assign(&gi);
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Tensor>], id: NodeId) -> &'g mut Tensor {
        grads[id.0].get_or_insert_with(|| Tensor::zeros(self.value(id).shape()))
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let z: f64 = out.iter().sum();
    for v in &mut out {
        *v /= z;
    }
    out
}

fn transposed(t: &Tensor) -> Tensor {
    let (r, c) = (t.rows(), t.cols());
    let mut data = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            data[j * r + i] = t.data()[i * c + j];
        }
    }
    Tensor::new(vec![c, r], data).expect("transpose keeps element count")
}
