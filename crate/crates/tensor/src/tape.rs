//! Reverse-mode differentiation over a linear tape.
//!
//! Every operation on a [`Var`] appends a node holding its value and the
//! inputs needed for the gradient. [`Tape::backward`] walks the nodes in
//! reverse order of recording. Nodes that do not depend on any gradient leaf
//! keep no backward data.

use std::cell::{Cell, RefCell};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Result, TensorError};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{
    axis_extents, broadcast_shape, gemm_nt, gemm_tn, matmul_plan, numel, Tensor,
};

type NodeId = usize;

enum Op<T> {
    Leaf,
    Const,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, T),
    MatMul(NodeId, NodeId),
    Relu(NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Softmax(NodeId, usize),
    LayerNorm {
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Embedding {
        table: NodeId,
        ids: Vec<usize>,
    },
    Reshape(NodeId),
    Permute(NodeId, Vec<usize>),
    Concat(Vec<NodeId>, usize),
    Narrow {
        x: NodeId,
        axis: usize,
        start: usize,
    },
    Sum(NodeId),
    /// `x + z * rms(x)` with `z` the scaled unit-normal sample.
    Noise {
        x: NodeId,
        z: Vec<T>,
        rms: f64,
    },
    SoftCrossEntropy {
        logits: NodeId,
        target: Arc<Tensor<T>>,
    },
}

struct Node<T> {
    value: Arc<Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
    param: Option<ParamId>,
}

/// Recording context for one forward pass.
pub struct Tape<T> {
    nodes: RefCell<Vec<Node<T>>>,
    training: bool,
    grad_enabled: bool,
    seed: u64,
    streams: Cell<u64>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T> {
    tape: &'t Tape<T>,
    id: NodeId,
}

impl<T> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var({})", self.id)
    }
}

/// Gradients produced by one backward pass, indexed by node.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var<'_, T>) -> Option<&Tensor<T>> {
        self.grads.get(v.id).and_then(|g| g.as_ref())
    }
}

impl<T: Scalar> Tape<T> {
    /// `training` enables dropout and noise; `seed` roots their random streams.
    pub fn new(training: bool, seed: u64) -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            training,
            grad_enabled: true,
            seed,
            streams: Cell::new(0),
        }
    }

    /// Evaluation without gradient bookkeeping.
    pub fn inference() -> Self {
        Self {
            grad_enabled: false,
            ..Self::new(false, 0)
        }
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor<T>, op: Op<T>, inputs: &[NodeId]) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = inputs.iter().any(|&i| nodes[i].requires_grad);
        let op = if requires_grad { op } else { Op::Const };
        let id = nodes.len();
        nodes.push(Node {
            value: Arc::new(value),
            op,
            requires_grad,
            param: None,
        });
        Var { tape: self, id }
    }

    fn value_of(&self, id: NodeId) -> Arc<Tensor<T>> {
        Arc::clone(&self.nodes.borrow()[id].value)
    }

    fn leaf_node(&self, value: Arc<Tensor<T>>, requires_grad: bool, param: Option<ParamId>) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            value,
            op: if requires_grad { Op::Leaf } else { Op::Const },
            requires_grad,
            param,
        });
        Var { tape: self, id }
    }

    /// A gradient-tracking leaf.
    pub fn leaf(&self, value: Tensor<T>) -> Var<'_, T> {
        self.leaf_node(Arc::new(value), self.grad_enabled, None)
    }

    /// A value that receives no gradient.
    pub fn constant(&self, value: impl Into<Arc<Tensor<T>>>) -> Var<'_, T> {
        self.leaf_node(value.into(), false, None)
    }

    /// A parameter leaf whose gradient [`Tape::backward_into`] routes back to `store`.
    pub fn param(&self, store: &ParamStore<T>, id: ParamId) -> Var<'_, T> {
        self.leaf_node(store.shared(id), self.grad_enabled, Some(id))
    }

    /// Draws the next per-op random stream. Streams are counter-indexed
    /// so identical seeds and op sequences replay identically.
    fn next_stream(&self) -> ChaCha8Rng {
        let k = self.streams.get();
        self.streams.set(k + 1);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(k);
        rng
    }

    pub fn concat(&self, parts: &[Var<'_, T>], axis: usize) -> Result<Var<'_, T>> {
        let vals: Vec<Arc<Tensor<T>>> = parts.iter().map(|p| self.value_of(p.id)).collect();
        let refs: Vec<&Tensor<T>> = vals.iter().map(|v| &**v).collect();
        let out = Tensor::concat(&refs, axis)?;
        let ids: Vec<NodeId> = parts.iter().map(|p| p.id).collect();
        Ok(self.push(out, Op::Concat(ids.clone(), axis), &ids))
    }

    /// Row gather from `table[V, d]`; output shape is `ids_shape + [d]`.
    pub fn embedding(&self, table: Var<'_, T>, ids: &[usize], ids_shape: &[usize]) -> Result<Var<'_, T>> {
        let tv = self.value_of(table.id);
        if tv.ndim() != 2 {
            return Err(TensorError::Dimension {
                op: "embedding",
                msg: format!("table must be 2-D, got {:?}", tv.shape()),
            });
        }
        if numel(ids_shape) != ids.len() {
            return Err(TensorError::Dimension {
                op: "embedding",
                msg: format!("{} ids do not fill shape {:?}", ids.len(), ids_shape),
            });
        }
        let (v, d) = (tv.shape()[0], tv.shape()[1]);
        let mut data = Vec::with_capacity(ids.len() * d);
        for (pos, &i) in ids.iter().enumerate() {
            if i >= v {
                return Err(TensorError::Index {
                    op: "embedding",
                    index: i,
                    bound: v,
                    position: pos,
                });
            }
            data.extend_from_slice(&tv.data()[i * d..(i + 1) * d]);
        }
        let mut shape = ids_shape.to_vec();
        shape.push(d);
        let out = Tensor::new(shape, data)?;
        Ok(self.push(
            out,
            Op::Embedding {
                table: table.id,
                ids: ids.to_vec(),
            },
            &[table.id],
        ))
    }

    /// Computes gradients of the scalar `loss` for every node that depends on a leaf.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        let lv = &nodes[loss.id].value;
        if lv.numel() != 1 {
            return Err(TensorError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(Tensor::ones(lv.shape()));
        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            propagate(&nodes, id, &g, &mut grads)?;
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Runs [`Tape::backward`] and adds parameter gradients into `store`.
    /// Repeated calls accumulate until [`ParamStore::zero_grad`].
    pub fn backward_into(&self, loss: Var<'_, T>, store: &mut ParamStore<T>) -> Result<()> {
        let grads = self.backward(loss)?;
        let nodes = self.nodes.borrow();
        for (node, g) in nodes.iter().zip(&grads.grads) {
            if let (Some(pid), Some(g)) = (node.param, g) {
                store.accumulate_grad(pid, g);
            }
        }
        Ok(())
    }
}

fn add_grad<T: Scalar>(grads: &mut [Option<Tensor<T>>], id: NodeId, g: Tensor<T>) {
    match &mut grads[id] {
        Some(acc) => acc.add_assign(&g).expect("gradient shapes agree"),
        slot @ None => *slot = Some(g),
    }
}

fn propagate<T: Scalar>(
    nodes: &[Node<T>],
    id: NodeId,
    g: &Tensor<T>,
    grads: &mut [Option<Tensor<T>>],
) -> Result<()> {
    let node = &nodes[id];
    let val = |i: NodeId| &*nodes[i].value;
    let wants = |i: NodeId| nodes[i].requires_grad;
    match &node.op {
        Op::Leaf | Op::Const => {}
        Op::Add(a, b) => {
            if wants(*a) {
                add_grad(grads, *a, g.reduce_to(val(*a).shape()));
            }
            if wants(*b) {
                add_grad(grads, *b, g.reduce_to(val(*b).shape()));
            }
        }
        Op::Sub(a, b) => {
            if wants(*a) {
                add_grad(grads, *a, g.reduce_to(val(*a).shape()));
            }
            if wants(*b) {
                add_grad(grads, *b, g.reduce_to(val(*b).shape()).scale(-T::one()));
            }
        }
        Op::Mul(a, b) => {
            if wants(*a) {
                add_grad(grads, *a, g.mul(val(*b))?.reduce_to(val(*a).shape()));
            }
            if wants(*b) {
                add_grad(grads, *b, g.mul(val(*a))?.reduce_to(val(*b).shape()));
            }
        }
        Op::Scale(a, s) => add_grad(grads, *a, g.scale(*s)),
        Op::MatMul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let plan = matmul_plan(av.shape(), bv.shape())?;
            let (m, k, n) = (plan.m, plan.k, plan.n);
            let gd = g.data();
            if wants(*a) {
                let mut ga = vec![T::zero(); av.numel()];
                for (bi, (&ia, &ib)) in plan.a_batches.iter().zip(&plan.b_batches).enumerate() {
                    gemm_nt(
                        m,
                        n,
                        k,
                        &gd[bi * m * n..(bi + 1) * m * n],
                        &bv.data()[ib * k * n..(ib + 1) * k * n],
                        &mut ga[ia * m * k..(ia + 1) * m * k],
                    );
                }
                add_grad(grads, *a, Tensor::new(av.shape().to_vec(), ga)?);
            }
            if wants(*b) {
                let mut gb = vec![T::zero(); bv.numel()];
                for (bi, (&ia, &ib)) in plan.a_batches.iter().zip(&plan.b_batches).enumerate() {
                    gemm_tn(
                        k,
                        m,
                        n,
                        &av.data()[ia * m * k..(ia + 1) * m * k],
                        &gd[bi * m * n..(bi + 1) * m * n],
                        &mut gb[ib * k * n..(ib + 1) * k * n],
                    );
                }
                add_grad(grads, *b, Tensor::new(bv.shape().to_vec(), gb)?);
            }
        }
        Op::Relu(a) => {
            let x = val(*a);
            let gx = Tensor::new(
                x.shape().to_vec(),
                x.data()
                    .iter()
                    .zip(g.data())
                    .map(|(&xv, &gv)| if xv > T::zero() { gv } else { T::zero() })
                    .collect(),
            )?;
            add_grad(grads, *a, gx);
        }
        Op::Tanh(a) => {
            let y = &node.value;
            let gx = Tensor::new(
                y.shape().to_vec(),
                y.data()
                    .iter()
                    .zip(g.data())
                    .map(|(&yv, &gv)| gv * (T::one() - yv * yv))
                    .collect(),
            )?;
            add_grad(grads, *a, gx);
        }
        Op::Sigmoid(a) => {
            let y = &node.value;
            let gx = Tensor::new(
                y.shape().to_vec(),
                y.data()
                    .iter()
                    .zip(g.data())
                    .map(|(&yv, &gv)| gv * yv * (T::one() - yv))
                    .collect(),
            )?;
            add_grad(grads, *a, gx);
        }
        Op::Softmax(a, axis) => {
            let y = &node.value;
            let (outer, len, inner) = axis_extents(y.shape(), *axis);
            let (yd, gd) = (y.data(), g.data());
            let mut gx = vec![T::zero(); y.numel()];
            for o in 0..outer {
                for i in 0..inner {
                    let base = o * len * inner + i;
                    let mut dot = T::zero();
                    for j in 0..len {
                        dot += yd[base + j * inner] * gd[base + j * inner];
                    }
                    for j in 0..len {
                        let p = base + j * inner;
                        gx[p] = yd[p] * (gd[p] - dot);
                    }
                }
            }
            add_grad(grads, *a, Tensor::new(y.shape().to_vec(), gx)?);
        }
        Op::LayerNorm {
            x,
            gain,
            bias,
            xhat,
            rstd,
        } => {
            let d = val(*gain).numel();
            let gv = val(*gain).data();
            let gd = g.data();
            let rows = gd.len() / d.max(1);
            if wants(*x) {
                let mut gx = vec![T::zero(); gd.len()];
                let inv_d = T::one() / T::cast(d as f64);
                for r in 0..rows {
                    let row = r * d..(r + 1) * d;
                    let mut mean_gy = T::zero();
                    let mut mean_gy_xhat = T::zero();
                    for j in row.clone() {
                        let gy = gd[j] * gv[j - r * d];
                        mean_gy += gy;
                        mean_gy_xhat += gy * xhat[j];
                    }
                    mean_gy *= inv_d;
                    mean_gy_xhat *= inv_d;
                    for j in row {
                        let gy = gd[j] * gv[j - r * d];
                        gx[j] = rstd[r] * (gy - mean_gy - xhat[j] * mean_gy_xhat);
                    }
                }
                add_grad(grads, *x, Tensor::new(val(*x).shape().to_vec(), gx)?);
            }
            if wants(*gain) {
                let mut gg = vec![T::zero(); d];
                for (j, (&gy, &xh)) in gd.iter().zip(xhat).enumerate() {
                    gg[j % d] += gy * xh;
                }
                add_grad(grads, *gain, Tensor::new(val(*gain).shape().to_vec(), gg)?);
            }
            if wants(*bias) {
                let mut gb = vec![T::zero(); d];
                for (j, &gy) in gd.iter().enumerate() {
                    gb[j % d] += gy;
                }
                add_grad(grads, *bias, Tensor::new(val(*bias).shape().to_vec(), gb)?);
            }
        }
        Op::Embedding { table, ids } => {
            let tv = val(*table);
            let d = tv.shape()[1];
            let mut gt = vec![T::zero(); tv.numel()];
            for (pos, &i) in ids.iter().enumerate() {
                for j in 0..d {
                    gt[i * d + j] += g.data()[pos * d + j];
                }
            }
            add_grad(grads, *table, Tensor::new(tv.shape().to_vec(), gt)?);
        }
        Op::Reshape(a) => add_grad(grads, *a, g.reshape(val(*a).shape())?),
        Op::Permute(a, perm) => {
            let mut inv = vec![0; perm.len()];
            for (i, &p) in perm.iter().enumerate() {
                inv[p] = i;
            }
            add_grad(grads, *a, g.permute(&inv)?);
        }
        Op::Concat(parts, axis) => {
            let mut start = 0;
            for &p in parts {
                let len = val(p).shape()[*axis];
                if wants(p) {
                    add_grad(grads, p, g.narrow(*axis, start, len)?);
                }
                start += len;
            }
        }
        Op::Narrow { x, axis, start } => {
            let xs = val(*x).shape();
            let (outer, full, inner) = axis_extents(xs, *axis);
            let len = g.shape()[*axis];
            let mut gx = vec![T::zero(); numel(xs)];
            for o in 0..outer {
                let dst = o * full * inner + start * inner;
                gx[dst..dst + len * inner]
                    .copy_from_slice(&g.data()[o * len * inner..(o + 1) * len * inner]);
            }
            add_grad(grads, *x, Tensor::new(xs.to_vec(), gx)?);
        }
        Op::Sum(a) => {
            add_grad(grads, *a, Tensor::full(val(*a).shape(), g.item()));
        }
        Op::Noise { x, z, rms } => {
            let xv = val(*x);
            let mut gx = g.clone();
            if *rms > 0.0 {
                let gz: f64 = g.data().iter().zip(z).map(|(a, b)| a.as_f64() * b.as_f64()).sum();
                let k = gz / (xv.numel() as f64 * rms);
                for (o, xi) in gx.data_mut().iter_mut().zip(xv.data()) {
                    *o = T::cast(o.as_f64() + k * xi.as_f64());
                }
            }
            add_grad(grads, *x, gx);
        }
        Op::SoftCrossEntropy { logits, target } => {
            let lv = val(*logits);
            let v = *lv.shape().last().unwrap_or(&1);
            let probs = lv.softmax(lv.ndim() - 1)?;
            let gs = g.item();
            let mut gx = vec![T::zero(); lv.numel()];
            for ((gr, pr), qr) in gx
                .chunks_mut(v)
                .zip(probs.data().chunks(v))
                .zip(target.data().chunks(v))
            {
                let mass: T = qr.iter().copied().sum();
                for ((gv, &p), &q) in gr.iter_mut().zip(pr).zip(qr) {
                    *gv = gs * (p * mass - q);
                }
            }
            add_grad(grads, *logits, Tensor::new(lv.shape().to_vec(), gx)?);
        }
    }
    Ok(())
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn value(&self) -> Arc<Tensor<T>> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    fn unary(self, value: Tensor<T>, op: Op<T>) -> Var<'t, T> {
        self.tape.push(value, op, &[self.id])
    }

    fn binary(self, other: Var<'t, T>, value: Tensor<T>, op: Op<T>) -> Var<'t, T> {
        self.tape.push(value, op, &[self.id, other.id])
    }

    pub fn add(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let out = self.value().add(&other.value())?;
        Ok(self.binary(other, out, Op::Add(self.id, other.id)))
    }

    pub fn sub(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let out = self.value().sub(&other.value())?;
        Ok(self.binary(other, out, Op::Sub(self.id, other.id)))
    }

    pub fn mul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let out = self.value().mul(&other.value())?;
        Ok(self.binary(other, out, Op::Mul(self.id, other.id)))
    }

    pub fn scale(self, s: f64) -> Var<'t, T> {
        let s = T::cast(s);
        let out = self.value().scale(s);
        self.unary(out, Op::Scale(self.id, s))
    }

    pub fn matmul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let out = self.value().matmul(&other.value())?;
        Ok(self.binary(other, out, Op::MatMul(self.id, other.id)))
    }

    pub fn relu(self) -> Var<'t, T> {
        let out = self.value().map(|v| v.max(T::zero()));
        self.unary(out, Op::Relu(self.id))
    }

    pub fn tanh(self) -> Var<'t, T> {
        let out = self.value().map(|v| v.tanh());
        self.unary(out, Op::Tanh(self.id))
    }

    pub fn sigmoid(self) -> Var<'t, T> {
        let out = self.value().map(|v| T::one() / (T::one() + (-v).exp()));
        self.unary(out, Op::Sigmoid(self.id))
    }

    pub fn softmax(self, axis: usize) -> Result<Var<'t, T>> {
        let out = self.value().softmax(axis)?;
        Ok(self.unary(out, Op::Softmax(self.id, axis)))
    }

    /// Normalizes over the last axis, then applies `gain * x + bias`.
    pub fn layer_norm(self, gain: Var<'t, T>, bias: Var<'t, T>, eps: f64) -> Result<Var<'t, T>> {
        let x = self.value();
        let d = *x.shape().last().unwrap_or(&0);
        if d == 0 {
            return Err(TensorError::Dimension {
                op: "layer_norm",
                msg: format!("zero-size last dimension in {:?}", x.shape()),
            });
        }
        let (gv, bv) = (gain.value(), bias.value());
        if gv.shape() != [d] || bv.shape() != [d] {
            return Err(TensorError::Shape {
                op: "layer_norm",
                lhs: x.shape().to_vec(),
                rhs: gv.shape().to_vec(),
            });
        }
        let eps = T::cast(eps);
        let inv_d = T::one() / T::cast(d as f64);
        let rows = x.numel() / d;
        let mut xhat = Vec::with_capacity(x.numel());
        let mut rstd = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(x.numel());
        for row in x.data().chunks(d) {
            let mean = row.iter().copied().sum::<T>() * inv_d;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
            let r = T::one() / (var + eps).sqrt();
            rstd.push(r);
            for (j, &v) in row.iter().enumerate() {
                let h = (v - mean) * r;
                xhat.push(h);
                out.push(gv.data()[j] * h + bv.data()[j]);
            }
        }
        let out = Tensor::new(x.shape().to_vec(), out)?;
        Ok(self.tape.push(
            out,
            Op::LayerNorm {
                x: self.id,
                gain: gain.id,
                bias: bias.id,
                xhat,
                rstd,
            },
            &[self.id, gain.id, bias.id],
        ))
    }

    /// Inverted dropout: identity outside training or for `p == 0`.
    pub fn dropout(self, p: f64) -> Result<Var<'t, T>> {
        if !(0.0..1.0).contains(&p) {
            return Err(TensorError::Config(format!("dropout probability {p} not in [0, 1)")));
        }
        if !self.tape.training || p == 0.0 {
            return Ok(self);
        }
        let mut rng = self.tape.next_stream();
        let keep = T::cast(1.0 / (1.0 - p));
        let shape = self.shape();
        let mask = Tensor::from_fn(&shape, |_| {
            if rng.random::<f64>() < p {
                T::zero()
            } else {
                keep
            }
        });
        let mask = self.tape.constant(mask);
        self.mul(mask)
    }

    /// Adds Gaussian noise with standard deviation `scale * rms(self)` while
    /// training. The gradient includes the dependence of the scale on `self`.
    pub fn noise(self, scale: f64) -> Result<Var<'t, T>> {
        if scale < 0.0 {
            return Err(TensorError::Config(format!("noise scale {scale} is negative")));
        }
        if !self.tape.training || scale == 0.0 {
            return Ok(self);
        }
        let x = self.value();
        let rms = (x.data().iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>() / x.numel().max(1) as f64).sqrt();
        let mut rng = self.tape.next_stream();
        let z: Vec<T> = (0..x.numel())
            .map(|_| {
                let n: f64 = StandardNormal.sample(&mut rng);
                T::cast(n * scale)
            })
            .collect();
        let data = x
            .data()
            .iter()
            .zip(&z)
            .map(|(v, e)| T::cast(v.as_f64() + e.as_f64() * rms))
            .collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        Ok(self.unary(out, Op::Noise { x: self.id, z, rms }))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t, T>> {
        let out = self.value().reshape(shape)?;
        Ok(self.unary(out, Op::Reshape(self.id)))
    }

    pub fn permute(self, perm: &[usize]) -> Result<Var<'t, T>> {
        let out = self.value().permute(perm)?;
        Ok(self.unary(out, Op::Permute(self.id, perm.to_vec())))
    }

    /// Swaps the last two axes.
    pub fn transpose(self) -> Result<Var<'t, T>> {
        let nd = self.shape().len();
        if nd < 2 {
            return Err(TensorError::Dimension {
                op: "transpose",
                msg: format!("needs at least 2 axes, got {:?}", self.shape()),
            });
        }
        let mut perm: Vec<usize> = (0..nd).collect();
        perm.swap(nd - 2, nd - 1);
        self.permute(&perm)
    }

    pub fn narrow(self, axis: usize, start: usize, len: usize) -> Result<Var<'t, T>> {
        let out = self.value().narrow(axis, start, len)?;
        Ok(self.unary(
            out,
            Op::Narrow {
                x: self.id,
                axis,
                start,
            },
        ))
    }

    pub fn sum(self) -> Var<'t, T> {
        let out = Tensor::scalar(self.value().sum());
        self.unary(out, Op::Sum(self.id))
    }

    pub fn mean(self) -> Var<'t, T> {
        let n = self.value().numel().max(1);
        self.sum().scale(1.0 / n as f64)
    }

    /// `sum_rows sum_v -target[r, v] * log_softmax(self)[r, v]` over the last
    /// axis. Rows whose target is all zero contribute nothing.
    pub fn soft_cross_entropy(self, target: impl Into<Arc<Tensor<T>>>) -> Result<Var<'t, T>> {
        let target = target.into();
        let lv = self.value();
        if lv.shape() != target.shape() || lv.ndim() == 0 {
            return Err(TensorError::Shape {
                op: "soft_cross_entropy",
                lhs: lv.shape().to_vec(),
                rhs: target.shape().to_vec(),
            });
        }
        let logp = lv.log_softmax()?;
        let mut total = T::zero();
        for (&q, &l) in target.data().iter().zip(logp.data()) {
            if q != T::zero() {
                total -= q * l;
            }
        }
        Ok(self.unary(
            Tensor::scalar(total),
            Op::SoftCrossEntropy {
                logits: self.id,
                target,
            },
        ))
    }
}

/// Shape of an elementwise op between `a` and `b`, for callers that need it up front.
pub fn broadcast_shapes(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    broadcast_shape("broadcast", a, b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let tape = Tape::<f64>::new(false, 0);
        let x = tape.leaf(Tensor::from_fn(&[2, 3], |i| i as f64));
        let g = tape.backward(x.sum()).unwrap();
        assert_eq!(g.get(x).unwrap(), &Tensor::ones(&[2, 3]));
    }

    #[test]
    fn square_gradient() {
        let tape = Tape::<f64>::new(false, 0);
        let x = tape.leaf(Tensor::scalar(3.0));
        let y = x.mul(x).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().item(), 6.0);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let tape = Tape::<f64>::new(false, 0);
        let x = tape.leaf(Tensor::zeros(&[2]));
        assert!(matches!(tape.backward(x), Err(TensorError::Contract(_))));
    }

    #[test]
    fn backward_into_accumulates() {
        let mut store = ParamStore::<f64>::new();
        let w = store.add("w", Tensor::from_vec(vec![1.0, 2.0])).unwrap();
        for _ in 0..2 {
            let tape = Tape::new(false, 0);
            let p = tape.param(&store, w);
            tape.backward_into(p.sum(), &mut store).unwrap();
        }
        assert_eq!(store.grad(w).unwrap().data(), &[2.0, 2.0]);
        store.zero_grad();
        assert!(store.grad(w).is_none());
    }

    #[test]
    fn dropout_identity_cases() {
        let x = Tensor::<f64>::from_fn(&[10], |i| i as f64);
        let tape = Tape::new(true, 1);
        let v = tape.constant(x.clone());
        assert_eq!(*v.dropout(0.0).unwrap().value(), x);
        let eval = Tape::new(false, 1);
        let v = eval.constant(x.clone());
        assert_eq!(*v.dropout(0.7).unwrap().value(), x);
        assert!(matches!(v.dropout(1.0), Err(TensorError::Config(_))));
    }

    #[test]
    fn dropout_mean_within_three_sigma() {
        let n = 100_000;
        let tape = Tape::<f64>::new(true, 42);
        let v = tape.constant(Tensor::ones(&[n]));
        let out = v.dropout(0.5).unwrap().value();
        let mean = out.sum() / n as f64;
        // each entry is 0 or 2 with equal odds: variance 1, sd of mean 1/sqrt(n)
        let sigma = 1.0 / (n as f64).sqrt();
        assert!((mean - 1.0).abs() < 3.0 * sigma, "mean {mean}");
    }

    #[test]
    fn dropout_is_reproducible_per_seed() {
        let run = |seed| {
            let tape = Tape::<f32>::new(true, seed);
            let v = tape.constant(Tensor::ones(&[64]));
            let a = v.dropout(0.3).unwrap().value();
            let b = v.dropout(0.3).unwrap().value();
            ((*a).clone(), (*b).clone())
        };
        let (a1, b1) = run(7);
        let (a2, b2) = run(7);
        assert_eq!(a1, a2);
        assert_eq!(b1, b2);
        assert_ne!(a1, b1, "successive ops draw distinct streams");
    }

    #[test]
    fn layer_norm_cases() {
        let tape = Tape::<f64>::new(false, 0);
        let one = tape.constant(Tensor::ones(&[3]));
        let zero = tape.constant(Tensor::zeros(&[3]));
        let c = tape.constant(Tensor::full(&[3], 4.0));
        let out = c.layer_norm(one, zero, 1e-6).unwrap().value();
        assert!(out.data().iter().all(|&v| v == 0.0));

        let b = tape.constant(Tensor::from_vec(vec![0.5, -1.0, 2.0]));
        let x = tape.constant(Tensor::from_vec(vec![1.0, 2.0, 3.0]));
        let out = x.layer_norm(zero, b, 1e-6).unwrap().value();
        assert_eq!(out.data(), &[0.5, -1.0, 2.0]);

        let out = x.layer_norm(one, zero, 0.0).unwrap().value();
        let s = 1.5f64.sqrt();
        for (a, e) in out.data().iter().zip([-s, 0.0, s]) {
            assert!((a - e).abs() < 1e-12);
        }

        let empty = tape.constant(Tensor::zeros(&[2, 0]));
        assert!(empty.layer_norm(one, zero, 1e-6).is_err());
    }

    #[test]
    fn embedding_cases() {
        let tape = Tape::<f64>::new(false, 0);
        let table = tape.leaf(Tensor::from_fn(&[4, 2], |i| i as f64));
        let out = tape.embedding(table, &[0], &[1]).unwrap();
        assert_eq!(out.value().data(), &[0.0, 1.0]);
        let rep = tape.embedding(table, &[2, 2], &[2]).unwrap().value();
        assert_eq!(rep.data()[..2], rep.data()[2..]);
        let err = tape.embedding(table, &[1, 9], &[2]).unwrap_err();
        assert_eq!(
            err,
            TensorError::Index {
                op: "embedding",
                index: 9,
                bound: 4,
                position: 1
            }
        );
        let y = tape.embedding(table, &[2], &[1]).unwrap();
        let g = tape.backward(y.sum()).unwrap();
        let gt = g.get(table).unwrap();
        assert_eq!(gt.data(), &[0., 0., 0., 0., 1., 1., 0., 0.]);
    }

    #[test]
    fn noise_statistics() {
        let n = 100_000;
        let tape = Tape::<f64>::new(true, 3);
        let x = Tensor::from_fn(&[n], |i| ((i % 7) as f64) - 3.0);
        let rms = (x.data().iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
        let v = tape.constant(x.clone());
        let out = v.noise(0.1).unwrap().value();
        let d: Vec<f64> = out.data().iter().zip(x.data()).map(|(a, b)| a - b).collect();
        let mean = d.iter().sum::<f64>() / n as f64;
        let sd = (d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64).sqrt();
        assert!((sd / (0.1 * rms) - 1.0).abs() < 0.05, "sd {sd}");
        assert_eq!(*v.noise(0.0).unwrap().value(), x);
        let eval = Tape::<f64>::new(false, 3);
        assert_eq!(*eval.constant(x.clone()).noise(0.1).unwrap().value(), x);
    }

    #[test]
    fn fully_masked_softmax_row_has_zero_gradient() {
        let tape = Tape::<f64>::new(false, 0);
        let x = tape.leaf(Tensor::zeros(&[2, 2]));
        let m = tape.constant(Tensor::from_f64(&[2, 2], &[0.0, 0.0, f64::NEG_INFINITY, f64::NEG_INFINITY]).unwrap());
        let y = x.add(m).unwrap().softmax(1).unwrap();
        assert_eq!(&y.value().data()[2..], &[0.0, 0.0]);
        let w = tape.constant(Tensor::from_f64(&[2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap());
        let g = tape.backward(y.mul(w).unwrap().sum()).unwrap();
        assert!(g.get(x).unwrap().all_finite());
    }
}
