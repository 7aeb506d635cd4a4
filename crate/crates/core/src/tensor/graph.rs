use std::sync::atomic::{AtomicU64, Ordering};

use super::kernels::{self, Patch};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

static NEXT_GRAPH: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    pub(crate) id: usize,
    pub(crate) graph: u64,
}

#[derive(Debug)]
pub(crate) enum Op<T> {
    Leaf,
    Conv2d { x: usize, k: usize, b: usize, patch: Patch },
    ConvTranspose { y: usize, k: usize, b: usize, patch: Patch },
    MaxPool { x: usize, argmax: Vec<u32> },
    Upsample { x: usize },
    Dense { x: usize, w: usize, b: usize },
    Sigmoid { x: usize },
    Tanh { x: usize },
    LeakyRelu { x: usize, slope: T },
    Concat { parts: Vec<usize>, axis: usize },
    Narrow { x: usize, axis: usize, start: usize },
    Reshape { x: usize },
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Affine { x: usize, scale: T },
    Abs { x: usize },
    Square { x: usize },
    Sum { x: usize },
    Ln { x: usize },
    Clamp { x: usize, lo: T, hi: T },
    Diff { x: usize, axis: usize },
    TileSpatial { x: usize },
    Mask { x: usize, mask: Vec<T> },
}

impl<T> Op<T> {
    /// Name used by the backward fault hook.
    pub(crate) fn kind(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::ConvTranspose { .. } => "conv2d_transpose",
            Op::MaxPool { .. } => "max_pool2d",
            Op::Upsample { .. } => "upsample",
            Op::Dense { .. } => "dense",
            Op::Sigmoid { .. } => "sigmoid",
            Op::Tanh { .. } => "tanh",
            Op::LeakyRelu { .. } => "leaky_relu",
            Op::Concat { .. } => "concat",
            Op::Narrow { .. } => "narrow",
            Op::Reshape { .. } => "reshape",
            Op::Add { .. } => "add",
            Op::Sub { .. } => "sub",
            Op::Mul { .. } => "mul",
            Op::Affine { .. } => "affine",
            Op::Abs { .. } => "abs",
            Op::Square { .. } => "square",
            Op::Sum { .. } => "sum",
            Op::Ln { .. } => "ln",
            Op::Clamp { .. } => "clamp",
            Op::Diff { .. } => "diff",
            Op::TileSpatial { .. } => "tile_spatial",
            Op::Mask { .. } => "mask",
        }
    }
}

thread_local! {
    static CORRUPT_BACKWARD: std::cell::RefCell<Option<String>> = const { std::cell::RefCell::new(None) };
}

/// Test fixture: on this thread, scale the incoming gradient of every node of
/// kind `op` (e.g. `"conv2d"`) by 1.5 during backward. `None` restores
/// correct behaviour.
#[doc(hidden)]
pub fn corrupt_backward(op: Option<&str>) {
    CORRUPT_BACKWARD.with(|c| *c.borrow_mut() = op.map(str::to_string));
}

fn is_corrupted(kind: &str) -> bool {
    CORRUPT_BACKWARD.with(|c| c.borrow().as_deref() == Some(kind))
}

pub(crate) struct Node<T> {
    pub value: Tensor<T>,
    pub op: Op<T>,
    pub requires_grad: bool,
}

/// Tape of one forward pass. Nodes are appended in evaluation order, so the
/// reverse of insertion order is a valid reverse-topological order.
pub struct Graph<T: Scalar> {
    id: u64,
    pub(crate) nodes: Vec<Node<T>>,
    consumed: bool,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Splits a shape around `axis` into (outer, extent, inner) counts.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { id: NEXT_GRAPH.fetch_add(1, Ordering::Relaxed), nodes: Vec::new(), consumed: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a value that takes no gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Records a differentiable input.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A constant copy of `v`'s current value.
    pub fn detach(&mut self, v: Var) -> Var {
        let mut value = self.value(v).clone();
        value.set_grad(None).expect("clearing gradient");
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.node(v).value.shape()
    }

    pub fn data(&self, v: Var) -> &[T] {
        self.node(v).value.data()
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.node(v).value.grad()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.node(v).requires_grad
    }

    pub(crate) fn node(&self, v: Var) -> &Node<T> {
        assert_eq!(v.graph, self.id, "variable belongs to a different graph");
        &self.nodes[v.id]
    }

    pub(crate) fn owns(&self, v: Var) -> bool {
        v.graph == self.id && v.id < self.nodes.len()
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var { id: self.nodes.len() - 1, graph: self.id }
    }

    /// Pushes a derived node; it requires grad if any parent does.
    pub(crate) fn derive(&mut self, value: Tensor<T>, op: Op<T>, parents: &[Var]) -> Var {
        let rg = parents.iter().any(|&p| self.node(p).requires_grad);
        self.push(value, op, rg)
    }

    /// Clears every stored gradient so `backward` may run again.
    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.value.set_grad(None).expect("clearing gradient");
        }
        self.consumed = false;
    }

    /// Reverse-mode accumulation from a one-element `loss`. Gradients land in
    /// the `grad` field of every node on a path from a differentiable input.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.owns(loss) {
            return Err(Error::NoGraph);
        }
        if self.consumed {
            return Err(Error::GraphReused);
        }
        let root = &self.nodes[loss.id];
        if root.value.numel() != 1 {
            return Err(Error::InvalidShape(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        if !root.requires_grad {
            return Err(Error::NoGraph);
        }
        self.consumed = true;

        let mut grads: Vec<Option<Vec<T>>> = (0..=loss.id).map(|_| None).collect();
        grads[loss.id] = Some(vec![T::one()]);
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            if !self.nodes[id].requires_grad {
                continue;
            }
            if is_corrupted(self.nodes[id].op.kind()) {
                let skewed: Vec<T> = g.iter().map(|&v| v * T::lit(1.5)).collect();
                self.propagate(id, &skewed, &mut grads);
            } else {
                self.propagate(id, &g, &mut grads);
            }
            if !g.iter().all(|v| v.is_finite()) {
                return Err(Error::Numeric(format!("gradient of node {id} is not finite")));
            }
            self.nodes[id].value.set_grad(Some(g))?;
        }
        Ok(())
    }

    fn propagate(&self, id: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[id];
        let out = node.value.data();
        let nodes = &self.nodes;
        // Accumulator for parent `p`, or None when it takes no gradient.
        macro_rules! acc {
            ($p:expr) => {{
                let p: usize = $p;
                if nodes[p].requires_grad {
                    let len = nodes[p].value.numel();
                    Some(grads[p].get_or_insert_with(|| vec![T::zero(); len]))
                } else {
                    None
                }
            }};
        }
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, k, b, patch } => {
                let xs = nodes[*x].value.shape();
                let (n, o) = (xs[0], nodes[*b].value.numel());
                let xv = nodes[*x].value.data();
                let kv = nodes[*k].value.data();
                let mut dx = acc!(*x).map(std::mem::take);
                let mut dk = acc!(*k).map(std::mem::take);
                let mut db = acc!(*b).map(std::mem::take);
                kernels::conv2d_backward(
                    xv,
                    n,
                    patch,
                    kv,
                    g,
                    o,
                    dx.as_deref_mut(),
                    dk.as_deref_mut(),
                    db.as_deref_mut(),
                );
                restore(grads, *x, dx);
                restore(grads, *k, dk);
                restore(grads, *b, db);
            }
            Op::ConvTranspose { y, k, b, patch } => {
                let ys = nodes[*y].value.shape();
                let (n, cin) = (ys[0], ys[1]);
                let yv = nodes[*y].value.data();
                let kv = nodes[*k].value.data();
                let mut dy = acc!(*y).map(std::mem::take);
                let mut dk = acc!(*k).map(std::mem::take);
                let mut db = acc!(*b).map(std::mem::take);
                kernels::conv_transpose_backward(
                    yv,
                    n,
                    cin,
                    patch,
                    kv,
                    g,
                    dy.as_deref_mut(),
                    dk.as_deref_mut(),
                    db.as_deref_mut(),
                );
                restore(grads, *y, dy);
                restore(grads, *k, dk);
                restore(grads, *b, db);
            }
            Op::MaxPool { x, argmax } => {
                if let Some(dx) = acc!(*x) {
                    for (&src, &gv) in argmax.iter().zip(g) {
                        dx[src as usize] += gv;
                    }
                }
            }
            Op::Upsample { x } => {
                let s = nodes[*x].value.shape();
                let (planes, h, w) = (s[0] * s[1], s[2], s[3]);
                if let Some(dx) = acc!(*x) {
                    kernels::upsample2_backward(g, planes, h, w, dx);
                }
            }
            Op::Dense { x, w, b } => {
                let xs = nodes[*x].value.shape();
                let (n, f) = (xs[0], xs[1]);
                let gdim = nodes[*b].value.numel();
                let xv = nodes[*x].value.data();
                let wv = nodes[*w].value.data();
                if let Some(dx) = acc!(*x) {
                    T::gemm(n, gdim, f, g, false, wv, true, dx, true);
                }
                if let Some(dw) = acc!(*w) {
                    T::gemm(f, n, gdim, xv, true, g, false, dw, true);
                }
                if let Some(db) = acc!(*b) {
                    for row in g.chunks(gdim) {
                        for (d, &v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                }
            }
            Op::Sigmoid { x } => {
                if let Some(dx) = acc!(*x) {
                    for ((d, &y), &gv) in dx.iter_mut().zip(out).zip(g) {
                        *d += gv * y * (T::one() - y);
                    }
                }
            }
            Op::Tanh { x } => {
                if let Some(dx) = acc!(*x) {
                    for ((d, &y), &gv) in dx.iter_mut().zip(out).zip(g) {
                        *d += gv * (T::one() - y * y);
                    }
                }
            }
            Op::LeakyRelu { x, slope } => {
                let xv = nodes[*x].value.data();
                if let Some(dx) = acc!(*x) {
                    for ((d, &xi), &gv) in dx.iter_mut().zip(xv).zip(g) {
                        *d += if xi > T::zero() { gv } else { gv * *slope };
                    }
                }
            }
            Op::Concat { parts, axis } => {
                let (outer, _, inner) = split_axis(node.value.shape(), *axis);
                let total = node.value.shape()[*axis] * inner;
                let mut offset = 0;
                for &p in parts {
                    let ext = nodes[p].value.shape()[*axis] * inner;
                    if let Some(dp) = acc!(p) {
                        for o in 0..outer {
                            let src = &g[o * total + offset..o * total + offset + ext];
                            for (d, &v) in dp[o * ext..(o + 1) * ext].iter_mut().zip(src) {
                                *d += v;
                            }
                        }
                    }
                    offset += ext;
                }
            }
            Op::Narrow { x, axis, start } => {
                let (outer, ext, inner) = split_axis(nodes[*x].value.shape(), *axis);
                let len = node.value.shape()[*axis];
                if let Some(dx) = acc!(*x) {
                    for o in 0..outer {
                        let dst = &mut dx[(o * ext + start) * inner..(o * ext + start + len) * inner];
                        let src = &g[o * len * inner..(o + 1) * len * inner];
                        for (d, &v) in dst.iter_mut().zip(src) {
                            *d += v;
                        }
                    }
                }
            }
            Op::Reshape { x } => {
                if let Some(dx) = acc!(*x) {
                    add_into(dx, g);
                }
            }
            Op::Add { a, b } => {
                if let Some(da) = acc!(*a) {
                    add_into(da, g);
                }
                if let Some(db) = acc!(*b) {
                    add_into(db, g);
                }
            }
            Op::Sub { a, b } => {
                if let Some(da) = acc!(*a) {
                    add_into(da, g);
                }
                if let Some(db) = acc!(*b) {
                    for (d, &v) in db.iter_mut().zip(g) {
                        *d -= v;
                    }
                }
            }
            Op::Mul { a, b } => {
                let av = nodes[*a].value.data();
                let bv = nodes[*b].value.data();
                if let Some(da) = acc!(*a) {
                    for ((d, &y), &gv) in da.iter_mut().zip(bv).zip(g) {
                        *d += gv * y;
                    }
                }
                if let Some(db) = acc!(*b) {
                    for ((d, &y), &gv) in db.iter_mut().zip(av).zip(g) {
                        *d += gv * y;
                    }
                }
            }
            Op::Affine { x, scale } => {
                if let Some(dx) = acc!(*x) {
                    for (d, &gv) in dx.iter_mut().zip(g) {
                        *d += gv * *scale;
                    }
                }
            }
            Op::Abs { x } => {
                let xv = nodes[*x].value.data();
                if let Some(dx) = acc!(*x) {
                    for ((d, &xi), &gv) in dx.iter_mut().zip(xv).zip(g) {
                        if xi > T::zero() {
                            *d += gv;
                        } else if xi < T::zero() {
                            *d -= gv;
                        }
                    }
                }
            }
            Op::Square { x } => {
                let xv = nodes[*x].value.data();
                let two = T::lit(2.0);
                if let Some(dx) = acc!(*x) {
                    for ((d, &xi), &gv) in dx.iter_mut().zip(xv).zip(g) {
                        *d += two * xi * gv;
                    }
                }
            }
            Op::Sum { x } => {
                if let Some(dx) = acc!(*x) {
                    let gv = g[0];
                    dx.iter_mut().for_each(|d| *d += gv);
                }
            }
            Op::Ln { x } => {
                let xv = nodes[*x].value.data();
                if let Some(dx) = acc!(*x) {
                    for ((d, &xi), &gv) in dx.iter_mut().zip(xv).zip(g) {
                        *d += gv / xi;
                    }
                }
            }
            Op::Clamp { x, lo, hi } => {
                let xv = nodes[*x].value.data();
                if let Some(dx) = acc!(*x) {
                    for ((d, &xi), &gv) in dx.iter_mut().zip(xv).zip(g) {
                        if xi >= *lo && xi <= *hi {
                            *d += gv;
                        }
                    }
                }
            }
            Op::Diff { x, axis } => {
                let (outer, ext, inner) = split_axis(nodes[*x].value.shape(), *axis);
                if let Some(dx) = acc!(*x) {
                    for o in 0..outer {
                        for i in 0..ext - 1 {
                            for j in 0..inner {
                                let gv = g[(o * (ext - 1) + i) * inner + j];
                                dx[(o * ext + i + 1) * inner + j] += gv;
                                dx[(o * ext + i) * inner + j] -= gv;
                            }
                        }
                    }
                }
            }
            Op::TileSpatial { x } => {
                let s = node.value.shape();
                let plane = s[2] * s[3];
                if let Some(dx) = acc!(*x) {
                    for (d, chunk) in dx.iter_mut().zip(g.chunks(plane)) {
                        *d += chunk.iter().copied().sum::<T>();
                    }
                }
            }
            Op::Mask { x, mask } => {
                if let Some(dx) = acc!(*x) {
                    for ((d, &m), &gv) in dx.iter_mut().zip(mask).zip(g) {
                        *d += gv * m;
                    }
                }
            }
        }
    }
}

fn restore<T>(grads: &mut [Option<Vec<T>>], id: usize, buf: Option<Vec<T>>) {
    if let Some(buf) = buf {
        grads[id] = Some(buf);
    }
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &v) in dst.iter_mut().zip(src) {
        *d += v;
    }
}
