//! Define-by-run tape.
//!
//! Every forward op appends a node holding its value and the rule needed to
//! push gradients back to its parents. Nodes only ever reference earlier
//! nodes, so the node order is already a topological order and `backward`
//! is a single reverse sweep.

use std::collections::BTreeMap;

use crate::error::{AutodiffError, Result};
use crate::param::{ParamId, ParamStore};
use crate::rnn::{gru_backward, GruTrace};
use crate::tensor::{gemm, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How the smaller operand of a binary elementwise op repeats.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Broadcast {
    Same,
    /// rhs shape is a proper suffix of lhs shape
    Rhs,
    /// lhs shape is a proper suffix of rhs shape
    Lhs,
}

#[derive(Clone, Debug)]
pub(crate) enum Op {
    Constant,
    Variable,
    Param(ParamId),
    MatMul(Var, Var),
    BatchMatMul(Var, Var),
    Add(Var, Var, Broadcast),
    Sub(Var, Var, Broadcast),
    Mul(Var, Var, Broadcast),
    Scale(Var, f64),
    AddScalar(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Gelu(Var),
    Dropout(Var, Vec<f64>),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Reshape(Var),
    Permute(Var, Vec<usize>),
    Narrow {
        x: Var,
        axis: usize,
        start: usize,
    },
    Concat(Vec<Var>, usize),
    GatherRows(Var, Vec<usize>),
    Sum(Var),
    MeanAxis(Var, usize),
    MaxAxis(Var, usize, Vec<usize>),
    Bce {
        logits: Var,
        target: Tensor,
        mask: Tensor,
        count: f64,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        mask: Vec<f64>,
        probs: Vec<f64>,
        count: f64,
    },
    Mse {
        pred: Var,
        target: Tensor,
        mask: Tensor,
        count: f64,
    },
    GruSeq {
        xg: Var,
        w_hh: Var,
        b_hh: Var,
        trace: Box<GruTrace>,
    },
}

impl Op {
    fn parents(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Constant | Variable | Param(_) => vec![],
            MatMul(a, b) | BatchMatMul(a, b) | Add(a, b, _) | Sub(a, b, _) | Mul(a, b, _) => {
                vec![*a, *b]
            }
            Scale(x, _) | AddScalar(x) | Sigmoid(x) | Tanh(x) | Relu(x) | Gelu(x) | Dropout(x, _)
            | Softmax(x) | Reshape(x) | Permute(x, _) | GatherRows(x, _) | Sum(x)
            | MeanAxis(x, _) | MaxAxis(x, _, _) => vec![*x],
            Narrow { x, .. } => vec![*x],
            LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Concat(xs, _) => xs.clone(),
            Bce { logits, .. } | CrossEntropy { logits, .. } => vec![*logits],
            Mse { pred, .. } => vec![*pred],
            GruSeq { xg, w_hh, b_hh, .. } => vec![*xg, *w_hh, *b_hh],
        }
    }
}

pub(crate) struct Node {
    pub(crate) value: Tensor,
    pub(crate) op: Op,
    pub(crate) needs_grad: bool,
}

/// Records a computation for reverse-mode differentiation.
#[derive(Default)]
pub struct Tape {
    pub(crate) nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients {
    leaves: Vec<Option<Tensor>>,
    params: BTreeMap<ParamId, Tensor>,
}

impl Gradients {
    /// Gradient of a leaf created with [`Tape::variable`] or [`Tape::param`].
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.leaves.get(v.0).and_then(|g| g.as_ref())
    }

    /// Accumulated gradient of a parameter; `None` if it was not reached.
    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.get(&id)
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.params.iter().map(|(k, v)| (*k, v))
    }

    pub fn into_params(self) -> BTreeMap<ParamId, Tensor> {
        self.params
    }
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Constant,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf whose gradient is reported by [`Gradients::wrt`].
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Variable,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf bound to a stored parameter. Frozen parameters are recorded as
    /// values only and never accumulate a gradient.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let p = store.get(id);
        self.nodes.push(Node {
            value: p.value.clone(),
            op: Op::Param(id),
            needs_grad: !p.frozen,
        });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn push(&mut self, value: Tensor, op: Op) -> Var {
        let needs_grad = op.parents().iter().any(|p| self.nodes[p.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Reverse sweep from a single-element root.
    ///
    /// The tape is left untouched, so calling this twice yields identical
    /// gradients.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let root_value = &self.nodes[root.0].value;
        if root_value.len() != 1 {
            return Err(AutodiffError::Usage(format!(
                "backward needs a scalar root, got shape {:?}",
                root_value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor::full(root_value.shape(), 1.0));
        let mut params: BTreeMap<ParamId, Tensor> = BTreeMap::new();

        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                grads[i] = None;
                continue;
            }
            match &node.op {
                Op::Constant | Op::Variable => {}
                Op::Param(id) => {
                    if let Some(g) = &grads[i] {
                        match params.get_mut(id) {
                            Some(acc) => add_into(acc.data_mut(), g.data()),
                            None => {
                                params.insert(*id, g.clone());
                            }
                        }
                    }
                }
                op => {
                    let Some(g) = grads[i].take() else { continue };
                    self.backward_op(i, op, &g, &mut grads);
                }
            }
        }
        Ok(Gradients {
            leaves: grads,
            params,
        })
    }

    fn buf<'g>(&self, grads: &'g mut [Option<Tensor>], v: Var) -> Option<&'g mut [f64]> {
        if !self.nodes[v.0].needs_grad {
            return None;
        }
        let slot = &mut grads[v.0];
        if slot.is_none() {
            *slot = Some(Tensor::zeros(self.nodes[v.0].value.shape()));
        }
        slot.as_mut().map(|t| t.data_mut())
    }

    /// Moves a gradient buffer out of its slot (creating it if needed) so
    /// several can be borrowed at once; return it with `put`.
    fn take(&self, grads: &mut [Option<Tensor>], v: Var) -> Option<Tensor> {
        if !self.nodes[v.0].needs_grad {
            return None;
        }
        Some(grads[v.0].take().unwrap_or_else(|| Tensor::zeros(self.nodes[v.0].value.shape())))
    }

    fn put(grads: &mut [Option<Tensor>], v: Var, t: Option<Tensor>) {
        if t.is_some() {
            grads[v.0] = t;
        }
    }

    fn backward_op(&self, i: usize, op: &Op, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let out = &self.nodes[i].value;
        let gd = g.data();
        match op {
            Op::Constant | Op::Variable | Op::Param(_) => unreachable!(),
            Op::MatMul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let (m, k) = (av.shape()[0], av.shape()[1]);
                let n = bv.shape()[1];
                if let Some(da) = self.buf(grads, *a) {
                    // dA = dC · Bᵀ
                    gemm(m, n, k, gd, (n, 1), bv.data(), (1, n), da, 1.0);
                }
                if let Some(db) = self.buf(grads, *b) {
                    // dB = Aᵀ · dC
                    gemm(k, m, n, av.data(), (1, k), gd, (n, 1), db, 1.0);
                }
            }
            Op::BatchMatMul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let (batch, m, k) = (av.shape()[0], av.shape()[1], av.shape()[2]);
                let n = bv.shape()[2];
                if let Some(da) = self.buf(grads, *a) {
                    for s in 0..batch {
                        gemm(
                            m,
                            n,
                            k,
                            &gd[s * m * n..],
                            (n, 1),
                            &bv.data()[s * k * n..],
                            (1, n),
                            &mut da[s * m * k..],
                            1.0,
                        );
                    }
                }
                if let Some(db) = self.buf(grads, *b) {
                    for s in 0..batch {
                        gemm(
                            k,
                            m,
                            n,
                            &av.data()[s * m * k..],
                            (1, k),
                            &gd[s * m * n..],
                            (n, 1),
                            &mut db[s * k * n..],
                            1.0,
                        );
                    }
                }
            }
            Op::Add(a, b, bc) => {
                self.binary_grad(grads, *a, *b, *bc, gd, |_, _| (1.0, 1.0));
            }
            Op::Sub(a, b, bc) => {
                self.binary_grad(grads, *a, *b, *bc, gd, |_, _| (1.0, -1.0));
            }
            Op::Mul(a, b, bc) => {
                self.binary_grad(grads, *a, *b, *bc, gd, |x, y| (y, x));
            }
            Op::Scale(x, c) => {
                if let Some(dx) = self.buf(grads, *x) {
                    for (d, gi) in dx.iter_mut().zip(gd) {
                        *d += c * gi;
                    }
                }
            }
            Op::AddScalar(x) | Op::Reshape(x) => {
                if let Some(dx) = self.buf(grads, *x) {
                    add_into(dx, gd);
                }
            }
            Op::Sigmoid(x) => {
                if let Some(dx) = self.buf(grads, *x) {
                    for ((d, gi), y) in dx.iter_mut().zip(gd).zip(out.data()) {
                        *d += gi * y * (1.0 - y);
                    }
                }
            }
            Op::Tanh(x) => {
                if let Some(dx) = self.buf(grads, *x) {
                    for ((d, gi), y) in dx.iter_mut().zip(gd).zip(out.data()) {
                        *d += gi * (1.0 - y * y);
                    }
                }
            }
            Op::Relu(x) => {
                if let Some(dx) = self.buf(grads, *x) {
                    for ((d, gi), y) in dx.iter_mut().zip(gd).zip(out.data()) {
                        if *y > 0.0 {
                            *d += gi;
                        }
                    }
                }
            }
            Op::Gelu(x) => {
                let xv = self.value(*x).data();
                if let Some(dx) = self.buf(grads, *x) {
                    for ((d, gi), &v) in dx.iter_mut().zip(gd).zip(xv) {
                        *d += gi * gelu_grad(v);
                    }
                }
            }
            Op::Dropout(x, mask) => {
                if let Some(dx) = self.buf(grads, *x) {
                    for ((d, gi), m) in dx.iter_mut().zip(gd).zip(mask) {
                        *d += gi * m;
                    }
                }
            }
            Op::Softmax(x) => {
                let c = *out.shape().last().unwrap_or(&1);
                if let Some(dx) = self.buf(grads, *x) {
                    for ((drow, grow), yrow) in dx
                        .chunks_mut(c)
                        .zip(gd.chunks(c))
                        .zip(out.data().chunks(c))
                    {
                        let dot: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                        for ((d, gi), y) in drow.iter_mut().zip(grow).zip(yrow) {
                            *d += y * (gi - dot);
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let d = self.value(*gamma).len();
                let gam = self.value(*gamma).data().to_vec();
                if let Some(dg) = self.buf(grads, *gamma) {
                    for (grow, hrow) in gd.chunks(d).zip(xhat.chunks(d)) {
                        for j in 0..d {
                            dg[j] += grow[j] * hrow[j];
                        }
                    }
                }
                if let Some(db) = self.buf(grads, *beta) {
                    for grow in gd.chunks(d) {
                        add_into(db, grow);
                    }
                }
                if let Some(dx) = self.buf(grads, *x) {
                    let nf = d as f64;
                    for (r, ((drow, grow), hrow)) in dx
                        .chunks_mut(d)
                        .zip(gd.chunks(d))
                        .zip(xhat.chunks(d))
                        .enumerate()
                    {
                        let mut sum_dh = 0.0;
                        let mut sum_dh_h = 0.0;
                        for j in 0..d {
                            let dh = grow[j] * gam[j];
                            sum_dh += dh;
                            sum_dh_h += dh * hrow[j];
                        }
                        for j in 0..d {
                            let dh = grow[j] * gam[j];
                            drow[j] += inv_std[r] / nf * (nf * dh - sum_dh - hrow[j] * sum_dh_h);
                        }
                    }
                }
            }
            Op::Permute(x, axes) => {
                if let Some(dx) = self.buf(grads, *x) {
                    let mut inverse = vec![0; axes.len()];
                    for (i, &a) in axes.iter().enumerate() {
                        inverse[a] = i;
                    }
                    let (back, _) = permute_data(gd, out.shape(), &inverse);
                    add_into(dx, &back);
                }
            }
            Op::Narrow { x, axis, start } => {
                let in_shape = self.value(*x).shape().to_vec();
                if let Some(dx) = self.buf(grads, *x) {
                    let (outer, len_in, inner) = split_axis(&in_shape, *axis);
                    let len_out = out.shape()[*axis];
                    for o in 0..outer {
                        for j in 0..len_out {
                            let src = (o * len_out + j) * inner;
                            let dst = (o * len_in + start + j) * inner;
                            add_into(&mut dx[dst..dst + inner], &gd[src..src + inner]);
                        }
                    }
                }
            }
            Op::Concat(xs, axis) => {
                let (outer, total, inner) = split_axis(out.shape(), *axis);
                let mut offset = 0;
                for x in xs {
                    let len = self.value(*x).shape()[*axis];
                    if let Some(dx) = self.buf(grads, *x) {
                        for o in 0..outer {
                            let src = (o * total + offset) * inner;
                            let dst = o * len * inner;
                            add_into(&mut dx[dst..dst + len * inner], &gd[src..src + len * inner]);
                        }
                    }
                    offset += len;
                }
            }
            Op::GatherRows(table, idx) => {
                let d = self.value(*table).shape()[1];
                if let Some(dt) = self.buf(grads, *table) {
                    for (r, &row) in idx.iter().enumerate() {
                        add_into(&mut dt[row * d..(row + 1) * d], &gd[r * d..(r + 1) * d]);
                    }
                }
            }
            Op::Sum(x) => {
                let g0 = gd[0];
                if let Some(dx) = self.buf(grads, *x) {
                    dx.iter_mut().for_each(|d| *d += g0);
                }
            }
            Op::MeanAxis(x, axis) => {
                let in_shape = self.value(*x).shape().to_vec();
                if let Some(dx) = self.buf(grads, *x) {
                    let (outer, len, inner) = split_axis(&in_shape, *axis);
                    let scale = 1.0 / len as f64;
                    for o in 0..outer {
                        for j in 0..len {
                            for k in 0..inner {
                                dx[(o * len + j) * inner + k] += gd[o * inner + k] * scale;
                            }
                        }
                    }
                }
            }
            Op::MaxAxis(x, axis, argmax) => {
                let in_shape = self.value(*x).shape().to_vec();
                if let Some(dx) = self.buf(grads, *x) {
                    let (_, len, inner) = split_axis(&in_shape, *axis);
                    for (flat, &j) in argmax.iter().enumerate() {
                        let (o, k) = (flat / inner, flat % inner);
                        dx[(o * len + j) * inner + k] += gd[flat];
                    }
                }
            }
            Op::Bce {
                logits,
                target,
                mask,
                count,
            } => {
                let g0 = gd[0];
                let xv = self.value(*logits).data();
                if let Some(dx) = self.buf(grads, *logits) {
                    if *count > 0.0 {
                        for (((d, &x), &y), &m) in dx
                            .iter_mut()
                            .zip(xv)
                            .zip(target.data())
                            .zip(mask.data())
                        {
                            *d += g0 * m * (sigmoid(x) - y) / count;
                        }
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                mask,
                probs,
                count,
            } => {
                let g0 = gd[0];
                let c = *self.value(*logits).shape().last().unwrap_or(&1);
                if let Some(dx) = self.buf(grads, *logits) {
                    if *count > 0.0 {
                        for (r, (&t, &m)) in targets.iter().zip(mask).enumerate() {
                            if m == 0.0 {
                                continue;
                            }
                            for j in 0..c {
                                let ind = if j == t { 1.0 } else { 0.0 };
                                dx[r * c + j] += g0 * m * (probs[r * c + j] - ind) / count;
                            }
                        }
                    }
                }
            }
            Op::GruSeq { xg, w_hh, b_hh, trace } => {
                let mut dx = self.take(grads, *xg);
                let mut dw = self.take(grads, *w_hh);
                let mut db = self.take(grads, *b_hh);
                gru_backward(
                    trace,
                    self.value(*w_hh).data(),
                    gd,
                    dx.as_mut().map(|t| t.data_mut()),
                    dw.as_mut().map(|t| t.data_mut()),
                    db.as_mut().map(|t| t.data_mut()),
                );
                Self::put(grads, *xg, dx);
                Self::put(grads, *w_hh, dw);
                Self::put(grads, *b_hh, db);
            }
            Op::Mse {
                pred,
                target,
                mask,
                count,
            } => {
                let g0 = gd[0];
                let pv = self.value(*pred).data();
                if let Some(dx) = self.buf(grads, *pred) {
                    if *count > 0.0 {
                        for (((d, &p), &y), &m) in dx
                            .iter_mut()
                            .zip(pv)
                            .zip(target.data())
                            .zip(mask.data())
                        {
                            *d += g0 * m * 2.0 * (p - y) / count;
                        }
                    }
                }
            }
        }
    }

    fn binary_grad(
        &self,
        grads: &mut [Option<Tensor>],
        a: Var,
        b: Var,
        bc: Broadcast,
        gd: &[f64],
        partials: impl Fn(f64, f64) -> (f64, f64),
    ) {
        let av = self.value(a).data();
        let bv = self.value(b).data();
        // Row length of the repeated operand; the other operand is full size.
        let period = match bc {
            Broadcast::Same => gd.len(),
            Broadcast::Rhs => bv.len(),
            Broadcast::Lhs => av.len(),
        }
        .max(1);
        let full_a = bc != Broadcast::Lhs;
        let full_b = bc != Broadcast::Rhs;
        if let Some(da) = self.buf(grads, a) {
            for (r, grow) in gd.chunks(period).enumerate() {
                let off = r * period;
                for (j, gi) in grow.iter().enumerate() {
                    let i = off + j;
                    let (x, y) = (av[if full_a { i } else { j }], bv[if full_b { i } else { j }]);
                    da[if full_a { i } else { j }] += gi * partials(x, y).0;
                }
            }
        }
        if let Some(db) = self.buf(grads, b) {
            for (r, grow) in gd.chunks(period).enumerate() {
                let off = r * period;
                for (j, gi) in grow.iter().enumerate() {
                    let i = off + j;
                    let (x, y) = (av[if full_a { i } else { j }], bv[if full_b { i } else { j }]);
                    db[if full_b { i } else { j }] += gi * partials(x, y).1;
                }
            }
        }
    }
}

pub(crate) fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// `(outer, axis_len, inner)` for a row-major shape split around `axis`.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn permute_data(data: &[f64], shape: &[usize], axes: &[usize]) -> (Vec<f64>, Vec<usize>) {
    let rank = shape.len();
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let mut in_strides = vec![1; rank];
    for d in (0..rank.saturating_sub(1)).rev() {
        in_strides[d] = in_strides[d + 1] * shape[d + 1];
    }
    let strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let mut out = Vec::with_capacity(data.len());
    let mut idx = vec![0usize; rank];
    let mut src = 0usize;
    for _ in 0..data.len() {
        out.push(data[src]);
        for d in (0..rank).rev() {
            idx[d] += 1;
            src += strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            src -= strides[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    (out, out_shape)
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}
