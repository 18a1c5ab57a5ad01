use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use super::kernels::{gemm_acc, gemm_at_acc, gemm_bt_acc, transpose_batched};
use super::{axis_extents, Tensor};
use crate::error::{Error, Result};
use crate::params::ParamStore;

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    idx: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduce {
    Sum,
    Mean,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul {
        a: usize,
        b: usize,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
        shared_rhs: bool,
    },
    Transpose {
        a: usize,
        batch: usize,
        rows: usize,
        cols: usize,
    },
    // `b` is broadcast over the leading dims of `a`.
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Affine { a: usize, scale: f64 },
    Tanh(usize),
    Sigmoid(usize),
    Relu(usize),
    Log1p(usize),
    Expm1(usize),
    Softmax { a: usize, axis: usize },
    Reduce {
        a: usize,
        kind: Reduce,
        axis: Option<usize>,
    },
    Concat { parts: Vec<usize>, axis: usize },
    Narrow { a: usize, axis: usize, start: usize },
    Reshape(usize),
    Gather { table: usize, ids: Vec<usize> },
    Standardize { a: usize, inv_std: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of primitive operations.
///
/// Nodes are appended as operations run, so every node appears after the
/// nodes producing its inputs and a reverse sweep is a valid topological
/// order for the chain rule. A tape is single-threaded; build one per
/// training step (or per replica).
#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
    bound: BTreeMap<String, Var>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            bound: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn idx(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.idx >= self.nodes.len() {
            return Err(Error::Detached);
        }
        Ok(v.idx)
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self.id,
            idx: self.nodes.len() - 1,
        }
    }

    fn rg(&self, idx: usize) -> bool {
        self.nodes[idx].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Binds a named parameter as a differentiable leaf. Repeated calls with
    /// the same name return the same leaf, so gradients from every use accumulate.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        if let Some(&v) = self.bound.get(name) {
            return Ok(v);
        }
        let value = store
            .get(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))?
            .clone();
        let v = self.leaf(value, true);
        self.bound.insert(name.to_string(), v);
        Ok(v)
    }

    /// Parameters bound on this tape, by name.
    pub fn bound_params(&self) -> &BTreeMap<String, Var> {
        &self.bound
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[self.idx(v).expect("var from another tape")].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    /// Matrix product. Supports `[m,k]·[k,n]`, `[B,m,k]·[k,n]` (shared right
    /// operand) and `[B,m,k]·[B,k,n]` (batched).
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let sa = self.nodes[ia].value.shape().to_vec();
        let sb = self.nodes[ib].value.shape().to_vec();
        let mismatch = || Error::ShapeMismatch {
            op: "matmul",
            lhs: sa.clone(),
            rhs: sb.clone(),
        };
        let (batch, m, k, n, shared_rhs, out_shape) = match (sa.as_slice(), sb.as_slice()) {
            ([m, k], [k2, n]) if k == k2 => (1, *m, *k, *n, true, vec![*m, *n]),
            ([bt, m, k], [k2, n]) if k == k2 => (*bt, *m, *k, *n, true, vec![*bt, *m, *n]),
            ([bt, m, k], [bt2, k2, n]) if k == k2 && bt == bt2 => {
                (*bt, *m, *k, *n, false, vec![*bt, *m, *n])
            }
            _ => return Err(mismatch()),
        };
        let ad = self.nodes[ia].value.data();
        let bd = self.nodes[ib].value.data();
        let mut out = vec![0.0; batch * m * n];
        if shared_rhs {
            gemm_acc(ad, bd, &mut out, batch * m, k, n);
        } else {
            for s in 0..batch {
                gemm_acc(
                    &ad[s * m * k..(s + 1) * m * k],
                    &bd[s * k * n..(s + 1) * k * n],
                    &mut out[s * m * n..(s + 1) * m * n],
                    m,
                    k,
                    n,
                );
            }
        }
        let rg = self.rg(ia) || self.rg(ib);
        let value = Tensor::new(out_shape, out)?;
        Ok(self.push(
            value,
            Op::MatMul {
                a: ia,
                b: ib,
                batch,
                m,
                k,
                n,
                shared_rhs,
            },
            rg,
        ))
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let shape = self.nodes[ia].value.shape().to_vec();
        if shape.len() < 2 {
            return Err(Error::InvalidAxis { axis: 1, shape });
        }
        let nd = shape.len();
        let (rows, cols) = (shape[nd - 2], shape[nd - 1]);
        let batch = shape[..nd - 2].iter().product();
        let data = transpose_batched(self.nodes[ia].value.data(), batch, rows, cols);
        let mut out_shape = shape;
        out_shape.swap(nd - 2, nd - 1);
        let rg = self.rg(ia);
        Ok(self.push(
            Tensor::new(out_shape, data)?,
            Op::Transpose {
                a: ia,
                batch,
                rows,
                cols,
            },
            rg,
        ))
    }

    fn broadcast_check(&self, op: &'static str, ia: usize, ib: usize) -> Result<()> {
        let sa = self.nodes[ia].value.shape();
        let sb = self.nodes[ib].value.shape();
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(Error::ShapeMismatch {
                op,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        Ok(())
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: impl Fn(usize, usize) -> Op,
    ) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        self.broadcast_check(name, ia, ib)?;
        let av = &self.nodes[ia].value;
        let bd = self.nodes[ib].value.data();
        let nb = bd.len();
        let data = av
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, bd[i % nb]))
            .collect();
        let value = Tensor::new(av.shape().to_vec(), data)?;
        let rg = self.rg(ia) || self.rg(ib);
        Ok(self.push(value, op(ia, ib), rg))
    }

    /// Elementwise `a + b`; `b` may match a suffix of `a`'s shape (bias add).
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, |a, b| Op::Add { a, b })
    }

    /// Elementwise `a - b` with the same broadcasting as [`Tape::add`].
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, |a, b| Op::Sub { a, b })
    }

    /// Elementwise product with the same broadcasting as [`Tape::add`].
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, |a, b| Op::Mul { a, b })
    }

    /// `scale * a + shift`.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Result<Var> {
        let ia = self.idx(a)?;
        let value = self.nodes[ia].value.map(|x| scale * x + shift);
        let rg = self.rg(ia);
        Ok(self.push(value, Op::Affine { a: ia, scale }, rg))
    }

    pub fn scale(&mut self, a: Var, scale: f64) -> Result<Var> {
        self.affine(a, scale, 0.0)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: impl Fn(usize) -> Op) -> Result<Var> {
        let ia = self.idx(a)?;
        let value = self.nodes[ia].value.map(f);
        let rg = self.rg(ia);
        Ok(self.push(value, op(ia), rg))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(a, f64::tanh, Op::Tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(a, sigmoid, Op::Sigmoid)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, |x| x.max(0.0), Op::Relu)
    }

    /// Elementwise `ln(1 + x)`; every element must exceed −1.
    pub fn log1p(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        if let Some(&bad) = self.nodes[ia].value.data().iter().find(|&&x| x <= -1.0 || x.is_nan()) {
            return Err(Error::Domain {
                op: "log1p",
                value: bad,
            });
        }
        self.unary(a, f64::ln_1p, Op::Log1p)
    }

    /// Elementwise `e^x − 1`.
    pub fn expm1(&mut self, a: Var) -> Result<Var> {
        self.unary(a, f64::exp_m1, Op::Expm1)
    }

    /// Softmax along `axis`, stabilized by subtracting the per-line maximum.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let ia = self.idx(a)?;
        let x = &self.nodes[ia].value;
        if axis >= x.ndim() {
            return Err(Error::InvalidAxis {
                axis,
                shape: x.shape().to_vec(),
            });
        }
        let (outer, dim, inner) = axis_extents(x.shape(), axis);
        let xd = x.data();
        let mut out = vec![0.0; xd.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| o * dim * inner + j * inner + i;
                let max = (0..dim).map(|j| xd[at(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for j in 0..dim {
                    let e = (xd[at(j)] - max).exp();
                    out[at(j)] = e;
                    total += e;
                }
                for j in 0..dim {
                    out[at(j)] /= total;
                }
            }
        }
        let value = Tensor::new(x.shape().to_vec(), out)?;
        let rg = self.rg(ia);
        Ok(self.push(value, Op::Softmax { a: ia, axis }, rg))
    }

    /// Sum or mean along `axis` (removing it), or over everything when `axis` is `None`.
    pub fn reduce(&mut self, a: Var, kind: Reduce, axis: Option<usize>) -> Result<Var> {
        let ia = self.idx(a)?;
        let x = &self.nodes[ia].value;
        let (shape, data) = match axis {
            None => {
                let total: f64 = x.data().iter().sum();
                let v = match kind {
                    Reduce::Sum => total,
                    Reduce::Mean => total / x.len() as f64,
                };
                (Vec::new(), vec![v])
            }
            Some(axis) => {
                if axis >= x.ndim() {
                    return Err(Error::InvalidAxis {
                        axis,
                        shape: x.shape().to_vec(),
                    });
                }
                let (outer, dim, inner) = axis_extents(x.shape(), axis);
                let xd = x.data();
                let mut out = vec![0.0; outer * inner];
                for o in 0..outer {
                    for j in 0..dim {
                        for i in 0..inner {
                            out[o * inner + i] += xd[o * dim * inner + j * inner + i];
                        }
                    }
                }
                if kind == Reduce::Mean {
                    let d = dim as f64;
                    out.iter_mut().for_each(|v| *v /= d);
                }
                let mut shape = x.shape().to_vec();
                shape.remove(axis);
                (shape, out)
            }
        };
        let rg = self.rg(ia);
        Ok(self.push(Tensor::new(shape, data)?, Op::Reduce { a: ia, kind, axis }, rg))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.reduce(a, Reduce::Sum, None)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.reduce(a, Reduce::Mean, None)
    }

    /// Concatenates along `axis`; all other dims must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let idxs = parts.iter().map(|&v| self.idx(v)).collect::<Result<Vec<_>>>()?;
        let first = idxs.first().ok_or_else(|| Error::Degenerate("concat of nothing".into()))?;
        let base = self.nodes[*first].value.shape().to_vec();
        if axis >= base.len() {
            return Err(Error::InvalidAxis { axis, shape: base });
        }
        let mut total = 0;
        for &i in &idxs {
            let s = self.nodes[i].value.shape();
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(d, (x, y))| d == axis || x == y);
            if !compatible {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: base.clone(),
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let (outer, _, inner) = axis_extents(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &i in &idxs {
                let v = &self.nodes[i].value;
                let chunk = v.shape()[axis] * inner;
                out.extend_from_slice(&v.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let rg = idxs.iter().any(|&i| self.rg(i));
        Ok(self.push(Tensor::new(shape, out)?, Op::Concat { parts: idxs, axis }, rg))
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let ia = self.idx(a)?;
        let x = &self.nodes[ia].value;
        if axis >= x.ndim() {
            return Err(Error::InvalidAxis {
                axis,
                shape: x.shape().to_vec(),
            });
        }
        let (outer, dim, inner) = axis_extents(x.shape(), axis);
        if start + len > dim {
            return Err(Error::ShapeMismatch {
                op: "narrow",
                lhs: x.shape().to_vec(),
                rhs: vec![start, len],
            });
        }
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * dim * inner + start * inner;
            out.extend_from_slice(&x.data()[base..base + len * inner]);
        }
        let mut shape = x.shape().to_vec();
        shape[axis] = len;
        let rg = self.rg(ia);
        Ok(self.push(Tensor::new(shape, out)?, Op::Narrow { a: ia, axis, start }, rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let ia = self.idx(a)?;
        let value = self.nodes[ia].value.clone().reshape(shape)?;
        let rg = self.rg(ia);
        Ok(self.push(value, Op::Reshape(ia), rg))
    }

    /// Row gather from a `[vocab, dim]` table.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let it = self.idx(table)?;
        let t = &self.nodes[it].value;
        let [vocab, dim] = *t.shape() else {
            return Err(Error::ShapeMismatch {
                op: "gather",
                lhs: t.shape().to_vec(),
                rhs: vec![ids.len()],
            });
        };
        let mut out = Vec::with_capacity(ids.len() * dim);
        for &id in ids {
            if id >= vocab {
                return Err(Error::IdOutOfRange { id, vocab });
            }
            out.extend_from_slice(&t.data()[id * dim..(id + 1) * dim]);
        }
        let rg = self.rg(it);
        Ok(self.push(
            Tensor::new(vec![ids.len(), dim], out)?,
            Op::Gather {
                table: it,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    /// Standardizes each position over the last axis: `(x − mean) / sqrt(var + eps)`.
    pub fn standardize(&mut self, a: Var, eps: f64) -> Result<Var> {
        let ia = self.idx(a)?;
        let x = &self.nodes[ia].value;
        let d = *x.shape().last().ok_or(Error::InvalidAxis {
            axis: 0,
            shape: Vec::new(),
        })?;
        if d == 0 {
            return Err(Error::Degenerate("standardize over an empty axis".into()));
        }
        let rows = x.len() / d;
        let mut out = vec![0.0; x.len()];
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &x.data()[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for (o, v) in out[r * d..(r + 1) * d].iter_mut().zip(row) {
                *o = (v - mean) * inv;
            }
            inv_std.push(inv);
        }
        let value = Tensor::new(x.shape().to_vec(), out)?;
        let rg = self.rg(ia);
        Ok(self.push(value, Op::Standardize { a: ia, inv_std }, rg))
    }

    /// Reverse sweep from a scalar `loss`, returning dLoss/dNode for every
    /// node that requires grad. Fan-out gradients accumulate additively.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let il = self.idx(loss)?;
        let lv = &self.nodes[il].value;
        if lv.len() != 1 {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        if !self.rg(il) {
            return Err(Error::Detached);
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; il + 1];
        grads[il] = Some(vec![1.0]);
        for i in (0..=il).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients {
            tape: self.id,
            grads,
            shapes: self.nodes[..=il].iter().map(|n| n.value.shape().to_vec()).collect(),
            bound: self.bound.clone(),
        })
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Vec<f64>>], idx: usize) -> Option<&'g mut Vec<f64>> {
        if !self.nodes[idx].requires_grad {
            return None;
        }
        Some(grads[idx].get_or_insert_with(|| vec![0.0; self.nodes[idx].value.len()]))
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul {
                a,
                b,
                batch,
                m,
                k,
                n,
                shared_rhs,
            } => {
                let ad = self.nodes[a].value.data();
                let bd = self.nodes[b].value.data();
                if let Some(ga) = self.slot(grads, a) {
                    if shared_rhs {
                        gemm_bt_acc(g, bd, ga, batch * m, k, n);
                    } else {
                        for s in 0..batch {
                            gemm_bt_acc(
                                &g[s * m * n..(s + 1) * m * n],
                                &bd[s * k * n..(s + 1) * k * n],
                                &mut ga[s * m * k..(s + 1) * m * k],
                                m,
                                k,
                                n,
                            );
                        }
                    }
                }
                if let Some(gb) = self.slot(grads, b) {
                    if shared_rhs {
                        gemm_at_acc(ad, g, gb, batch * m, k, n);
                    } else {
                        for s in 0..batch {
                            gemm_at_acc(
                                &ad[s * m * k..(s + 1) * m * k],
                                &g[s * m * n..(s + 1) * m * n],
                                &mut gb[s * k * n..(s + 1) * k * n],
                                m,
                                k,
                                n,
                            );
                        }
                    }
                }
            }
            &Op::Transpose {
                a,
                batch,
                rows,
                cols,
            } => {
                if let Some(ga) = self.slot(grads, a) {
                    let back = transpose_batched(g, batch, cols, rows);
                    add_into(ga, &back);
                }
            }
            &Op::Add { a, b } | &Op::Sub { a, b } => {
                let sign = if matches!(node.op, Op::Sub { .. }) { -1.0 } else { 1.0 };
                if let Some(ga) = self.slot(grads, a) {
                    add_into(ga, g);
                }
                if let Some(gb) = self.slot(grads, b) {
                    let nb = gb.len();
                    for (j, &gv) in g.iter().enumerate() {
                        gb[j % nb] += sign * gv;
                    }
                }
            }
            &Op::Mul { a, b } => {
                let ad = self.nodes[a].value.data();
                let bd = self.nodes[b].value.data();
                let nb = bd.len();
                if let Some(ga) = self.slot(grads, a) {
                    for (j, (gav, &gv)) in ga.iter_mut().zip(g).enumerate() {
                        *gav += gv * bd[j % nb];
                    }
                }
                if let Some(gb) = self.slot(grads, b) {
                    for (j, (&gv, &av)) in g.iter().zip(ad).enumerate() {
                        gb[j % nb] += gv * av;
                    }
                }
            }
            &Op::Affine { a, scale } => {
                if let Some(ga) = self.slot(grads, a) {
                    for (gav, &gv) in ga.iter_mut().zip(g) {
                        *gav += scale * gv;
                    }
                }
            }
            &Op::Tanh(a) => self.unary_back(grads, a, g, |j| 1.0 - y[j] * y[j]),
            &Op::Sigmoid(a) => self.unary_back(grads, a, g, |j| y[j] * (1.0 - y[j])),
            &Op::Relu(a) => {
                let x = self.nodes[a].value.data();
                self.unary_back(grads, a, g, |j| if x[j] > 0.0 { 1.0 } else { 0.0 })
            }
            &Op::Log1p(a) => {
                let x = self.nodes[a].value.data();
                self.unary_back(grads, a, g, |j| 1.0 / (1.0 + x[j]))
            }
            &Op::Expm1(a) => self.unary_back(grads, a, g, |j| y[j] + 1.0),
            &Op::Softmax { a, axis } => {
                if let Some(ga) = self.slot(grads, a) {
                    let (outer, dim, inner) = axis_extents(node.value.shape(), axis);
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |j: usize| o * dim * inner + j * inner + i;
                            let dot: f64 = (0..dim).map(|j| g[at(j)] * y[at(j)]).sum();
                            for j in 0..dim {
                                ga[at(j)] += y[at(j)] * (g[at(j)] - dot);
                            }
                        }
                    }
                }
            }
            &Op::Reduce { a, kind, axis } => {
                let xs = self.nodes[a].value.shape().to_vec();
                if let Some(ga) = self.slot(grads, a) {
                    match axis {
                        None => {
                            let scale = match kind {
                                Reduce::Sum => 1.0,
                                Reduce::Mean => 1.0 / ga.len() as f64,
                            };
                            ga.iter_mut().for_each(|v| *v += g[0] * scale);
                        }
                        Some(axis) => {
                            let (outer, dim, inner) = axis_extents(&xs, axis);
                            let scale = match kind {
                                Reduce::Sum => 1.0,
                                Reduce::Mean => 1.0 / dim as f64,
                            };
                            for o in 0..outer {
                                for j in 0..dim {
                                    for i in 0..inner {
                                        ga[o * dim * inner + j * inner + i] += scale * g[o * inner + i];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            Op::Concat { parts, axis } => {
                let (outer, total, inner) = axis_extents(node.value.shape(), *axis);
                let mut offset = 0;
                for &p in parts {
                    let width = self.nodes[p].value.shape()[*axis];
                    if let Some(gp) = self.slot(grads, p) {
                        let chunk = width * inner;
                        for o in 0..outer {
                            let src = o * total * inner + offset * inner;
                            add_into(&mut gp[o * chunk..(o + 1) * chunk], &g[src..src + chunk]);
                        }
                    }
                    offset += width;
                }
            }
            &Op::Narrow { a, axis, start } => {
                let xs = self.nodes[a].value.shape().to_vec();
                let len = node.value.shape()[axis];
                if let Some(ga) = self.slot(grads, a) {
                    let (outer, dim, inner) = axis_extents(&xs, axis);
                    for o in 0..outer {
                        let dst = o * dim * inner + start * inner;
                        let src = o * len * inner;
                        add_into(&mut ga[dst..dst + len * inner], &g[src..src + len * inner]);
                    }
                }
            }
            &Op::Reshape(a) => {
                if let Some(ga) = self.slot(grads, a) {
                    add_into(ga, g);
                }
            }
            Op::Gather { table, ids } => {
                let dim = self.nodes[*table].value.shape()[1];
                if let Some(gt) = self.slot(grads, *table) {
                    for (r, &id) in ids.iter().enumerate() {
                        add_into(&mut gt[id * dim..(id + 1) * dim], &g[r * dim..(r + 1) * dim]);
                    }
                }
            }
            Op::Standardize { a, inv_std } => {
                let d = *node.value.shape().last().unwrap_or(&1);
                if let Some(ga) = self.slot(grads, *a) {
                    for (r, &inv) in inv_std.iter().enumerate() {
                        let gr = &g[r * d..(r + 1) * d];
                        let yr = &y[r * d..(r + 1) * d];
                        let mean_g = gr.iter().sum::<f64>() / d as f64;
                        let mean_gy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                        for j in 0..d {
                            ga[r * d + j] += inv * (gr[j] - mean_g - yr[j] * mean_gy);
                        }
                    }
                }
            }
        }
    }

    fn unary_back(&self, grads: &mut [Option<Vec<f64>>], a: usize, g: &[f64], local: impl Fn(usize) -> f64) {
        if let Some(ga) = self.slot(grads, a) {
            for (j, (gav, &gv)) in ga.iter_mut().zip(g).enumerate() {
                *gav += gv * local(j);
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Result of [`Tape::backward`]: one gradient buffer per differentiable node.
#[derive(Debug)]
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
    bound: BTreeMap<String, Var>,
}

impl Gradients {
    /// Gradient w.r.t. `v`; `None` when `v` does not require grad or the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<Tensor> {
        if v.tape != self.tape {
            return None;
        }
        let g = self.grads.get(v.idx)?.as_ref()?;
        Tensor::new(self.shapes[v.idx].clone(), g.clone()).ok()
    }

    /// Gradients of every bound parameter, by name. Parameters the loss does
    /// not reach get a zero gradient of the parameter's shape.
    pub fn params(&self, store: &ParamStore) -> BTreeMap<String, Tensor> {
        let mut out = BTreeMap::new();
        for (name, value) in store.iter() {
            let g = self
                .bound
                .get(name)
                .and_then(|&v| self.get(v))
                .unwrap_or_else(|| Tensor::zeros(value.shape()));
            out.insert(name.clone(), g);
        }
        out
    }
}
