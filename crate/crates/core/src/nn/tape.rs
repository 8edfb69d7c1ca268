//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records one loss evaluation. Leaves are either constants or
//! parameters; only nodes reachable from a parameter carry gradients.
//! [`Tape::gradient`] sweeps the tape backwards once and clears it.

use std::cell::{Cell, RefCell};
use std::ops::{Add, Mul, Sub};

use super::Tensor;
use crate::error::{invalid, Result};

enum Op {
    Leaf,
    /// `x W^T + b` with `x: [B, in]`, `W: [out, in]`, `b: [out]`.
    Linear { x: usize, w: usize, b: usize },
    /// Columnwise normalization with cached `x̂` and `1/sqrt(var + eps)`.
    /// `batch` distinguishes batch statistics from frozen running statistics.
    BatchNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        batch: bool,
    },
    LeakyRelu { x: usize, slope: f64 },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    /// `[B, k·d] × [B, d] → [B, k]`, contracting the trailing `d` axis row by row.
    Contract { v: usize, w: usize, k: usize, d: usize },
    /// Pointwise function of `(y, z)` with Jacobians captured on the forward pass.
    Rowwise {
        y: usize,
        z: usize,
        jy: Vec<f64>,
        jz: Vec<f64>,
        k: usize,
        kd: usize,
    },
    MeanSquaredNorm(usize),
    Sum(usize),
    Square(usize),
}

struct Node {
    value: Tensor,
    op: Op,
    grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    generation: Cell<u64>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
    generation: u64,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}", self.id)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A leaf that never receives gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    /// A differentiable leaf.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    fn push(&self, value: Tensor, op: Op, grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op, grad });
        Var {
            tape: self,
            id: nodes.len() - 1,
            generation: self.generation.get(),
        }
    }

    fn requires(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].grad)
    }

    /// Pointwise `out_b = f(y_b, z_b)` over the rows of `y: [B, k]` and
    /// `z: [B, kd]`. The closure receives the row index and writes the value
    /// `[k]`, `∂/∂y` (`[k, k]`) and `∂/∂z` (`[k, kd]`).
    pub fn rowwise<'t, F>(&'t self, y: Var<'t>, z: Var<'t>, mut f: F) -> Var<'t>
    where
        F: FnMut(usize, &[f64], &[f64], &mut [f64], &mut [f64], &mut [f64]),
    {
        y.check();
        z.check();
        let (value, jy, jz, k, kd) = {
            let nodes = self.nodes.borrow();
            let yv = &nodes[y.id].value;
            let zv = &nodes[z.id].value;
            let (rows, k, kd) = (yv.rows(), yv.cols(), zv.cols());
            assert_eq!(rows, zv.rows(), "rowwise: batch mismatch");
            let mut out = vec![0.0; rows * k];
            let mut jy = vec![0.0; rows * k * k];
            let mut jz = vec![0.0; rows * k * kd];
            for b in 0..rows {
                f(
                    b,
                    &yv.data()[b * k..(b + 1) * k],
                    &zv.data()[b * kd..(b + 1) * kd],
                    &mut out[b * k..(b + 1) * k],
                    &mut jy[b * k * k..(b + 1) * k * k],
                    &mut jz[b * k * kd..(b + 1) * k * kd],
                );
            }
            (Tensor::from_parts(vec![rows, k], out), jy, jz, k, kd)
        };
        let grad = self.requires(&[y.id, z.id]);
        self.push(
            value,
            Op::Rowwise {
                y: y.id,
                z: z.id,
                jy,
                jz,
                k,
                kd,
            },
            grad,
        )
    }

    /// Gradient of a scalar `loss` with respect to every node, then clears
    /// the tape. Variables created before the call become unusable.
    pub fn gradient(&self, loss: Var<'_>) -> Result<Gradients> {
        loss.check();
        let nodes = std::mem::take(&mut *self.nodes.borrow_mut());
        self.generation.set(self.generation.get() + 1);
        if !nodes[loss.id].value.is_scalar() {
            return Err(invalid(format!(
                "gradient needs a scalar loss, got shape {:?}",
                nodes[loss.id].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..nodes.len()).map(|_| None).collect();
        if nodes[loss.id].grad {
            grads[loss.id] = Some(vec![1.0]);
        }
        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            backprop(&nodes, id, &g, &mut grads);
        }
        // interior gradients were consumed above; only leaves remain
        Ok(Gradients {
            grads,
            lens: nodes.iter().map(|n| n.value.len()).collect(),
            generation: loss.generation,
        })
    }
}

fn slot<'g>(nodes: &[Node], grads: &'g mut [Option<Vec<f64>>], id: usize) -> Option<&'g mut [f64]> {
    if !nodes[id].grad {
        return None;
    }
    let len = nodes[id].value.len();
    Some(grads[id].get_or_insert_with(|| vec![0.0; len]).as_mut_slice())
}

fn backprop(nodes: &[Node], id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    match &nodes[id].op {
        Op::Leaf => {}
        &Op::Linear { x, w, b } => {
            let xv = &nodes[x].value;
            let wv = &nodes[w].value;
            let (rows, inp) = (xv.rows(), xv.cols());
            let out = wv.rows();
            if let Some(dx) = slot(nodes, grads, x) {
                for r in 0..rows {
                    let gr = &g[r * out..(r + 1) * out];
                    let dxr = &mut dx[r * inp..(r + 1) * inp];
                    for (o, &go) in gr.iter().enumerate() {
                        let wr = &wv.data()[o * inp..(o + 1) * inp];
                        dxr.iter_mut().zip(wr).for_each(|(d, &wi)| *d += go * wi);
                    }
                }
            }
            if let Some(dw) = slot(nodes, grads, w) {
                for r in 0..rows {
                    let xr = &xv.data()[r * inp..(r + 1) * inp];
                    for o in 0..out {
                        let go = g[r * out + o];
                        let dwr = &mut dw[o * inp..(o + 1) * inp];
                        dwr.iter_mut().zip(xr).for_each(|(d, &xi)| *d += go * xi);
                    }
                }
            }
            if let Some(db) = slot(nodes, grads, b) {
                for gr in g.chunks_exact(out) {
                    db.iter_mut().zip(gr).for_each(|(d, &gi)| *d += gi);
                }
            }
        }
        Op::BatchNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
            batch,
        } => {
            let n = inv_std.len();
            let rows = g.len() / n;
            let gam = nodes[*gamma].value.data();
            if let Some(db) = slot(nodes, grads, *beta) {
                for gr in g.chunks_exact(n) {
                    db.iter_mut().zip(gr).for_each(|(d, &gi)| *d += gi);
                }
            }
            if let Some(dg) = slot(nodes, grads, *gamma) {
                for (gr, xr) in g.chunks_exact(n).zip(xhat.chunks_exact(n)) {
                    for j in 0..n {
                        dg[j] += gr[j] * xr[j];
                    }
                }
            }
            if let Some(dx) = slot(nodes, grads, *x) {
                if *batch {
                    let mut sum_g = vec![0.0; n];
                    let mut sum_gx = vec![0.0; n];
                    for (gr, xr) in g.chunks_exact(n).zip(xhat.chunks_exact(n)) {
                        for j in 0..n {
                            sum_g[j] += gr[j];
                            sum_gx[j] += gr[j] * xr[j];
                        }
                    }
                    let m = rows as f64;
                    for r in 0..rows {
                        for j in 0..n {
                            let i = r * n + j;
                            dx[i] += gam[j] * inv_std[j] / m
                                * (m * g[i] - sum_g[j] - xhat[i] * sum_gx[j]);
                        }
                    }
                } else {
                    for r in 0..rows {
                        for j in 0..n {
                            dx[r * n + j] += g[r * n + j] * gam[j] * inv_std[j];
                        }
                    }
                }
            }
        }
        &Op::LeakyRelu { x, slope } => {
            let xv = nodes[x].value.data();
            if let Some(dx) = slot(nodes, grads, x) {
                for i in 0..g.len() {
                    dx[i] += if xv[i] > 0.0 { g[i] } else { slope * g[i] };
                }
            }
        }
        &Op::Add(a, b) => {
            for id in [a, b] {
                if let Some(d) = slot(nodes, grads, id) {
                    d.iter_mut().zip(g).for_each(|(d, &gi)| *d += gi);
                }
            }
        }
        &Op::Sub(a, b) => {
            if let Some(d) = slot(nodes, grads, a) {
                d.iter_mut().zip(g).for_each(|(d, &gi)| *d += gi);
            }
            if let Some(d) = slot(nodes, grads, b) {
                d.iter_mut().zip(g).for_each(|(d, &gi)| *d -= gi);
            }
        }
        &Op::Mul(a, b) => {
            let (av, bv) = (nodes[a].value.data(), nodes[b].value.data());
            if let Some(d) = slot(nodes, grads, a) {
                for i in 0..g.len() {
                    d[i] += g[i] * bv[i];
                }
            }
            if let Some(d) = slot(nodes, grads, b) {
                for i in 0..g.len() {
                    d[i] += g[i] * av[i];
                }
            }
        }
        &Op::Scale(a, c) => {
            if let Some(d) = slot(nodes, grads, a) {
                d.iter_mut().zip(g).for_each(|(d, &gi)| *d += c * gi);
            }
        }
        &Op::Contract { v, w, k, d } => {
            let (vv, wv) = (nodes[v].value.data(), nodes[w].value.data());
            let rows = g.len() / k;
            if let Some(dv) = slot(nodes, grads, v) {
                for r in 0..rows {
                    for c in 0..k {
                        let gc = g[r * k + c];
                        let base = (r * k + c) * d;
                        for j in 0..d {
                            dv[base + j] += gc * wv[r * d + j];
                        }
                    }
                }
            }
            if let Some(dw) = slot(nodes, grads, w) {
                for r in 0..rows {
                    for c in 0..k {
                        let gc = g[r * k + c];
                        let base = (r * k + c) * d;
                        for j in 0..d {
                            dw[r * d + j] += gc * vv[base + j];
                        }
                    }
                }
            }
        }
        Op::Rowwise {
            y,
            z,
            jy,
            jz,
            k,
            kd,
        } => {
            let (k, kd) = (*k, *kd);
            let rows = g.len() / k;
            if let Some(dy) = slot(nodes, grads, *y) {
                for b in 0..rows {
                    for r in 0..k {
                        let gr = g[b * k + r];
                        for c in 0..k {
                            dy[b * k + c] += gr * jy[(b * k + r) * k + c];
                        }
                    }
                }
            }
            if let Some(dz) = slot(nodes, grads, *z) {
                for b in 0..rows {
                    for r in 0..k {
                        let gr = g[b * k + r];
                        let jrow = &jz[(b * k + r) * kd..(b * k + r + 1) * kd];
                        let dzr = &mut dz[b * kd..(b + 1) * kd];
                        dzr.iter_mut().zip(jrow).for_each(|(d, &j)| *d += gr * j);
                    }
                }
            }
        }
        &Op::MeanSquaredNorm(a) => {
            let av = &nodes[a].value;
            let scale = 2.0 * g[0] / av.rows() as f64;
            if let Some(d) = slot(nodes, grads, a) {
                d.iter_mut()
                    .zip(av.data())
                    .for_each(|(d, &ai)| *d += scale * ai);
            }
        }
        &Op::Sum(a) => {
            if let Some(d) = slot(nodes, grads, a) {
                d.iter_mut().for_each(|d| *d += g[0]);
            }
        }
        &Op::Square(a) => {
            let av = nodes[a].value.data();
            if let Some(d) = slot(nodes, grads, a) {
                for i in 0..g.len() {
                    d[i] += 2.0 * av[i] * g[i];
                }
            }
        }
    }
}

impl<'t> Var<'t> {
    fn check(&self) {
        assert_eq!(
            self.generation,
            self.tape.generation.get(),
            "variable used after its tape was cleared"
        );
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Tensor {
        self.check();
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.check();
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    /// The single value of a scalar node.
    pub fn item(&self) -> f64 {
        self.check();
        let nodes = self.tape.nodes.borrow();
        let v = &nodes[self.id].value;
        assert!(v.is_scalar(), "item() on non-scalar of shape {:?}", v.shape());
        v.data()[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.check();
        self.tape.nodes.borrow()[self.id].grad
    }

    /// A constant copy cut off from the gradient flow.
    pub fn detach(&self) -> Var<'t> {
        self.tape.constant(self.value())
    }

    fn unary(&self, f: impl FnOnce(&Tensor) -> Tensor, op: Op) -> Var<'t> {
        self.check();
        let value = f(&self.tape.nodes.borrow()[self.id].value);
        let grad = self.requires_grad();
        self.tape.push(value, op, grad)
    }

    fn binary(&self, other: Var<'t>, f: impl FnOnce(&[f64], &[f64]) -> Vec<f64>, op: Op) -> Var<'t> {
        self.check();
        other.check();
        let value = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id].value, &nodes[other.id].value);
            assert_eq!(a.shape(), b.shape(), "elementwise shape mismatch");
            Tensor::from_parts(a.shape().to_vec(), f(a.data(), b.data()))
        };
        let grad = self.tape.requires(&[self.id, other.id]);
        self.tape.push(value, op, grad)
    }

    /// `self W^T + b` for `self: [B, in]`, `W: [out, in]`, `b: [out]`.
    pub fn linear(&self, w: Var<'t>, b: Var<'t>) -> Var<'t> {
        self.check();
        w.check();
        b.check();
        let value = {
            let nodes = self.tape.nodes.borrow();
            let (xv, wv, bv) = (&nodes[self.id].value, &nodes[w.id].value, &nodes[b.id].value);
            let (rows, inp) = (xv.rows(), xv.cols());
            let out = wv.rows();
            assert_eq!(wv.cols(), inp, "linear: weight/input mismatch");
            assert_eq!(bv.len(), out, "linear: bias length mismatch");
            let mut y = vec![0.0; rows * out];
            affine_rows(xv.data(), wv.data(), bv.data(), inp, out, &mut y);
            Tensor::from_parts(vec![rows, out], y)
        };
        let grad = self.tape.requires(&[self.id, w.id, b.id]);
        self.tape.push(
            value,
            Op::Linear {
                x: self.id,
                w: w.id,
                b: b.id,
            },
            grad,
        )
    }

    /// Normalizes each column with the batch mean and biased batch variance.
    /// Returns the output together with those statistics.
    pub fn batch_norm_train(
        &self,
        gamma: Var<'t>,
        beta: Var<'t>,
        eps: f64,
    ) -> (Var<'t>, Vec<f64>, Vec<f64>) {
        self.check();
        let (value, xhat, inv_std, mean, var) = {
            let nodes = self.tape.nodes.borrow();
            let xv = &nodes[self.id].value;
            let (rows, n) = (xv.rows(), xv.cols());
            let x = xv.data();
            let mut mean = vec![0.0; n];
            for r in x.chunks_exact(n) {
                mean.iter_mut().zip(r).for_each(|(m, &v)| *m += v);
            }
            mean.iter_mut().for_each(|m| *m /= rows as f64);
            let mut var = vec![0.0; n];
            for r in x.chunks_exact(n) {
                for j in 0..n {
                    let c = r[j] - mean[j];
                    var[j] += c * c;
                }
            }
            var.iter_mut().for_each(|v| *v /= rows as f64);
            let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
            let (value, xhat) = normalize(
                x,
                &mean,
                &inv_std,
                nodes[gamma.id].value.data(),
                nodes[beta.id].value.data(),
                rows,
            );
            (value, xhat, inv_std, mean, var)
        };
        let grad = self.tape.requires(&[self.id, gamma.id, beta.id]);
        let out = self.tape.push(
            value,
            Op::BatchNorm {
                x: self.id,
                gamma: gamma.id,
                beta: beta.id,
                xhat,
                inv_std,
                batch: true,
            },
            grad,
        );
        (out, mean, var)
    }

    /// Normalizes with fixed statistics.
    pub fn batch_norm_frozen(
        &self,
        gamma: Var<'t>,
        beta: Var<'t>,
        mean: &[f64],
        var: &[f64],
        eps: f64,
    ) -> Var<'t> {
        self.check();
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let (value, xhat) = {
            let nodes = self.tape.nodes.borrow();
            let xv = &nodes[self.id].value;
            normalize(
                xv.data(),
                mean,
                &inv_std,
                nodes[gamma.id].value.data(),
                nodes[beta.id].value.data(),
                xv.rows(),
            )
        };
        let grad = self.tape.requires(&[self.id, gamma.id, beta.id]);
        self.tape.push(
            value,
            Op::BatchNorm {
                x: self.id,
                gamma: gamma.id,
                beta: beta.id,
                xhat,
                inv_std,
                batch: false,
            },
            grad,
        )
    }

    pub fn leaky_relu(&self, slope: f64) -> Var<'t> {
        self.unary(
            |t| {
                let data = t.data().iter().map(|&v| leaky(v, slope)).collect();
                Tensor::from_parts(t.shape().to_vec(), data)
            },
            Op::LeakyRelu { x: self.id, slope },
        )
    }

    pub fn scale(&self, c: f64) -> Var<'t> {
        self.unary(
            |t| Tensor::from_parts(t.shape().to_vec(), t.data().iter().map(|v| v * c).collect()),
            Op::Scale(self.id, c),
        )
    }

    /// Row-by-row contraction of `self: [B, k·d]` (read as `[B, k, d]`) with
    /// `w: [B, d]`, giving `[B, k]`.
    pub fn contract_rows(&self, w: Var<'t>, k: usize) -> Var<'t> {
        self.check();
        w.check();
        let (value, d) = {
            let nodes = self.tape.nodes.borrow();
            let (vv, wv) = (&nodes[self.id].value, &nodes[w.id].value);
            let rows = vv.rows();
            let d = wv.cols();
            assert_eq!(wv.rows(), rows, "contract_rows: batch mismatch");
            assert_eq!(vv.cols(), k * d, "contract_rows: expected [B, k·d]");
            let mut out = vec![0.0; rows * k];
            for r in 0..rows {
                let wr = &wv.data()[r * d..(r + 1) * d];
                for c in 0..k {
                    let vr = &vv.data()[(r * k + c) * d..(r * k + c + 1) * d];
                    out[r * k + c] = vr.iter().zip(wr).map(|(a, b)| a * b).sum();
                }
            }
            (Tensor::from_parts(vec![rows, k], out), d)
        };
        let grad = self.tape.requires(&[self.id, w.id]);
        self.tape.push(
            value,
            Op::Contract {
                v: self.id,
                w: w.id,
                k,
                d,
            },
            grad,
        )
    }

    /// `(1/B) Σ_b |row_b|²`.
    pub fn mean_squared_norm(&self) -> Var<'t> {
        self.unary(
            |t| {
                let s: f64 = t.data().iter().map(|v| v * v).sum();
                Tensor::scalar(s / t.rows() as f64)
            },
            Op::MeanSquaredNorm(self.id),
        )
    }

    pub fn sum(&self) -> Var<'t> {
        self.unary(
            |t| Tensor::scalar(t.data().iter().sum()),
            Op::Sum(self.id),
        )
    }

    pub fn square(&self) -> Var<'t> {
        self.unary(
            |t| Tensor::from_parts(t.shape().to_vec(), t.data().iter().map(|v| v * v).collect()),
            Op::Square(self.id),
        )
    }
}

#[inline]
pub(crate) fn leaky(v: f64, slope: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        slope * v
    }
}

/// `y = x W^T + b`, row-major.
pub(crate) fn affine_rows(x: &[f64], w: &[f64], b: &[f64], inp: usize, out: usize, y: &mut [f64]) {
    for (xr, yr) in x.chunks_exact(inp).zip(y.chunks_exact_mut(out)) {
        for o in 0..out {
            let wr = &w[o * inp..(o + 1) * inp];
            let mut acc = b[o];
            for (a, c) in xr.iter().zip(wr) {
                acc += a * c;
            }
            yr[o] = acc;
        }
    }
}

fn normalize(
    x: &[f64],
    mean: &[f64],
    inv_std: &[f64],
    gamma: &[f64],
    beta: &[f64],
    rows: usize,
) -> (Tensor, Vec<f64>) {
    let n = mean.len();
    let mut xhat = vec![0.0; x.len()];
    let mut y = vec![0.0; x.len()];
    for i in 0..x.len() {
        let j = i % n;
        xhat[i] = (x[i] - mean[j]) * inv_std[j];
        y[i] = gamma[j] * xhat[i] + beta[j];
    }
    (Tensor::from_parts(vec![rows, n], y), xhat)
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(
            rhs,
            |a, b| a.iter().zip(b).map(|(x, y)| x + y).collect(),
            Op::Add(self.id, rhs.id),
        )
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(
            rhs,
            |a, b| a.iter().zip(b).map(|(x, y)| x - y).collect(),
            Op::Sub(self.id, rhs.id),
        )
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(
            rhs,
            |a, b| a.iter().zip(b).map(|(x, y)| x * y).collect(),
            Op::Mul(self.id, rhs.id),
        )
    }
}

/// Leaf gradients from one backward sweep.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    lens: Vec<usize>,
    generation: u64,
}

impl Gradients {
    /// `∂loss/∂var`; all zeros when `var` does not influence the loss.
    pub fn wrt(&self, var: &Var<'_>) -> Vec<f64> {
        assert_eq!(var.generation, self.generation, "variable from another tape sweep");
        self.grads[var.id]
            .clone()
            .unwrap_or_else(|| vec![0.0; self.lens[var.id]])
    }

    /// Moves the gradient out, leaving zeros behind.
    pub fn take(&mut self, var: &Var<'_>) -> Vec<f64> {
        assert_eq!(var.generation, self.generation, "variable from another tape sweep");
        self.grads[var.id]
            .take()
            .unwrap_or_else(|| vec![0.0; self.lens[var.id]])
    }
}

impl Var<'_> {
    pub fn id(&self) -> usize {
        self.id
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol * (1.0 + y.abs()), "{x} vs {y}");
        }
    }

    #[test]
    fn quadratic_gradient() {
        let tape = Tape::new();
        let p = tape.param(Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap());
        let loss = p.square().sum();
        let g = tape.gradient(loss).unwrap();
        assert_eq!(g.wrt(&p), vec![2.0, -4.0, 1.0]);
    }

    #[test]
    fn detached_leaf_gets_no_gradient() {
        let tape = Tape::new();
        let p = tape.param(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
        let q = p.detach();
        let loss = (p * q).sum();
        assert!(!q.requires_grad());
        let g = tape.gradient(loss).unwrap();
        assert_eq!(g.wrt(&q), vec![0.0, 0.0]);
        assert_eq!(g.wrt(&p), vec![1.0, 2.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let tape = Tape::new();
        let p = tape.param(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
        assert!(tape.gradient(p.square()).is_err());
    }

    #[test]
    fn gradient_clears_tape() {
        let tape = Tape::new();
        let p = tape.param(Tensor::scalar(3.0));
        let loss = p.square();
        tape.gradient(loss).unwrap();
        assert!(tape.is_empty());
    }

    #[test]
    #[should_panic(expected = "after its tape was cleared")]
    fn stale_variable_panics() {
        let tape = Tape::new();
        let p = tape.param(Tensor::scalar(3.0));
        tape.gradient(p.square().sum()).unwrap();
        let _ = p.value();
    }

    // central differences on a composite of every op
    #[test]
    fn composite_matches_finite_differences() {
        let x0 = vec![0.3, -1.2, 0.7, 0.1, -0.4, 0.9];
        let w0 = vec![0.5, -0.3, 0.8, 0.2];
        let b0 = vec![0.1, -0.2];
        let g0 = vec![1.3, 0.7];
        let be0 = vec![0.05, -0.1];
        let dw = vec![0.2, -0.1, 0.4];
        let eval = |w: &[f64], b: &[f64], g: &[f64], be: &[f64]| -> (f64, Vec<Vec<f64>>) {
            let tape = Tape::new();
            let x = tape.constant(Tensor::matrix(3, 2, x0.clone()).unwrap());
            let wv = tape.param(Tensor::matrix(2, 2, w.to_vec()).unwrap());
            let bv = tape.param(Tensor::new(vec![2], b.to_vec()).unwrap());
            let gv = tape.param(Tensor::new(vec![2], g.to_vec()).unwrap());
            let bev = tape.param(Tensor::new(vec![2], be.to_vec()).unwrap());
            let h = x.linear(wv, bv);
            let (h, _, _) = h.batch_norm_train(gv, bev, 1e-5);
            let h = h.leaky_relu(0.1);
            let d = tape.constant(Tensor::matrix(3, 1, dw.clone()).unwrap());
            let u = h.contract_rows(d, 2);
            let f = tape.rowwise(u, h, |_, y, z, out, jy, jz| {
                out[0] = y[0] * z[0];
                out[1] = y[1] + z[1] * z[0];
                jy.copy_from_slice(&[z[0], 0.0, 0.0, 1.0]);
                jz.copy_from_slice(&[y[0], 0.0, z[1], z[0]]);
            });
            let r = (f - u.scale(0.5)) + h * h;
            let loss = r.mean_squared_norm();
            let value = loss.item();
            let grads = tape.gradient(loss).unwrap();
            (value, [wv, bv, gv, bev].iter().map(|v| grads.wrt(v)).collect())
        };
        let (_, analytic) = eval(&w0, &b0, &g0, &be0);
        let blocks = [w0.clone(), b0.clone(), g0.clone(), be0.clone()];
        let h = 1e-6;
        for (bi, block) in blocks.iter().enumerate() {
            let mut fd = vec![0.0; block.len()];
            for j in 0..block.len() {
                let mut plus = blocks.clone();
                let mut minus = blocks.clone();
                plus[bi][j] += h;
                minus[bi][j] -= h;
                let lp = eval(&plus[0], &plus[1], &plus[2], &plus[3]).0;
                let lm = eval(&minus[0], &minus[1], &minus[2], &minus[3]).0;
                fd[j] = (lp - lm) / (2.0 * h);
            }
            close(&analytic[bi], &fd, 1e-6);
        }
    }
}
