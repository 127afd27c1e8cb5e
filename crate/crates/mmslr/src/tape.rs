//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records one forward pass as a linear sequence of nodes; calling
//! [`Tape::backward`] replays the adjoint rules in reverse order. Tapes are
//! built per training step and dropped afterwards. Single-threaded by
//! contract: tensors are immutable once recorded.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    id: usize,
}

impl Var {
    /// Node index, for hand-written custom ops.
    pub fn index(self) -> usize {
        self.id
    }
}

/// Adjoint rule: given all recorded values and the output gradient, push
/// gradient contributions into parent nodes via the sink callback.
type BackFn = Box<dyn Fn(&[Tensor], &Tensor, &mut dyn FnMut(usize, Tensor))>;

#[derive(Default)]
pub struct Tape {
    values: Vec<Tensor>,
    requires_grad: Vec<bool>,
    backs: Vec<Option<BackFn>>,
}

/// Gradients produced by one backward pass, indexed by [`Var`].
pub struct Grads {
    grads: Vec<Option<Tensor>>,
}

impl Grads {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.id).and_then(|g| g.as_ref())
    }

    /// Gradient of a leaf, zeros if it never received a contribution.
    pub fn of(&self, var: Var, shape: &[usize]) -> Tensor {
        match self.get(var) {
            Some(t) => t.clone(),
            None => Tensor::zeros(shape.to_vec()),
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.values[var.id]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, back: Option<BackFn>) -> Var {
        self.values.push(value);
        self.requires_grad.push(requires_grad);
        self.backs.push(back);
        Var { id: self.values.len() - 1 }
    }

    /// Leaf that participates in differentiation.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, true, None)
    }

    /// Leaf treated as a constant: no gradient flows into or through it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, false, None)
    }

    /// Copy of an existing node's value with the gradient path severed.
    pub fn detach(&mut self, var: Var) -> Var {
        let v = self.values[var.id].clone();
        self.constant(v)
    }

    fn needs_grad(&self, parents: &[Var]) -> bool {
        parents.iter().any(|v| self.requires_grad[v.id])
    }

    /// Record an operation with a caller-supplied adjoint rule.
    pub fn custom_op(
        &mut self,
        value: Tensor,
        parents: &[Var],
        back: impl Fn(&[Tensor], &Tensor, &mut dyn FnMut(usize, Tensor)) + 'static,
    ) -> Var {
        let rg = self.needs_grad(parents);
        self.push(value, rg, if rg { Some(Box::new(back)) } else { None })
    }

    /// Reverse sweep from a scalar root. Returns accumulated gradients for
    /// every node that received one.
    pub fn backward(&self, root: Var) -> Result<Grads> {
        if !self.values[root.id].is_scalar() {
            return Err(Error::InvalidInput {
                op: "backward",
                reason: format!(
                    "root must be scalar, got shape {:?}",
                    self.values[root.id].shape()
                ),
            });
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.values.len()).map(|_| None).collect();
        grads[root.id] = Some(Tensor::scalar(1.0));
        for id in (0..=root.id).rev() {
            if grads[id].is_none() || !self.requires_grad[id] {
                continue;
            }
            if let Some(back) = &self.backs[id] {
                let g = grads[id].take().unwrap();
                {
                    let (earlier, later) = grads.split_at_mut(id);
                    let _ = later;
                    let requires = &self.requires_grad;
                    let mut sink = |pid: usize, contrib: Tensor| {
                        debug_assert!(pid < id, "adjoint must flow backwards");
                        if !requires[pid] {
                            return;
                        }
                        match &mut earlier[pid] {
                            Some(t) => t.add_assign(&contrib),
                            slot @ None => *slot = Some(contrib),
                        }
                    };
                    back(&self.values, &g, &mut sink);
                }
                grads[id] = Some(g);
            }
        }
        Ok(Grads { grads })
    }

    // ── elementwise ─────────────────────────────────────────────────────

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.values[a.id].zip(&self.values[b.id], |x, y| x + y)?;
        Ok(self.custom_op(v, &[a, b], move |_vals, g, sink| {
            sink(a.id, g.clone());
            sink(b.id, g.clone());
        }))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.values[a.id].zip(&self.values[b.id], |x, y| x - y)?;
        Ok(self.custom_op(v, &[a, b], move |_vals, g, sink| {
            sink(a.id, g.clone());
            sink(b.id, g.map(|x| -x));
        }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.values[a.id].zip(&self.values[b.id], |x, y| x * y)?;
        Ok(self.custom_op(v, &[a, b], move |vals, g, sink| {
            sink(a.id, g.zip(&vals[b.id], |gv, y| gv * y).unwrap());
            sink(b.id, g.zip(&vals[a.id], |gv, x| gv * x).unwrap());
        }))
    }

    /// Multiply by a compile-time-known scalar constant.
    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.values[a.id].map(|x| c * x);
        self.custom_op(v, &[a], move |_vals, g, sink| {
            sink(a.id, g.map(|x| c * x));
        })
    }

    /// Multiply a tensor by a trainable scalar node (shape `[1]`).
    pub fn scalar_mul(&mut self, s: Var, a: Var) -> Result<Var> {
        if !self.values[s.id].is_scalar() {
            return Err(Error::InvalidInput {
                op: "scalar_mul",
                reason: format!("scalar operand has shape {:?}", self.values[s.id].shape()),
            });
        }
        let sv = self.values[s.id].scalar_value();
        let v = self.values[a.id].map(|x| sv * x);
        Ok(self.custom_op(v, &[s, a], move |vals, g, sink| {
            let sv = vals[s.id].scalar_value();
            sink(a.id, g.map(|x| sv * x));
            let dot: f64 = g
                .data()
                .iter()
                .zip(vals[a.id].data())
                .map(|(&gv, &x)| gv * x)
                .sum();
            sink(s.id, Tensor::scalar(dot));
        }))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.values[a.id].map(f64::tanh);
        self.custom_op(v, &[a], move |vals, g, sink| {
            let y = vals[a.id].map(f64::tanh);
            sink(a.id, g.zip(&y, |gv, yv| gv * (1.0 - yv * yv)).unwrap());
        })
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.values[a.id].map(|x| 1.0 / (1.0 + (-x).exp()));
        self.custom_op(v, &[a], move |vals, g, sink| {
            let y = vals[a.id].map(|x| 1.0 / (1.0 + (-x).exp()));
            sink(a.id, g.zip(&y, |gv, yv| gv * yv * (1.0 - yv)).unwrap());
        })
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.values[a.id].map(|x| x.max(0.0));
        self.custom_op(v, &[a], move |vals, g, sink| {
            sink(
                a.id,
                g.zip(&vals[a.id], |gv, x| if x > 0.0 { gv } else { 0.0 }).unwrap(),
            );
        })
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.values[a.id].map(f64::exp);
        self.custom_op(v, &[a], move |vals, g, sink| {
            let y = vals[a.id].map(f64::exp);
            sink(a.id, g.zip(&y, |gv, yv| gv * yv).unwrap());
        })
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(&bad) = self.values[a.id].data().iter().find(|v| **v <= 0.0) {
            return Err(Error::LogDomain { value: bad });
        }
        let v = self.values[a.id].map(f64::ln);
        Ok(self.custom_op(v, &[a], move |vals, g, sink| {
            sink(a.id, g.zip(&vals[a.id], |gv, x| gv / x).unwrap());
        }))
    }

    // ── linear algebra / structure ──────────────────────────────────────

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.values[a.id].matmul(&self.values[b.id])?;
        Ok(self.custom_op(v, &[a, b], move |vals, g, sink| {
            sink(a.id, g.matmul(&vals[b.id].transpose()).unwrap());
            sink(b.id, vals[a.id].transpose().matmul(g).unwrap());
        }))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.values[a.id].transpose();
        self.custom_op(v, &[a], move |_vals, g, sink| {
            sink(a.id, g.transpose());
        })
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = self.values[parts[0].id].cols();
        let mut data = Vec::new();
        let mut row_counts = Vec::with_capacity(parts.len());
        for p in parts {
            let t = &self.values[p.id];
            if t.cols() != cols {
                return Err(Error::ShapeMismatch {
                    op: "concat_rows",
                    lhs: vec![cols],
                    rhs: t.shape().to_vec(),
                });
            }
            row_counts.push(t.rows());
            data.extend_from_slice(t.data());
        }
        let n: usize = row_counts.iter().sum();
        let v = Tensor::new(vec![n, cols], data)?;
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        Ok(self.custom_op(v, parts, move |_vals, g, sink| {
            let mut r = 0;
            for (pid, &nr) in ids.iter().zip(&row_counts) {
                let chunk = g.data()[r * cols..(r + nr) * cols].to_vec();
                sink(*pid, Tensor::new(vec![nr, cols], chunk).unwrap());
                r += nr;
            }
        }))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.values[parts[0].id].rows();
        let widths: Vec<usize> = parts.iter().map(|p| self.values[p.id].cols()).collect();
        for p in parts {
            if self.values[p.id].rows() != rows {
                return Err(Error::ShapeMismatch {
                    op: "concat_cols",
                    lhs: vec![rows],
                    rhs: self.values[p.id].shape().to_vec(),
                });
            }
        }
        let total: usize = widths.iter().sum();
        let mut data = vec![0.0; rows * total];
        let mut c0 = 0;
        for (p, &w) in parts.iter().zip(&widths) {
            let t = &self.values[p.id];
            for r in 0..rows {
                data[r * total + c0..r * total + c0 + w].copy_from_slice(t.row(r));
            }
            c0 += w;
        }
        let v = Tensor::new(vec![rows, total], data)?;
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        Ok(self.custom_op(v, parts, move |_vals, g, sink| {
            let mut c0 = 0;
            for (pid, &w) in ids.iter().zip(&widths) {
                let mut chunk = vec![0.0; rows * w];
                for r in 0..rows {
                    chunk[r * w..(r + 1) * w]
                        .copy_from_slice(&g.data()[r * total + c0..r * total + c0 + w]);
                }
                sink(*pid, Tensor::new(vec![rows, w], chunk).unwrap());
                c0 += w;
            }
        }))
    }

    pub fn slice_rows(&mut self, a: Var, r0: usize, r1: usize) -> Result<Var> {
        let t = &self.values[a.id];
        let (n, d) = (t.rows(), t.cols());
        if r0 >= r1 || r1 > n {
            return Err(Error::InvalidInput {
                op: "slice_rows",
                reason: format!("range {r0}..{r1} out of {n} rows"),
            });
        }
        let v = Tensor::new(vec![r1 - r0, d], t.data()[r0 * d..r1 * d].to_vec())?;
        Ok(self.custom_op(v, &[a], move |_vals, g, sink| {
            let mut full = Tensor::zeros(vec![n, d]);
            full.data_mut()[r0 * d..r1 * d].copy_from_slice(g.data());
            sink(a.id, full);
        }))
    }

    pub fn slice_cols(&mut self, a: Var, c0: usize, c1: usize) -> Result<Var> {
        let t = &self.values[a.id];
        let (n, d) = (t.rows(), t.cols());
        if c0 >= c1 || c1 > d {
            return Err(Error::InvalidInput {
                op: "slice_cols",
                reason: format!("range {c0}..{c1} out of {d} cols"),
            });
        }
        let w = c1 - c0;
        let mut data = vec![0.0; n * w];
        for r in 0..n {
            data[r * w..(r + 1) * w].copy_from_slice(&t.row(r)[c0..c1]);
        }
        let v = Tensor::new(vec![n, w], data)?;
        Ok(self.custom_op(v, &[a], move |_vals, g, sink| {
            let mut full = Tensor::zeros(vec![n, d]);
            for r in 0..n {
                full.data_mut()[r * d + c0..r * d + c1].copy_from_slice(&g.data()[r * w..(r + 1) * w]);
            }
            sink(a.id, full);
        }))
    }

    /// Add a bias row vector (`[d]` or `[1, d]`) to every row of `a`.
    pub fn add_bias(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = &self.values[a.id];
        let bias = &self.values[b.id];
        let (n, d) = (t.rows(), t.cols());
        if bias.numel() != d {
            return Err(Error::ShapeMismatch {
                op: "add_bias",
                lhs: t.shape().to_vec(),
                rhs: bias.shape().to_vec(),
            });
        }
        let mut out = t.clone();
        for r in 0..n {
            for c in 0..d {
                out.data_mut()[r * d + c] += bias.data()[c];
            }
        }
        let bshape = bias.shape().to_vec();
        Ok(self.custom_op(out, &[a, b], move |_vals, g, sink| {
            sink(a.id, g.clone());
            let mut gb = vec![0.0; d];
            for r in 0..n {
                for c in 0..d {
                    gb[c] += g.data()[r * d + c];
                }
            }
            sink(b.id, Tensor::new(bshape.clone(), gb).unwrap());
        }))
    }

    // ── reductions / normalizations ─────────────────────────────────────

    pub fn reduce_sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.values[a.id].sum());
        let shape = self.values[a.id].shape().to_vec();
        self.custom_op(v, &[a], move |_vals, g, sink| {
            sink(a.id, Tensor::full(shape.clone(), g.scalar_value()));
        })
    }

    /// Max over all elements; subgradient routed to the first maximizer.
    pub fn reduce_max(&mut self, a: Var) -> Var {
        let t = &self.values[a.id];
        let (mut best, mut best_i) = (f64::NEG_INFINITY, 0);
        for (i, &x) in t.data().iter().enumerate() {
            if x > best {
                best = x;
                best_i = i;
            }
        }
        let shape = t.shape().to_vec();
        self.custom_op(Tensor::scalar(best), &[a], move |_vals, g, sink| {
            let mut full = Tensor::zeros(shape.clone());
            full.data_mut()[best_i] = g.scalar_value();
            sink(a.id, full);
        })
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        check_axis("softmax", &self.values[a.id], axis)?;
        let y = self.values[a.id].softmax2(axis);
        let yb = y.clone();
        Ok(self.custom_op(y, &[a], move |_vals, g, sink| {
            sink(a.id, softmax_backward(&yb, g, axis));
        }))
    }

    pub fn log_softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        check_axis("log_softmax", &self.values[a.id], axis)?;
        let lp = self.values[a.id].log_softmax2(axis);
        let y = lp.map(f64::exp);
        Ok(self.custom_op(lp, &[a], move |_vals, g, sink| {
            // dx = g - softmax(x) * sum(g along axis)
            let (m, n) = (y.rows(), y.cols());
            let mut out = g.clone();
            let (outer, inner, ostride, istride) = if axis == 1 { (m, n, n, 1) } else { (n, m, 1, n) };
            for o in 0..outer {
                let mut gsum = 0.0;
                for i in 0..inner {
                    gsum += g.data()[o * ostride + i * istride];
                }
                for i in 0..inner {
                    let idx = o * ostride + i * istride;
                    out.data_mut()[idx] = g.data()[idx] - y.data()[idx] * gsum;
                }
            }
            sink(a.id, out);
        }))
    }

    /// Per-row layer normalization with learned gain/shift (each `[d]`).
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let t = &self.values[x.id];
        let (n, d) = (t.rows(), t.cols());
        if self.values[gamma.id].numel() != d || self.values[beta.id].numel() != d {
            return Err(Error::ShapeMismatch {
                op: "layer_norm",
                lhs: t.shape().to_vec(),
                rhs: self.values[gamma.id].shape().to_vec(),
            });
        }
        let gv = self.values[gamma.id].clone();
        let bv = self.values[beta.id].clone();
        let mut out = Tensor::zeros(vec![n, d]);
        let mut xhat = Tensor::zeros(vec![n, d]);
        let mut inv_std = vec![0.0; n];
        for r in 0..n {
            let row = t.row(r);
            let mu = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
            let istd = 1.0 / (var + eps).sqrt();
            inv_std[r] = istd;
            for c in 0..d {
                let xh = (row[c] - mu) * istd;
                xhat.set2(r, c, xh);
                out.set2(r, c, gv.data()[c] * xh + bv.data()[c]);
            }
        }
        let gshape = self.values[gamma.id].shape().to_vec();
        let bshape = self.values[beta.id].shape().to_vec();
        Ok(self.custom_op(out, &[x, gamma, beta], move |_vals, g, sink| {
            let mut gx = Tensor::zeros(vec![n, d]);
            let mut ggamma = vec![0.0; d];
            let mut gbeta = vec![0.0; d];
            for r in 0..n {
                let istd = inv_std[r];
                let mut sum_gy = 0.0;
                let mut sum_gy_xhat = 0.0;
                for c in 0..d {
                    let gy = g.at2(r, c) * gv.data()[c];
                    sum_gy += gy;
                    sum_gy_xhat += gy * xhat.at2(r, c);
                    ggamma[c] += g.at2(r, c) * xhat.at2(r, c);
                    gbeta[c] += g.at2(r, c);
                }
                for c in 0..d {
                    let gy = g.at2(r, c) * gv.data()[c];
                    let val = istd
                        * (gy - sum_gy / d as f64 - xhat.at2(r, c) * sum_gy_xhat / d as f64);
                    gx.set2(r, c, val);
                }
            }
            sink(x.id, gx);
            sink(gamma.id, Tensor::new(gshape.clone(), ggamma).unwrap());
            sink(beta.id, Tensor::new(bshape.clone(), gbeta).unwrap());
        }))
    }

    // ── sequence ops ────────────────────────────────────────────────────

    /// 1-D convolution over time with zero same-padding.
    /// `x: [n, c_in]`, `w: [k, c_in, c_out]`, `b: [c_out]`.
    pub fn conv1d_same(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xt = &self.values[x.id];
        let wt = &self.values[w.id];
        let bt = &self.values[b.id];
        if wt.shape().len() != 3 || wt.shape()[1] != xt.cols() || bt.numel() != wt.shape()[2] {
            return Err(Error::ShapeMismatch {
                op: "conv1d_same",
                lhs: xt.shape().to_vec(),
                rhs: wt.shape().to_vec(),
            });
        }
        let (n, cin) = (xt.rows(), xt.cols());
        let (k, cout) = (wt.shape()[0], wt.shape()[2]);
        let off = k / 2;
        let mut out = Tensor::zeros(vec![n, cout]);
        for t in 0..n {
            for o in 0..cout {
                let mut acc = bt.data()[o];
                for dt in 0..k {
                    let src = t as isize + dt as isize - off as isize;
                    if src < 0 || src >= n as isize {
                        continue;
                    }
                    let src = src as usize;
                    for i in 0..cin {
                        acc += xt.at2(src, i) * wt.data()[(dt * cin + i) * cout + o];
                    }
                }
                out.set2(t, o, acc);
            }
        }
        let bshape = bt.shape().to_vec();
        Ok(self.custom_op(out, &[x, w, b], move |vals, g, sink| {
            let xt = &vals[x.id];
            let wt = &vals[w.id];
            let mut gx = Tensor::zeros(vec![n, cin]);
            let mut gw = Tensor::zeros(vec![k, cin, cout]);
            let mut gb = vec![0.0; cout];
            for t in 0..n {
                for o in 0..cout {
                    let go = g.at2(t, o);
                    gb[o] += go;
                    for dt in 0..k {
                        let src = t as isize + dt as isize - off as isize;
                        if src < 0 || src >= n as isize {
                            continue;
                        }
                        let src = src as usize;
                        for i in 0..cin {
                            let widx = (dt * cin + i) * cout + o;
                            gx.data_mut()[src * cin + i] += go * wt.data()[widx];
                            gw.data_mut()[widx] += go * xt.at2(src, i);
                        }
                    }
                }
            }
            sink(x.id, gx);
            sink(w.id, gw);
            sink(b.id, Tensor::new(bshape.clone(), gb).unwrap());
        }))
    }

    /// Max pooling over time, width 2, stride 2; a trailing odd frame forms
    /// its own window, so the output length is ceil(n/2).
    pub fn maxpool1d_2(&mut self, x: Var) -> Result<Var> {
        let xt = &self.values[x.id];
        let (n, d) = (xt.rows(), xt.cols());
        if n == 0 {
            return Err(Error::InvalidInput { op: "maxpool1d_2", reason: "empty input".into() });
        }
        let n_out = n.div_ceil(2);
        let mut out = Tensor::zeros(vec![n_out, d]);
        let mut argmax = vec![0usize; n_out * d];
        for t in 0..n_out {
            for c in 0..d {
                let a = xt.at2(2 * t, c);
                let (val, src) = if 2 * t + 1 < n {
                    let b = xt.at2(2 * t + 1, c);
                    if b > a { (b, 2 * t + 1) } else { (a, 2 * t) }
                } else {
                    (a, 2 * t)
                };
                out.set2(t, c, val);
                argmax[t * d + c] = src;
            }
        }
        Ok(self.custom_op(out, &[x], move |_vals, g, sink| {
            let mut gx = Tensor::zeros(vec![n, d]);
            for t in 0..n_out {
                for c in 0..d {
                    gx.data_mut()[argmax[t * d + c] * d + c] += g.at2(t, c);
                }
            }
            sink(x.id, gx);
        }))
    }

    /// Row lookup: `weight: [vocab, d]`, `ids` index rows.
    pub fn embedding(&mut self, weight: Var, ids: &[usize]) -> Result<Var> {
        let wt = &self.values[weight.id];
        let (vocab, d) = (wt.rows(), wt.cols());
        if let Some(&bad) = ids.iter().find(|&&i| i >= vocab) {
            return Err(Error::UnknownToken { id: bad, vocab });
        }
        let mut data = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            data.extend_from_slice(wt.row(i));
        }
        let v = Tensor::new(vec![ids.len(), d], data)?;
        let ids = ids.to_vec();
        Ok(self.custom_op(v, &[weight], move |_vals, g, sink| {
            let mut gw = Tensor::zeros(vec![vocab, d]);
            for (r, &i) in ids.iter().enumerate() {
                for c in 0..d {
                    gw.data_mut()[i * d + c] += g.at2(r, c);
                }
            }
            sink(weight.id, gw);
        }))
    }

    /// Inverted dropout with a caller-supplied mask of keep decisions.
    /// `p = 0` is an exact passthrough.
    pub fn dropout(&mut self, x: Var, p: f64, keep_mask: &[bool]) -> Result<Var> {
        if p == 0.0 {
            return Ok(x);
        }
        let xt = &self.values[x.id];
        if keep_mask.len() != xt.numel() {
            return Err(Error::InvalidInput {
                op: "dropout",
                reason: "mask length mismatch".into(),
            });
        }
        let inv_keep = 1.0 / (1.0 - p);
        let scale: Vec<f64> = keep_mask
            .iter()
            .map(|&k| if k { inv_keep } else { 0.0 })
            .collect();
        let mut out = xt.clone();
        for (v, s) in out.data_mut().iter_mut().zip(&scale) {
            *v *= s;
        }
        Ok(self.custom_op(out, &[x], move |_vals, g, sink| {
            let mut gx = g.clone();
            for (v, s) in gx.data_mut().iter_mut().zip(&scale) {
                *v *= s;
            }
            sink(x.id, gx);
        }))
    }
}

fn check_axis(op: &'static str, t: &Tensor, axis: usize) -> Result<()> {
    if axis > 1 || t.shape().len() > 2 {
        return Err(Error::InvalidInput {
            op,
            reason: format!("axis {axis} invalid for shape {:?}", t.shape()),
        });
    }
    Ok(())
}

fn softmax_backward(y: &Tensor, g: &Tensor, axis: usize) -> Tensor {
    let (m, n) = (y.rows(), y.cols());
    let mut out = g.clone();
    let (outer, inner, ostride, istride) = if axis == 1 { (m, n, n, 1) } else { (n, m, 1, n) };
    for o in 0..outer {
        let mut dot = 0.0;
        for i in 0..inner {
            let idx = o * ostride + i * istride;
            dot += g.data()[idx] * y.data()[idx];
        }
        for i in 0..inner {
            let idx = o * ostride + i * istride;
            out.data_mut()[idx] = y.data()[idx] * (g.data()[idx] - dot);
        }
    }
    out
}
