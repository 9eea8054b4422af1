use super::kernels::{self, ConvGeom};
use super::Tensor;
use crate::error::{Error, Result};
use crate::real::Real;
use serde::{Deserialize, Serialize};

/// Handle to a value recorded on a [`Tape`]. Only meaningful for the tape
/// that produced it, and only until that tape is reset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// Output length `ceil(T / stride)`; zeros for convolution, −∞ for pooling.
    #[default]
    Same,
    Valid,
}

enum Op<R> {
    Leaf,
    Conv1d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    MaxPool { x: Var, argmax: Vec<usize> },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<R>, inv_std: Vec<R>, batch_stats: bool, batch: usize, inner: usize },
    Relu { x: Var },
    Sigmoid { x: Var },
    Softmax { x: Var, inv_tau: R, log: bool },
    MeanAxis { x: Var, outer: usize, axis: usize, inner: usize },
    Dense { x: Var, w: Var, b: Option<Var>, rows: usize, n: usize, m: usize },
    Concat { a: Var, b: Var, outer: usize, inner_a: usize, inner_b: usize },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<R>, inv_std: Vec<R>, d: usize },
    MatMul { a: Var, b: Var, groups: usize, m: usize, n: usize, p: usize },
    Permute { x: Var, perm: Vec<usize> },
    Reshape { x: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, c: R },
    AddConst { x: Var },
    MulConst { x: Var, c: Vec<R> },
    ScaleChannels { x: Var, s: Var, t: usize },
    Sum { x: Var },
    Mean { x: Var },
    Select { x: Var, idx: Vec<usize> },
}

struct Node<R> {
    value: Tensor<R>,
    op: Op<R>,
    requires_grad: bool,
    retain: bool,
}

/// Append-only recording of tensor operations for reverse-mode
/// differentiation. Inputs always precede the nodes that consume them, so
/// a reverse sweep over the node list is a valid topological order.
pub struct Tape<R> {
    nodes: Vec<Node<R>>,
    spent: bool,
}

impl<R: Real> Default for Tape<R> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Tape::backward`] for every leaf that requires a
/// gradient and every node marked with [`Tape::retain_grad`].
pub struct Gradients<R> {
    grads: Vec<Option<Tensor<R>>>,
}

impl<R: Real> Gradients<R> {
    pub fn get(&self, v: Var) -> Option<&Tensor<R>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<R>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn same_len_or_err(a: &[usize], b: &[usize], what: &str) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("{what}: {a:?} vs {b:?}")));
    }
    Ok(())
}

/// Output length and left padding for a sliding window of size `k`.
pub(crate) fn window_geometry(t_in: usize, k: usize, stride: usize, padding: Padding) -> (usize, usize) {
    match padding {
        Padding::Same => {
            let t_out = t_in.div_ceil(stride);
            let total = ((t_out - 1) * stride + k).saturating_sub(t_in);
            (t_out, total / 2)
        }
        Padding::Valid => ((t_in.saturating_sub(k)) / stride + 1, 0),
    }
}

fn permute_data<R: Real>(data: &[R], shape: &[usize], perm: &[usize]) -> (Vec<R>, Vec<usize>) {
    let rank = shape.len();
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let mut in_strides = vec![1; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut out = Vec::with_capacity(data.len());
    let mut idx = vec![0usize; rank];
    for _ in 0..data.len() {
        let off: usize = idx.iter().zip(&strides).map(|(i, s)| i * s).sum();
        out.push(data[off]);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            if idx[ax] < out_shape[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    (out, out_shape)
}

impl<R: Real> Tape<R> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), spent: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Clears the recording so a fresh forward pass can reuse the allocation.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.spent = false;
    }

    pub fn value(&self, v: Var) -> &Tensor<R> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Keep the gradient of an intermediate node after `backward`.
    pub fn retain_grad(&mut self, v: Var) {
        self.nodes[v.0].retain = true;
    }

    fn push(&mut self, value: Tensor<R>, op: Op<R>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad, retain: false });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A differentiable input.
    pub fn leaf(&mut self, t: Tensor<R>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// A value that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<R>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// 1-D convolution. `x: [B, Cin, T]`, `w: [Cout, Cin, k]`, `b: [Cout]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, padding: Padding) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 3 || ws.len() != 3 {
            return Err(Error::Shape(format!("conv1d expects [B,C,T] input and [O,I,k] kernel, got {xs:?} and {ws:?}")));
        }
        if xs[0] == 0 || xs[2] == 0 {
            return Err(Error::EmptyInput("conv1d input"));
        }
        if ws[1] != xs[1] {
            return Err(Error::Shape(format!("conv1d: input has {} channels, kernel expects {}", xs[1], ws[1])));
        }
        if ws[2] == 0 || stride == 0 {
            return Err(Error::InvalidArgument("conv1d needs k >= 1 and stride >= 1".into()));
        }
        if let Some(b) = b {
            if self.shape(b) != [ws[0]] {
                return Err(Error::Shape(format!("conv1d bias {:?} for {} outputs", self.shape(b), ws[0])));
            }
        }
        let k = ws[2];
        if padding == Padding::Valid && xs[2] < k {
            return Err(Error::Shape(format!("valid conv with k={k} on T={}", xs[2])));
        }
        let (t_out, mut pad_left) = window_geometry(xs[2], k, stride, padding);
        if padding == Padding::Same && stride == 1 {
            pad_left = k / 2;
        }
        let geom = ConvGeom { batch: xs[0], cin: xs[1], cout: ws[0], k, t_in: xs[2], t_out, stride, pad_left };
        let out = kernels::conv1d_forward(
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            geom,
        );
        let mut inputs = vec![x, w];
        inputs.extend(b);
        let rg = self.rg(&inputs);
        Ok(self.push(Tensor::new(vec![xs[0], ws[0], t_out], out)?, Op::Conv1d { x, w, b, geom }, rg))
    }

    /// Max pooling over the last axis of `[.., T]`; padding never wins.
    pub fn maxpool1d(&mut self, x: Var, k: usize, stride: usize, padding: Padding) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let t_in = *xs.last().ok_or(Error::EmptyInput("maxpool1d input"))?;
        if t_in == 0 || self.value(x).is_empty() {
            return Err(Error::EmptyInput("maxpool1d input"));
        }
        if k == 0 || stride == 0 {
            return Err(Error::InvalidArgument("maxpool1d needs k >= 1 and stride >= 1".into()));
        }
        if padding == Padding::Valid && t_in < k {
            return Err(Error::Shape(format!("valid pool with k={k} on T={t_in}")));
        }
        let (t_out, pad_left) = window_geometry(t_in, k, stride, padding);
        let rows = self.value(x).len() / t_in;
        let (out, argmax) = kernels::maxpool_forward(self.value(x).data(), rows, t_in, t_out, k, stride, pad_left);
        let mut shape = xs.clone();
        *shape.last_mut().unwrap() = t_out;
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(shape, out)?, Op::MaxPool { x, argmax }, rg))
    }

    /// Batch normalization over `[B, C, ..]` per channel `C`.
    ///
    /// With `running = None` the batch statistics (biased variance) are used
    /// and returned as `(mean, var)` so the caller can update its running
    /// estimates. With `running = Some((mean, var))` those are used instead.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
        running: Option<(&[R], &[R])>,
    ) -> Result<(Var, Option<(Vec<R>, Vec<R>)>)> {
        let xs = self.shape(x).to_vec();
        if xs.len() < 2 {
            return Err(Error::Shape(format!("batch_norm expects [B, C, ..], got {xs:?}")));
        }
        if eps <= 0.0 {
            return Err(Error::InvalidArgument("batch_norm eps must be > 0".into()));
        }
        let (batch, ch) = (xs[0], xs[1]);
        let inner: usize = xs[2..].iter().product();
        if self.shape(gamma) != [ch] || self.shape(beta) != [ch] {
            return Err(Error::Shape(format!("batch_norm affine params must be [{ch}]")));
        }
        let n = batch * inner;
        let xd = self.value(x).data();
        let (mean, var) = match running {
            Some((m, v)) => (m.to_vec(), v.to_vec()),
            None => {
                if n < 2 {
                    return Err(Error::InvalidArgument("batch_norm in train mode needs B*T >= 2".into()));
                }
                let mut mean = vec![R::zero(); ch];
                let mut var = vec![R::zero(); ch];
                for c in 0..ch {
                    let mut s = 0.0f64;
                    for b in 0..batch {
                        s += xd[(b * ch + c) * inner..][..inner].iter().map(|v| v.f64()).sum::<f64>();
                    }
                    let mu = s / n as f64;
                    let mut ss = 0.0f64;
                    for b in 0..batch {
                        ss += xd[(b * ch + c) * inner..][..inner].iter().map(|v| (v.f64() - mu).powi(2)).sum::<f64>();
                    }
                    mean[c] = R::of(mu);
                    var[c] = R::of(ss / n as f64);
                }
                (mean, var)
            }
        };
        let inv_std: Vec<R> = var.iter().map(|&v| R::one() / (v + R::of(eps)).sqrt()).collect();
        let g = self.value(gamma).data();
        let be = self.value(beta).data();
        let mut xhat = vec![R::zero(); xd.len()];
        let mut out = vec![R::zero(); xd.len()];
        for b in 0..batch {
            for c in 0..ch {
                let off = (b * ch + c) * inner;
                for i in off..off + inner {
                    let h = (xd[i] - mean[c]) * inv_std[c];
                    xhat[i] = h;
                    out[i] = g[c] * h + be[c];
                }
            }
        }
        let rg = self.rg(&[x, gamma, beta]);
        let batch_stats = running.is_none();
        let v = self.push(
            Tensor::new(xs, out)?,
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, batch_stats, batch, inner },
            rg,
        );
        Ok((v, if batch_stats { Some((mean, var)) } else { None }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| if v > R::zero() { v } else { R::zero() });
        let rg = self.rg(&[x]);
        self.push(out, Op::Relu { x }, rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| R::one() / (R::one() + (-v).exp()));
        let rg = self.rg(&[x]);
        self.push(out, Op::Sigmoid { x }, rg)
    }

    fn softmax_impl(&mut self, x: Var, tau: f64, log: bool) -> Result<Var> {
        if tau <= 0.0 {
            return Err(Error::InvalidArgument(format!("temperature must be > 0, got {tau}")));
        }
        let val = self.value(x);
        if !val.all_finite() {
            return Err(Error::NonFinite("softmax logits".into()));
        }
        let k = *val.shape().last().ok_or(Error::EmptyInput("softmax logits"))?;
        if k == 0 {
            return Err(Error::EmptyInput("softmax logits"));
        }
        let inv_tau = R::of(1.0 / tau);
        let mut out = Vec::with_capacity(val.len());
        for row in val.data().chunks(k) {
            let mx = row.iter().fold(R::neg_infinity(), |a, &b| a.max(b)) * inv_tau;
            let z: R = row.iter().map(|&v| (v * inv_tau - mx).exp()).sum();
            if log {
                let lz = z.ln();
                out.extend(row.iter().map(|&v| v * inv_tau - mx - lz));
            } else {
                out.extend(row.iter().map(|&v| (v * inv_tau - mx).exp() / z));
            }
        }
        let shape = val.shape().to_vec();
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(shape, out)?, Op::Softmax { x, inv_tau, log }, rg))
    }

    /// Temperature-scaled softmax over the last axis, `softmax(x / tau)`.
    pub fn softmax(&mut self, x: Var, tau: f64) -> Result<Var> {
        self.softmax_impl(x, tau, false)
    }

    /// `log(softmax(x / tau))` over the last axis.
    pub fn log_softmax(&mut self, x: Var, tau: f64) -> Result<Var> {
        self.softmax_impl(x, tau, true)
    }

    /// Mean over one axis; the axis is removed from the shape.
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if axis >= xs.len() || xs[axis] == 0 {
            return Err(Error::Shape(format!("mean over axis {axis} of {xs:?}")));
        }
        let outer: usize = xs[..axis].iter().product();
        let inner: usize = xs[axis + 1..].iter().product();
        let a = xs[axis];
        let d = self.value(x).data();
        let scale = R::of(1.0 / a as f64);
        let mut out = vec![R::zero(); outer * inner];
        for o in 0..outer {
            for j in 0..a {
                let src = &d[(o * a + j) * inner..][..inner];
                for (y, &v) in out[o * inner..][..inner].iter_mut().zip(src) {
                    *y += v;
                }
            }
        }
        for v in &mut out {
            *v *= scale;
        }
        let mut shape = xs.clone();
        shape.remove(axis);
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(shape, out)?, Op::MeanAxis { x, outer, axis: a, inner }, rg))
    }

    /// Global average pooling over time: `[B, C, T] -> [B, C]`.
    pub fn gap(&mut self, x: Var) -> Result<Var> {
        let r = self.shape(x).len();
        if r == 0 {
            return Err(Error::Shape("gap on a scalar".into()));
        }
        self.mean_axis(x, r - 1)
    }

    /// Affine map on the last axis: `x: [.., n]`, `w: [m, n]`, `b: [m]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if ws.len() != 2 || xs.last() != Some(&ws[1]) {
            return Err(Error::Shape(format!("dense: input {xs:?} with weight {ws:?}")));
        }
        let (m, n) = (ws[0], ws[1]);
        if let Some(b) = b {
            if self.shape(b) != [m] {
                return Err(Error::Shape(format!("dense bias {:?} for {m} outputs", self.shape(b))));
            }
        }
        let rows = if n == 0 { 0 } else { self.value(x).len() / n };
        let xd = self.value(x).data();
        let wd = self.value(w).data();
        let bd = b.map(|b| self.value(b).data());
        let mut out = Vec::with_capacity(rows * m);
        for r in 0..rows {
            let xr = &xd[r * n..][..n];
            for j in 0..m {
                let acc: R = xr.iter().zip(&wd[j * n..][..n]).map(|(&a, &b)| a * b).sum();
                out.push(acc + bd.map_or(R::zero(), |bd| bd[j]));
            }
        }
        let mut shape = xs.clone();
        *shape.last_mut().unwrap() = m;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        let rg = self.rg(&inputs);
        Ok(self.push(Tensor::new(shape, out)?, Op::Dense { x, w, b, rows, n, m }, rg))
    }

    /// Concatenation along `axis`; all other extents must agree.
    pub fn concat(&mut self, a: Var, b: Var, axis: usize) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa.len() != sb.len() || axis >= sa.len() {
            return Err(Error::Shape(format!("concat {sa:?} and {sb:?} on axis {axis}")));
        }
        for i in 0..sa.len() {
            if i != axis && sa[i] != sb[i] {
                return Err(Error::Shape(format!("concat {sa:?} and {sb:?} on axis {axis}")));
            }
        }
        let outer: usize = sa[..axis].iter().product();
        let rest: usize = sa[axis + 1..].iter().product();
        let inner_a = sa[axis] * rest;
        let inner_b = sb[axis] * rest;
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(da.len() + db.len());
        for o in 0..outer {
            out.extend_from_slice(&da[o * inner_a..][..inner_a]);
            out.extend_from_slice(&db[o * inner_b..][..inner_b]);
        }
        let mut shape = sa.clone();
        shape[axis] += sb[axis];
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(shape, out)?, Op::Concat { a, b, outer, inner_a, inner_b }, rg))
    }

    /// Concatenation along the channel axis of `[B, C, T]` tensors.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        self.concat(a, b, 1)
    }

    /// Layer normalization over the last axis with biased variance.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let d = *xs.last().ok_or(Error::EmptyInput("layer_norm input"))?;
        if d == 0 {
            return Err(Error::EmptyInput("layer_norm input"));
        }
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(Error::Shape(format!("layer_norm affine params must be [{d}]")));
        }
        let xd = self.value(x).data();
        let g = self.value(gamma).data();
        let be = self.value(beta).data();
        let rows = xd.len() / d;
        let mut xhat = Vec::with_capacity(xd.len());
        let mut inv_std = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(xd.len());
        for row in xd.chunks(d) {
            let mu = row.iter().map(|v| v.f64()).sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v.f64() - mu).powi(2)).sum::<f64>() / d as f64;
            let is = R::of(1.0 / (var + eps).sqrt());
            inv_std.push(is);
            for (j, &v) in row.iter().enumerate() {
                let h = (v - R::of(mu)) * is;
                xhat.push(h);
                out.push(g[j] * h + be[j]);
            }
        }
        let rg = self.rg(&[x, gamma, beta]);
        Ok(self.push(Tensor::new(xs, out)?, Op::LayerNorm { x, gamma, beta, xhat, inv_std, d }, rg))
    }

    /// Matrix product over the last two axes; leading axes must match.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa.len() < 2 || sa.len() != sb.len() || sa[..sa.len() - 2] != sb[..sb.len() - 2] {
            return Err(Error::Shape(format!("matmul {sa:?} x {sb:?}")));
        }
        let r = sa.len();
        let (m, n, p) = (sa[r - 2], sa[r - 1], sb[r - 1]);
        if sb[r - 2] != n {
            return Err(Error::Shape(format!("matmul inner dims {sa:?} x {sb:?}")));
        }
        let groups: usize = sa[..r - 2].iter().product();
        let out = kernels::batched_matmul(self.value(a).data(), self.value(b).data(), groups, m, n, p);
        let mut shape = sa.clone();
        shape[r - 1] = p;
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(shape, out)?, Op::MatMul { a, b, groups, m, n, p }, rg))
    }

    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let mut seen = vec![false; xs.len()];
        if perm.len() != xs.len() || perm.iter().any(|&p| p >= xs.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::Shape(format!("bad permutation {perm:?} for {xs:?}")));
        }
        let (out, shape) = permute_data(self.value(x).data(), &xs, perm);
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(shape, out)?, Op::Permute { x, perm: perm.to_vec() }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::Reshape { x }, rg))
    }

    fn binary(&mut self, a: Var, b: Var, what: &str, f: impl Fn(R, R) -> R) -> Result<Tensor<R>> {
        same_len_or_err(self.shape(a), self.shape(b), what)?;
        let (da, db) = (self.value(a).data(), self.value(b).data());
        Tensor::new(self.shape(a).to_vec(), da.iter().zip(db).map(|(&x, &y)| f(x, y)).collect())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "add", |x, y| x + y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::Add { a, b }, rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "sub", |x, y| x - y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::Sub { a, b }, rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "mul", |x, y| x * y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::Mul { a, b }, rg))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let c = R::of(c);
        let t = self.value(x).map(|v| v * c);
        let rg = self.rg(&[x]);
        self.push(t, Op::Scale { x, c }, rg)
    }

    /// `x + c`, with `c` tiled over the leading axes of `x` (a scalar works).
    pub fn add_const(&mut self, x: Var, c: &Tensor<R>) -> Result<Var> {
        let n = c.len();
        if n == 0 || self.value(x).len() % n != 0 {
            return Err(Error::Shape(format!("cannot tile {:?} over {:?}", c.shape(), self.shape(x))));
        }
        let xv = self.value(x);
        let data = xv.data().iter().enumerate().map(|(i, &v)| v + c.data()[i % n]).collect();
        let t = Tensor::new(xv.shape().to_vec(), data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::AddConst { x }, rg))
    }

    /// Elementwise product with a constant of identical shape.
    pub fn mul_const(&mut self, x: Var, c: &Tensor<R>) -> Result<Var> {
        same_len_or_err(self.shape(x), c.shape(), "mul_const")?;
        let xv = self.value(x);
        let data = xv.data().iter().zip(c.data()).map(|(&a, &b)| a * b).collect();
        let t = Tensor::new(xv.shape().to_vec(), data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::MulConst { x, c: c.data().to_vec() }, rg))
    }

    /// Per-channel gating: `x: [B, C, T]` scaled by `s: [B, C]`.
    pub fn scale_channels(&mut self, x: Var, s: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ss = self.shape(s).to_vec();
        if xs.len() != 3 || ss != xs[..2] {
            return Err(Error::Shape(format!("scale_channels {xs:?} by {ss:?}")));
        }
        let t = xs[2];
        let sd = self.value(s).data();
        let data: Vec<R> = self.value(x).data().iter().enumerate().map(|(i, &v)| v * sd[i / t]).collect();
        let rg = self.rg(&[x, s]);
        Ok(self.push(Tensor::new(xs, data)?, Op::ScaleChannels { x, s, t }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let t = Tensor::scalar(self.value(x).sum());
        let rg = self.rg(&[x]);
        self.push(t, Op::Sum { x }, rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len().max(1);
        let t = Tensor::scalar(self.value(x).sum() / R::of(n as f64));
        let rg = self.rg(&[x]);
        self.push(t, Op::Mean { x }, rg)
    }

    /// Picks one entry per row of `x: [B, K]`, giving `[B]`.
    pub fn select(&mut self, x: Var, classes: &[usize]) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 2 || xs[0] != classes.len() {
            return Err(Error::Shape(format!("select {} classes from {xs:?}", classes.len())));
        }
        let k = xs[1];
        if let Some(&c) = classes.iter().find(|&&c| c >= k) {
            return Err(Error::LabelOutOfRange { label: c, classes: k });
        }
        let idx: Vec<usize> = classes.iter().enumerate().map(|(r, &c)| r * k + c).collect();
        let data = idx.iter().map(|&i| self.value(x).data()[i]).collect();
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(vec![classes.len()], data)?, Op::Select { x, idx }, rg))
    }

    /// Reverse sweep from a scalar `loss`. The recording cannot be swept
    /// again until [`Tape::reset`] and a fresh forward pass.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<R>> {
        if self.spent {
            return Err(Error::BackwardTwice);
        }
        if self.value(loss).len() != 1 {
            return Err(Error::NotScalar(self.shape(loss).to_vec()));
        }
        self.spent = true;
        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor<R>>> = (0..n).map(|_| None).collect();
        let mut kept: Vec<Option<Tensor<R>>> = (0..n).map(|_| None).collect();
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(Tensor::full(self.shape(loss), R::one()));
        }
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) || node.retain {
                kept[i] = Some(g.clone());
            }
            self.propagate(i, &g, &mut grads)?;
        }
        Ok(Gradients { grads: kept })
    }

    fn acc(&self, grads: &mut [Option<Tensor<R>>], v: Var, g: Tensor<R>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(e) => e.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn acc_vec(&self, grads: &mut [Option<Tensor<R>>], v: Var, data: Vec<R>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let t = Tensor { shape: self.shape(v).to_vec(), data };
        self.acc(grads, v, t);
    }

    fn propagate(&self, i: usize, g: &Tensor<R>, grads: &mut [Option<Tensor<R>>]) -> Result<()> {
        let node = &self.nodes[i];
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Conv1d { x, w, b, geom } => {
                let need_dx = self.requires_grad(*x);
                let need_dw = self.requires_grad(*w);
                let (dx, dw, db) =
                    kernels::conv1d_backward(self.value(*x).data(), self.value(*w).data(), gd, *geom, need_dx, need_dw);
                if need_dx {
                    self.acc_vec(grads, *x, dx);
                }
                if need_dw {
                    self.acc_vec(grads, *w, dw);
                }
                if let Some(b) = b {
                    self.acc_vec(grads, *b, db);
                }
            }
            Op::MaxPool { x, argmax } => {
                let mut dx = vec![R::zero(); self.value(*x).len()];
                for (&a, &gv) in argmax.iter().zip(gd) {
                    dx[a] += gv;
                }
                self.acc_vec(grads, *x, dx);
            }
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, batch_stats, batch, inner } => {
                let ch = inv_std.len();
                let gm = self.value(*gamma).data();
                let mut dgamma = vec![R::zero(); ch];
                let mut dbeta = vec![R::zero(); ch];
                for b in 0..*batch {
                    for c in 0..ch {
                        let off = (b * ch + c) * inner;
                        for j in off..off + inner {
                            dgamma[c] += gd[j] * xhat[j];
                            dbeta[c] += gd[j];
                        }
                    }
                }
                if self.requires_grad(*x) {
                    let mut dx = vec![R::zero(); gd.len()];
                    let n = R::of((*batch * *inner) as f64);
                    for b in 0..*batch {
                        for c in 0..ch {
                            let off = (b * ch + c) * inner;
                            for j in off..off + inner {
                                dx[j] = if *batch_stats {
                                    gm[c] * inv_std[c] / n * (n * gd[j] - dbeta[c] - xhat[j] * dgamma[c])
                                } else {
                                    gm[c] * inv_std[c] * gd[j]
                                };
                            }
                        }
                    }
                    self.acc_vec(grads, *x, dx);
                }
                self.acc_vec(grads, *gamma, dgamma);
                self.acc_vec(grads, *beta, dbeta);
            }
            Op::Relu { x } => {
                let xd = self.value(*x).data();
                let dx = xd.iter().zip(gd).map(|(&v, &gv)| if v > R::zero() { gv } else { R::zero() }).collect();
                self.acc_vec(grads, *x, dx);
            }
            Op::Sigmoid { x } => {
                let y = node.value.data();
                let dx = y.iter().zip(gd).map(|(&s, &gv)| gv * s * (R::one() - s)).collect();
                self.acc_vec(grads, *x, dx);
            }
            Op::Softmax { x, inv_tau, log } => {
                let y = node.value.data();
                let k = *node.value.shape().last().unwrap();
                let mut dx = Vec::with_capacity(y.len());
                for (yr, gr) in y.chunks(k).zip(gd.chunks(k)) {
                    if *log {
                        let s: R = gr.iter().copied().sum();
                        dx.extend(yr.iter().zip(gr).map(|(&l, &gv)| *inv_tau * (gv - l.exp() * s)));
                    } else {
                        let s: R = yr.iter().zip(gr).map(|(&p, &gv)| p * gv).sum();
                        dx.extend(yr.iter().zip(gr).map(|(&p, &gv)| *inv_tau * p * (gv - s)));
                    }
                }
                self.acc_vec(grads, *x, dx);
            }
            Op::MeanAxis { x, outer, axis, inner } => {
                let scale = R::of(1.0 / *axis as f64);
                let mut dx = Vec::with_capacity(outer * axis * inner);
                for o in 0..*outer {
                    let gr = &gd[o * inner..][..*inner];
                    for _ in 0..*axis {
                        dx.extend(gr.iter().map(|&v| v * scale));
                    }
                }
                self.acc_vec(grads, *x, dx);
            }
            Op::Dense { x, w, b, rows, n, m } => {
                let (n, m) = (*n, *m);
                let xd = self.value(*x).data();
                let wd = self.value(*w).data();
                if self.requires_grad(*x) {
                    let mut dx = vec![R::zero(); rows * n];
                    for r in 0..*rows {
                        let dxr = &mut dx[r * n..][..n];
                        for j in 0..m {
                            let gv = gd[r * m + j];
                            for (a, &wv) in dxr.iter_mut().zip(&wd[j * n..][..n]) {
                                *a += gv * wv;
                            }
                        }
                    }
                    self.acc_vec(grads, *x, dx);
                }
                if self.requires_grad(*w) {
                    let mut dw = vec![R::zero(); m * n];
                    for r in 0..*rows {
                        let xr = &xd[r * n..][..n];
                        for j in 0..m {
                            let gv = gd[r * m + j];
                            for (a, &xv) in dw[j * n..][..n].iter_mut().zip(xr) {
                                *a += gv * xv;
                            }
                        }
                    }
                    self.acc_vec(grads, *w, dw);
                }
                if let Some(b) = b {
                    let mut db = vec![R::zero(); m];
                    for r in 0..*rows {
                        for j in 0..m {
                            db[j] += gd[r * m + j];
                        }
                    }
                    self.acc_vec(grads, *b, db);
                }
            }
            Op::Concat { a, b, outer, inner_a, inner_b } => {
                let mut da = Vec::with_capacity(outer * inner_a);
                let mut db = Vec::with_capacity(outer * inner_b);
                let stride = inner_a + inner_b;
                for o in 0..*outer {
                    da.extend_from_slice(&gd[o * stride..][..*inner_a]);
                    db.extend_from_slice(&gd[o * stride + inner_a..][..*inner_b]);
                }
                self.acc_vec(grads, *a, da);
                self.acc_vec(grads, *b, db);
            }
            Op::LayerNorm { x, gamma, beta, xhat, inv_std, d } => {
                let d = *d;
                let gm = self.value(*gamma).data();
                let mut dgamma = vec![R::zero(); d];
                let mut dbeta = vec![R::zero(); d];
                let mut dx = Vec::with_capacity(gd.len());
                let dn = R::of(d as f64);
                for (r, (gr, hr)) in gd.chunks(d).zip(xhat.chunks(d)).enumerate() {
                    let mut s1 = R::zero();
                    let mut s2 = R::zero();
                    for j in 0..d {
                        dgamma[j] += gr[j] * hr[j];
                        dbeta[j] += gr[j];
                        let dh = gr[j] * gm[j];
                        s1 += dh;
                        s2 += dh * hr[j];
                    }
                    for j in 0..d {
                        let dh = gr[j] * gm[j];
                        dx.push(inv_std[r] / dn * (dn * dh - s1 - hr[j] * s2));
                    }
                }
                self.acc_vec(grads, *x, dx);
                self.acc_vec(grads, *gamma, dgamma);
                self.acc_vec(grads, *beta, dbeta);
            }
            Op::MatMul { a, b, groups, m, n, p } => {
                let (g, m, n, p) = (*groups, *m, *n, *p);
                if self.requires_grad(*a) {
                    let bt = kernels::transpose_last2(self.value(*b).data(), g, n, p);
                    self.acc_vec(grads, *a, kernels::batched_matmul(gd, &bt, g, m, p, n));
                }
                if self.requires_grad(*b) {
                    let at = kernels::transpose_last2(self.value(*a).data(), g, m, n);
                    self.acc_vec(grads, *b, kernels::batched_matmul(&at, gd, g, n, m, p));
                }
            }
            Op::Permute { x, perm } => {
                let mut inv = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inv[p] = i;
                }
                let (dx, _) = permute_data(gd, node.value.shape(), &inv);
                self.acc_vec(grads, *x, dx);
            }
            Op::Reshape { x } => self.acc_vec(grads, *x, gd.to_vec()),
            Op::Add { a, b } => {
                self.acc_vec(grads, *a, gd.to_vec());
                self.acc_vec(grads, *b, gd.to_vec());
            }
            Op::Sub { a, b } => {
                self.acc_vec(grads, *a, gd.to_vec());
                self.acc_vec(grads, *b, gd.iter().map(|&v| -v).collect());
            }
            Op::Mul { a, b } => {
                let (da, db) = (self.value(*a).data(), self.value(*b).data());
                self.acc_vec(grads, *a, gd.iter().zip(db).map(|(&g, &v)| g * v).collect());
                self.acc_vec(grads, *b, gd.iter().zip(da).map(|(&g, &v)| g * v).collect());
            }
            Op::Scale { x, c } => self.acc_vec(grads, *x, gd.iter().map(|&v| v * *c).collect()),
            Op::AddConst { x } => self.acc_vec(grads, *x, gd.to_vec()),
            Op::MulConst { x, c } => self.acc_vec(grads, *x, gd.iter().zip(c).map(|(&g, &v)| g * v).collect()),
            Op::ScaleChannels { x, s, t } => {
                let xd = self.value(*x).data();
                let sd = self.value(*s).data();
                if self.requires_grad(*x) {
                    self.acc_vec(grads, *x, gd.iter().enumerate().map(|(i, &g)| g * sd[i / t]).collect());
                }
                let mut ds = vec![R::zero(); sd.len()];
                for (i, (&g, &xv)) in gd.iter().zip(xd).enumerate() {
                    ds[i / t] += g * xv;
                }
                self.acc_vec(grads, *s, ds);
            }
            Op::Sum { x } => {
                let n = self.value(*x).len();
                self.acc_vec(grads, *x, vec![gd[0]; n]);
            }
            Op::Mean { x } => {
                let n = self.value(*x).len();
                self.acc_vec(grads, *x, vec![gd[0] / R::of(n as f64); n]);
            }
            Op::Select { x, idx } => {
                let mut dx = vec![R::zero(); self.value(*x).len()];
                for (&i, &gv) in idx.iter().zip(gd) {
                    dx[i] += gv;
                }
                self.acc_vec(grads, *x, dx);
            }
        }
        Ok(())
    }
}
