use super::{AttributionConfig, AttributionMap, Method};
use crate::error::{Error, Result};
use crate::models::Differentiable;
use crate::par;
use crate::real::Real;
use crate::tensor::{Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

/// Accepts `[C, T]` or `[1, C, T]` and returns the `[C, T]` view.
pub(crate) fn as_sample<R: Real>(x: &Tensor<R>) -> Result<Tensor<R>> {
    match x.shape() {
        [_, _] => Ok(x.clone()),
        [1, c, t] => x.clone().reshape(&[*c, *t]),
        s => Err(Error::Shape(format!("expected one [C, T] sample, got {s:?}"))),
    }
}

/// One sample → `[1, C, T]` batch, after shape and class checks.
fn single<R: Real, M: Differentiable<R>>(model: &M, x: &Tensor<R>, class: usize) -> Result<Tensor<R>> {
    let x = &as_sample(x)?;
    if x.rank() != 2 || x.shape()[0] != model.input_channels() {
        return Err(Error::Shape(format!("expected a [{}, T] sample, got {:?}", model.input_channels(), x.shape())));
    }
    if class >= model.classes() {
        return Err(Error::LabelOutOfRange { label: class, classes: model.classes() });
    }
    let (c, t) = (x.shape()[0], x.shape()[1]);
    x.clone().reshape(&[1, c, t])
}

/// Channel-major `[C, T]` values to a time-major grid.
fn to_grid(data: impl Iterator<Item = f64>, c: usize, t: usize) -> Vec<f64> {
    let mut grid = vec![0.0; c * t];
    for (i, v) in data.enumerate() {
        grid[(i % t) * c + i / t] = v;
    }
    grid
}

/// `P(class | x_b)` for every row of `batch: [B, C, T]`.
pub fn class_probabilities<R: Real, M: Differentiable<R>>(model: &M, batch: &Tensor<R>, class: usize) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let x = tape.constant(batch.clone());
    let (logits, _) = model.record(&mut tape, x)?;
    let p = tape.softmax(logits, 1.0)?;
    let k = tape.shape(p)[1];
    Ok(tape.value(p).data().iter().skip(class).step_by(k).map(|v| v.f64()).collect())
}

/// `|∂ŷ_c/∂x|` with `ŷ_c` the class logit.
pub fn input_gradient<R: Real, M: Differentiable<R>>(model: &M, x: &Tensor<R>, class: usize) -> Result<AttributionMap> {
    let xb = single(model, x, class)?;
    let (c, t) = (xb.shape()[1], xb.shape()[2]);
    let mut tape = Tape::new();
    let xv = tape.leaf(xb);
    let (logits, _) = model.record(&mut tape, xv)?;
    let yc = tape.select(logits, &[class])?;
    let yc = tape.sum(yc);
    let g = tape.backward(yc)?.take(xv).ok_or(Error::EmptyInput("input gradient"))?;
    AttributionMap::new(Method::InputGradient, class, t, c, to_grid(g.data().iter().map(|v| v.f64().abs()), c, t), false)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OcclusionResult {
    /// Per-channel window occlusion, spread over the covered steps.
    pub map: AttributionMap,
    pub window: usize,
    pub stride: usize,
    pub starts: Vec<usize>,
    pub base_probability: f64,
    /// Probability drop when all channels of each window are occluded.
    pub window_drops: Vec<f64>,
    /// `window_drops` spread over the covered steps.
    pub time_scores: Vec<f64>,
    /// Probability drop when each whole channel is zeroed.
    pub channel_drops: Vec<f64>,
}

#[derive(Clone, Copy)]
enum Occlude {
    Window(usize),
    WindowChannel(usize, usize),
    Channel(usize),
}

fn window_starts(t: usize, w: usize, s: usize) -> Vec<usize> {
    let mut starts: Vec<usize> = (0..).map(|i| i * s).take_while(|&st| st + w <= t).collect();
    if starts.last().is_some_and(|&l| l + w < t) {
        starts.push(t - w);
    }
    starts
}

/// Drop in `P(c|x)` when windows or channels are replaced by a baseline.
pub fn occlusion_sensitivity<R: Real, M: Differentiable<R>>(
    model: &M,
    x: &Tensor<R>,
    class: usize,
    cfg: &AttributionConfig,
) -> Result<OcclusionResult> {
    let xb = single(model, x, class)?;
    let (c, t) = (xb.shape()[1], xb.shape()[2]);
    let w = cfg.window(t);
    let s = cfg.stride(t);
    if w == 0 || w > t {
        return Err(Error::InvalidArgument(format!("occlusion window {w} must lie in 1..={t}")));
    }
    if s == 0 {
        return Err(Error::InvalidArgument("occlusion stride must be >= 1".into()));
    }
    let starts = window_starts(t, w, s);
    let mut jobs: Vec<Occlude> = starts.iter().map(|&st| Occlude::Window(st)).collect();
    for &st in &starts {
        jobs.extend((0..c).map(|j| Occlude::WindowChannel(st, j)));
    }
    jobs.extend((0..c).map(Occlude::Channel));
    let base = R::of(cfg.baseline);
    let apply = |job: Occlude, v: &mut [R]| match job {
        Occlude::Window(st) => (0..c).for_each(|j| v[j * t + st..j * t + st + w].fill(base)),
        Occlude::WindowChannel(st, j) => v[j * t + st..j * t + st + w].fill(base),
        Occlude::Channel(j) => v[j * t..(j + 1) * t].fill(R::zero()),
    };
    let chunks: Vec<&[Occlude]> = jobs.chunks(cfg.batch.max(1)).collect();
    let probs = par::try_map(cfg.parallelism, &chunks, |ch| {
        let mut data = Vec::with_capacity(ch.len() * c * t);
        for &job in ch.iter() {
            let mut v = xb.data().to_vec();
            apply(job, &mut v);
            data.extend(v);
        }
        class_probabilities(model, &Tensor::new(vec![ch.len(), c, t], data)?, class)
    })?;
    let probs: Vec<f64> = probs.into_iter().flatten().collect();
    let p0 = class_probabilities(model, &xb, class)?[0];
    let nw = starts.len();
    let window_drops: Vec<f64> = probs[..nw].iter().map(|p| p0 - p).collect();
    let per_channel = &probs[nw..nw + nw * c];
    let channel_drops: Vec<f64> = probs[nw + nw * c..].iter().map(|p| p0 - p).collect();

    let mut cover = vec![0usize; t];
    let mut time_scores = vec![0.0; t];
    let mut grid = vec![0.0; t * c];
    for (wi, &st) in starts.iter().enumerate() {
        for tt in st..st + w {
            cover[tt] += 1;
            time_scores[tt] += window_drops[wi];
            for j in 0..c {
                grid[tt * c + j] += p0 - per_channel[wi * c + j];
            }
        }
    }
    for tt in 0..t {
        let n = cover[tt].max(1) as f64;
        time_scores[tt] /= n;
        for j in 0..c {
            grid[tt * c + j] /= n;
        }
    }
    Ok(OcclusionResult {
        map: AttributionMap::new(Method::Occlusion, class, t, c, grid, true)?,
        window: w,
        stride: s,
        starts,
        base_probability: p0,
        window_drops,
        time_scores,
        channel_drops,
    })
}

/// Align-corners linear resampling of `v` to `n` points.
pub fn interpolate_linear(v: &[f64], n: usize) -> Vec<f64> {
    match v.len() {
        0 => vec![0.0; n],
        1 => vec![v[0]; n],
        len if len == n => v.to_vec(),
        len => (0..n)
            .map(|i| {
                let pos = if n == 1 { 0.0 } else { i as f64 * (len - 1) as f64 / (n - 1) as f64 };
                let lo = (pos.floor() as usize).min(len - 2);
                let f = pos - lo as f64;
                v[lo] * (1.0 - f) + v[lo + 1] * f
            })
            .collect(),
    }
}

/// Class activation curve from the model's feature map, and a grid that
/// weights it by `|∂ŷ_c/∂x|` so channels can be ranked.
pub fn grad_cam<R: Real, M: Differentiable<R>>(model: &M, x: &Tensor<R>, class: usize) -> Result<(AttributionMap, Vec<f64>)> {
    let xb = single(model, x, class)?;
    let (c, t) = (xb.shape()[1], xb.shape()[2]);
    let mut tape = Tape::new();
    let xv = tape.leaf(xb);
    let (logits, features) = model.record(&mut tape, xv)?;
    let a = features.ok_or_else(|| Error::InvalidArgument("model exposes no feature map for grad-cam".into()))?;
    tape.retain_grad(a);
    let yc = tape.select(logits, &[class])?;
    let yc = tape.sum(yc);
    let av = tape.value(a).clone();
    let mut grads = tape.backward(yc)?;
    let ga = grads.take(a).unwrap_or_else(|| Tensor::zeros(av.shape()));
    let gx = grads.take(xv).unwrap_or_else(|| Tensor::zeros(&[1, c, t]));
    let curve = cam_curve(&av, &ga)?;
    let curve = interpolate_linear(&curve, t);
    let grid = to_grid(gx.data().iter().enumerate().map(|(i, g)| curve[i % t] * g.f64().abs()), c, t);
    Ok((AttributionMap::new(Method::GradCam, class, t, c, grid, false)?, curve))
}

/// `ReLU(Σ_k α_k A^k)` with `α_k` the time-mean of `∂ŷ_c/∂A^k`.
fn cam_curve<R: Real>(a: &Tensor<R>, g: &Tensor<R>) -> Result<Vec<f64>> {
    let s = a.shape();
    if s.len() != 3 || s[0] != 1 {
        return Err(Error::Shape(format!("grad-cam expects a [1, K, T'] feature map, got {s:?}")));
    }
    let (k, tp) = (s[1], s[2]);
    let mut curve = vec![0.0; tp];
    for ch in 0..k {
        let row = ch * tp..(ch + 1) * tp;
        let alpha = g.data()[row.clone()].iter().map(|v| v.f64()).sum::<f64>() / tp as f64;
        for (cv, av) in curve.iter_mut().zip(&a.data()[row]) {
            *cv += alpha * av.f64();
        }
    }
    Ok(curve.into_iter().map(|v| v.max(0.0)).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IgResult {
    pub map: AttributionMap,
    pub f_input: f64,
    pub f_baseline: f64,
    /// `|ΣIG − (F(x) − F(x'))| / max(1e-8, |F(x) − F(x')|)`
    pub completeness_error: f64,
}

/// Integrated gradients of an arbitrary per-row target. `target` maps a
/// `[B, C, T]` input to a `[B]` vector. The path integral uses the
/// trapezoid rule over `m + 1` equally spaced points.
pub fn integrated_gradients_with<R: Real>(
    target: &(dyn Fn(&mut Tape<R>, Var) -> Result<Var> + Sync),
    x: &Tensor<R>,
    baseline: &Tensor<R>,
    m: usize,
    batch: usize,
    mode: par::Parallelism,
) -> Result<(Vec<f64>, f64, f64)> {
    if m == 0 {
        return Err(Error::InvalidArgument("integrated gradients need m >= 1".into()));
    }
    if x.shape() != baseline.shape() {
        return Err(Error::Shape(format!("baseline {:?} vs input {:?}", baseline.shape(), x.shape())));
    }
    let n = x.len();
    let points: Vec<usize> = (0..=m).collect();
    let chunks: Vec<&[usize]> = points.chunks(batch.max(1)).collect();
    let parts = par::try_map(mode, &chunks, |ch| -> Result<(Vec<f64>, Vec<f64>)> {
        let mut data = Vec::with_capacity(ch.len() * n);
        for &i in ch.iter() {
            let a = R::of(i as f64 / m as f64);
            data.extend(x.data().iter().zip(baseline.data()).map(|(&xv, &bv)| bv + a * (xv - bv)));
        }
        let mut shape = vec![ch.len()];
        shape.extend_from_slice(x.shape());
        let mut tape = Tape::new();
        let path = tape.leaf(Tensor::new(shape, data)?);
        let f = target(&mut tape, path)?;
        if tape.shape(f) != [ch.len()] {
            return Err(Error::Shape(format!("target must give one value per row, got {:?}", tape.shape(f))));
        }
        let values = tape.value(f).to_f64_vec();
        let total = tape.sum(f);
        let g = tape.backward(total)?.take(path).ok_or(Error::EmptyInput("path gradient"))?;
        Ok((g.to_f64_vec(), values))
    })?;
    let mut avg = vec![0.0; n];
    let mut values = Vec::with_capacity(m + 1);
    let mut i = 0;
    for (g, v) in parts {
        for row in g.chunks(n) {
            let wgt = if i == 0 || i == m { 0.5 / m as f64 } else { 1.0 / m as f64 };
            for (a, gv) in avg.iter_mut().zip(row) {
                *a += wgt * gv;
            }
            i += 1;
        }
        values.extend(v);
    }
    let ig = avg.iter().zip(x.data().iter().zip(baseline.data())).map(|(g, (xv, bv))| (xv.f64() - bv.f64()) * g).collect();
    Ok((ig, values[m], values[0]))
}

/// Integrated gradients of `P(class | x)` from a constant baseline
/// (`cfg.baseline`), with `cfg.ig_steps` intervals.
pub fn integrated_gradients<R: Real, M: Differentiable<R>>(
    model: &M,
    x: &Tensor<R>,
    class: usize,
    cfg: &AttributionConfig,
) -> Result<IgResult> {
    single(model, x, class)?;
    let x = &as_sample(x)?;
    let (c, t) = (x.shape()[0], x.shape()[1]);
    let target = |tape: &mut Tape<R>, v: Var| -> Result<Var> {
        let rows = tape.shape(v)[0];
        let (logits, _) = model.record(tape, v)?;
        let p = tape.softmax(logits, 1.0)?;
        tape.select(p, &vec![class; rows])
    };
    let base = Tensor::full(x.shape(), R::of(cfg.baseline));
    let (ig, f_input, f_baseline) = integrated_gradients_with(&target, x, &base, cfg.ig_steps, cfg.batch, cfg.parallelism)?;
    let delta = f_input - f_baseline;
    let completeness_error = (ig.iter().sum::<f64>() - delta).abs() / delta.abs().max(1e-8);
    let map = AttributionMap::new(Method::IntegratedGradients, class, t, c, to_grid(ig.into_iter(), c, t), true)?;
    Ok(IgResult { map, f_input, f_baseline, completeness_error })
}
