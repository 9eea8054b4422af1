//! Channel importance estimators and the rank-fusion selection procedure.

mod fuse;


pub use fuse::{
    fuse_select, ranks_descending, ChannelScores, ChannelVerdict, Override, OverrideAction, OverrideCriterion,
    OverrideFile, SelectionReport, VerdictCriterion,
};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::models::{Differentiable, Forward, Network};
use crate::par::{self, Parallelism};
use crate::real::Real;
use crate::tensor::{Tape, Tensor};
use crate::training::cross_entropy_loss;

pub const DEFAULT_BINS: usize = 16;

/// `[mean, population std, max, min]` of one channel.
pub fn stat_features(x: &[f64]) -> Result<[f64; 4]> {
    if x.is_empty() {
        return Err(Error::EmptyInput("stat_features series"));
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = x.iter().copied().fold(f64::INFINITY, f64::min);
    Ok([mean, var.sqrt(), max, min])
}

/// Plug-in estimate (nats) of `I(f; Y)` with `bins` equal-width bins over
/// the observed range of `f`. A constant feature carries no information.
pub fn mutual_information(feature: &[f64], labels: &[usize], bins: usize) -> Result<f64> {
    if bins < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 bins, got {bins}")));
    }
    if feature.is_empty() {
        return Err(Error::EmptyInput("mutual information samples"));
    }
    if feature.len() != labels.len() {
        return Err(Error::Shape(format!("{} feature values for {} labels", feature.len(), labels.len())));
    }
    if feature.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("mutual information feature".into()));
    }
    let lo = feature.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = feature.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        return Ok(0.0);
    }
    let classes = labels.iter().max().map_or(0, |&m| m + 1);
    let mut joint = vec![0usize; bins * classes];
    for (&v, &y) in feature.iter().zip(labels) {
        let b = (((v - lo) / (hi - lo)) * bins as f64).floor() as usize;
        joint[b.min(bins - 1) * classes + y] += 1;
    }
    let n = feature.len() as f64;
    let mut pb = vec![0.0; bins];
    let mut py = vec![0.0; classes];
    for b in 0..bins {
        for y in 0..classes {
            let p = joint[b * classes + y] as f64 / n;
            pb[b] += p;
            py[y] += p;
        }
    }
    let mut mi = 0.0;
    for b in 0..bins {
        for y in 0..classes {
            let p = joint[b * classes + y] as f64 / n;
            if p > 0.0 {
                mi += p * (p / (pb[b] * py[y])).ln();
            }
        }
    }
    Ok(mi.max(0.0))
}

/// Per-channel mean MI of the four summary statistics with the label.
pub fn mi_scores(ds: &Dataset, bins: usize, mode: Parallelism) -> Result<Vec<f64>> {
    if ds.is_empty() {
        return Err(Error::EmptyInput("dataset for mutual information"));
    }
    let labels = ds.labels();
    if labels.iter().all(|&y| y == labels[0]) {
        log::warn!("mutual information is undefined for a single class; scoring all channels 0");
        return Ok(vec![0.0; ds.channels()]);
    }
    par::try_map_range(mode, ds.channels(), |c| -> Result<f64> {
        let feats: Vec<[f64; 4]> = ds
            .samples
            .iter()
            .map(|s| stat_features(&s.channel(c).iter().map(|&v| v as f64).collect::<Vec<_>>()))
            .collect::<Result<_>>()?;
        let mut total = 0.0;
        for i in 0..4 {
            let column: Vec<f64> = feats.iter().map(|f| f[i]).collect();
            total += mutual_information(&column, &labels, bins)?;
        }
        Ok(total / 4.0)
    })
}

/// Per-channel `|∂L/∂x|` summed over batch and time, where `L` is the batch
/// mean cross-entropy. Returns the raw sums (not yet averaged).
pub fn grad_abs_sums<R: Real, M: Differentiable<R>>(model: &M, x: &Tensor<R>, labels: &[usize]) -> Result<Vec<f64>> {
    let shape = x.shape().to_vec();
    if shape.len() != 3 || shape[1] != model.input_channels() {
        return Err(Error::Shape(format!("expected [B, {}, T], got {shape:?}", model.input_channels())));
    }
    let (c, t) = (shape[1], shape[2]);
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let (logits, _) = model.record(&mut tape, xv)?;
    let loss = cross_entropy_loss(&mut tape, logits, labels)?;
    let g = tape.backward(loss)?.take(xv).ok_or(Error::EmptyInput("input gradient"))?;
    let mut out = vec![0.0; c];
    for (i, v) in g.data().iter().enumerate() {
        out[(i / t) % c] += v.f64().abs();
    }
    Ok(out)
}

/// `G_c = 1/(N·T) Σ_{n,t} |∂L/∂x_{n,c,t}|` with `L` the mean cross-entropy
/// over the whole set, evaluated in chunks of `batch` samples.
pub fn grad_importance<R: Real, M: Differentiable<R>>(
    model: &M,
    ds: &Dataset,
    batch: usize,
    mode: Parallelism,
) -> Result<Vec<f64>> {
    if ds.is_empty() {
        return Err(Error::EmptyInput("dataset for gradient importance"));
    }
    let labels = ds.labels();
    let n = ds.len();
    let idx: Vec<usize> = (0..n).collect();
    let chunks: Vec<&[usize]> = idx.chunks(batch.max(1)).collect();
    let parts = par::try_map(mode, &chunks, |ch| {
        let y: Vec<usize> = ch.iter().map(|&i| labels[i]).collect();
        let sums = grad_abs_sums(model, &ds.batch::<R>(ch), &y)?;
        // chunk-mean loss rescaled to the full-set mean
        Ok::<_, Error>(sums.into_iter().map(|s| s * ch.len() as f64 / n as f64).collect::<Vec<_>>())
    })?;
    let denom = (n * ds.steps) as f64;
    let mut g = vec![0.0; ds.channels()];
    for p in parts {
        for (a, b) in g.iter_mut().zip(p) {
            *a += b;
        }
    }
    Ok(g.into_iter().map(|v| v / denom).collect())
}

/// Mean input-gate weight ŝ per channel over `ds` (eval mode).
pub fn se_channel_weights<R: Real>(model: &Network<R>, ds: &Dataset, batch: usize, mode: Parallelism) -> Result<Vec<f64>> {
    if model.gate().is_none() {
        return Err(Error::MissingGate);
    }
    if ds.is_empty() {
        return Err(Error::EmptyInput("dataset for gate weights"));
    }
    let idx: Vec<usize> = (0..ds.len()).collect();
    let chunks: Vec<&[usize]> = idx.chunks(batch.max(1)).collect();
    let parts = par::try_map(mode, &chunks, |ch| {
        let mut tape = Tape::new();
        let mut f = Forward::eval(&mut tape, model.store());
        let x = f.tape.constant(ds.batch::<R>(ch));
        let out = model.forward(&mut f, x)?;
        let s = out.gate.ok_or(Error::MissingGate)?;
        Ok::<_, Error>(tape.value(s).to_f64_vec())
    })?;
    let c = ds.channels();
    let mut mean = vec![0.0; c];
    for p in parts {
        for (i, v) in p.into_iter().enumerate() {
            mean[i % c] += v;
        }
    }
    Ok(mean.into_iter().map(|v| v / ds.len() as f64).collect())
}
