use super::methods::{class_probabilities, grad_cam, input_gradient, integrated_gradients, occlusion_sensitivity};
use super::{AttributionConfig, AttributionMap, Method};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::models::Differentiable;
use crate::par;
use crate::real::Real;
use crate::tensor::{Tape, Tensor};
use crate::training::argmax;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
    pub start_pct: f64,
    pub end_pct: f64,
}

/// Linear-interpolated order statistic at `p` percent.
fn percentile(v: &[f64], p: f64) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let pos = (p / 100.0).clamp(0.0, 1.0) * (s.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(s.len() - 1);
    s[lo] + (s[hi] - s[lo]) * (pos - lo as f64)
}

/// Maximal runs strictly above the `percentile` threshold; runs separated
/// by fewer than `T/64` steps are merged.
pub fn key_segments(curve: &[f64], pct: f64) -> Result<Vec<Segment>> {
    let t = curve.len();
    if t < 10 {
        return Err(Error::InvalidArgument(format!("key segments need at least 10 steps, got {t}")));
    }
    if curve.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("attribution curve".into()));
    }
    let thr = percentile(curve, pct);
    let mut runs: Vec<(usize, usize)> = Vec::new();
    let mut i = 0;
    while i < t {
        if curve[i] > thr {
            let s = i;
            while i < t && curve[i] > thr {
                i += 1;
            }
            match runs.last_mut() {
                Some(last) if ((s - last.1) as f64) < t as f64 / 64.0 => last.1 = i,
                _ => runs.push((s, i)),
            }
        } else {
            i += 1;
        }
    }
    Ok(runs
        .into_iter()
        .map(|(start, end)| Segment {
            start,
            end,
            start_pct: 100.0 * start as f64 / t as f64,
            end_pct: 100.0 * end as f64 / t as f64,
        })
        .collect())
}

/// Indices of the `k` largest scores, best first; ties go to the lower index.
pub fn top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Channels in the top-`k` of every score vector, ascending.
pub fn consensus_sensors(vectors: &[Vec<f64>], k: usize) -> Result<Vec<usize>> {
    let first = vectors.first().ok_or(Error::EmptyInput("channel score vectors"))?;
    if vectors.iter().any(|v| v.len() != first.len()) {
        return Err(Error::Shape("channel score vectors differ in length".into()));
    }
    let sets: Vec<Vec<usize>> = vectors.iter().map(|v| top_k(v, k)).collect();
    let mut out: Vec<usize> = sets[0].iter().copied().filter(|c| sets[1..].iter().all(|s| s.contains(c))).collect();
    out.sort_unstable();
    Ok(out)
}

/// `H(p)/ln T` for `p = curve/Σcurve`. Returns `(1.0, true)` when the sum
/// is not positive and the entropy is undefined.
pub fn normalized_entropy(curve: &[f64]) -> (f64, bool) {
    let total: f64 = curve.iter().sum();
    if !(total > 0.0) || curve.len() < 2 {
        return (1.0, true);
    }
    let h: f64 = -curve.iter().map(|v| v / total).filter(|&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>();
    (h / (curve.len() as f64).ln(), false)
}

/// All four attributions for one `[C, T]` sample, in [`Method::ALL`] order.
pub fn attribute_all<R: Real, M: Differentiable<R>>(
    model: &M,
    x: &Tensor<R>,
    class: usize,
    cfg: &AttributionConfig,
) -> Result<Vec<AttributionMap>> {
    Ok(vec![
        input_gradient(model, x, class)?,
        occlusion_sensitivity(model, x, class, cfg)?.map,
        grad_cam(model, x, class)?.0,
        integrated_gradients(model, x, class, cfg)?.map,
    ])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseStudyResult {
    pub class: usize,
    pub levels: Vec<f64>,
    /// `P(c | x + ε)` per level.
    pub confidence: Vec<f64>,
    /// Normalised time-curve entropy per method, one value per level.
    pub entropy: BTreeMap<Method, Vec<f64>>,
    /// Methods and levels whose time curve summed to zero.
    pub degenerate: Vec<(Method, f64)>,
    /// `[level][method]` time curves.
    pub time_curves: Vec<Vec<Vec<f64>>>,
}

impl NoiseStudyResult {
    /// Entropy per level averaged over methods.
    pub fn mean_entropy(&self) -> Vec<f64> {
        (0..self.levels.len())
            .map(|i| self.entropy.values().map(|v| v[i]).sum::<f64>() / self.entropy.len().max(1) as f64)
            .collect()
    }
}

/// Re-runs every method on `x` plus seeded Gaussian noise at each level.
/// Level `i` draws from stream `i` of `seed`; a zero level adds nothing.
pub fn noise_perturbation_study<R: Real, M: Differentiable<R>>(
    model: &M,
    x: &Tensor<R>,
    class: usize,
    levels: &[f64],
    seed: u64,
    cfg: &AttributionConfig,
) -> Result<NoiseStudyResult> {
    if levels.iter().any(|s| !(*s >= 0.0)) {
        return Err(Error::InvalidArgument("noise levels must be >= 0".into()));
    }
    let x = &super::methods::as_sample(x)?;
    let mut out = NoiseStudyResult {
        class,
        levels: levels.to_vec(),
        confidence: Vec::new(),
        entropy: BTreeMap::new(),
        degenerate: Vec::new(),
        time_curves: Vec::new(),
    };
    for (i, &sigma) in levels.iter().enumerate() {
        let noisy = if sigma == 0.0 {
            x.clone()
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let data = x.data().iter().map(|&v| v + R::of(sigma * rng.sample::<f64, _>(StandardNormal))).collect();
            Tensor::new(x.shape().to_vec(), data)?
        };
        let (c, t) = (x.shape()[0], x.shape()[1]);
        out.confidence.push(class_probabilities(model, &noisy.clone().reshape(&[1, c, t])?, class)?[0]);
        let maps = attribute_all(model, &noisy, class, cfg)?;
        let mut curves = Vec::new();
        for m in maps {
            let (h, bad) = normalized_entropy(&m.time_scores);
            if bad {
                out.degenerate.push((m.method, sigma));
            }
            out.entropy.entry(m.method).or_default().push(h);
            curves.push(m.time_scores);
        }
        out.time_curves.push(curves);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodEvidence {
    pub method: Method,
    /// Channel scores divided by their maximum.
    pub channel_scores: Vec<f64>,
    pub top_channels: Vec<usize>,
    pub segments: Vec<Segment>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvidenceChain {
    pub class: usize,
    pub requested: usize,
    pub samples_used: usize,
    /// Dataset indices of the samples that were averaged.
    pub sample_indices: Vec<usize>,
    pub methods: Vec<MethodEvidence>,
    pub consensus: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseStudyResult>,
    pub warnings: Vec<String>,
}

fn predictions<R: Real, M: Differentiable<R>>(model: &M, ds: &Dataset, cfg: &AttributionConfig) -> Result<Vec<usize>> {
    let idx: Vec<usize> = (0..ds.len()).collect();
    let chunks: Vec<&[usize]> = idx.chunks(cfg.batch.max(1)).collect();
    let k = model.classes();
    let parts = par::try_map(cfg.parallelism, &chunks, |ch| {
        let mut tape = Tape::new();
        let x = tape.constant(ds.batch::<R>(ch));
        let (logits, _) = model.record(&mut tape, x)?;
        Ok::<_, Error>(tape.value(logits).to_f64_vec().chunks(k).map(argmax).collect::<Vec<_>>())
    })?;
    Ok(parts.into_iter().flatten().collect())
}

/// Averages each method's grid over up to `n` correctly classified
/// samples of `class`, then reports top channels, their consensus and key
/// segments. With `noise` set, a perturbation study runs on the first
/// averaged sample.
pub fn evidence_chain<R: Real, M: Differentiable<R>>(
    model: &M,
    ds: &Dataset,
    class: usize,
    n: usize,
    cfg: &AttributionConfig,
    noise: Option<(&[f64], u64)>,
) -> Result<EvidenceChain> {
    Ok(evidence_chain_with_maps(model, ds, class, n, cfg, noise)?.0)
}

/// [`evidence_chain`] plus the averaged map of every method, in
/// [`Method::ALL`] order.
pub fn evidence_chain_with_maps<R: Real, M: Differentiable<R>>(
    model: &M,
    ds: &Dataset,
    class: usize,
    n: usize,
    cfg: &AttributionConfig,
    noise: Option<(&[f64], u64)>,
) -> Result<(EvidenceChain, Vec<AttributionMap>)> {
    let preds = predictions(model, ds, cfg)?;
    let chosen: Vec<usize> =
        (0..ds.len()).filter(|&i| ds.samples[i].label == class && preds[i] == class).take(n).collect();
    if chosen.is_empty() {
        return Err(Error::NoSamples(format!("no correctly classified samples of class {class}")));
    }
    let mut warnings = Vec::new();
    if chosen.len() < n {
        let msg = format!("only {} correctly classified samples of class {class}, wanted {n}", chosen.len());
        log::warn!("{msg}");
        warnings.push(msg);
    }
    let per_sample = par::try_map(cfg.parallelism, &chosen, |&i| attribute_all(model, &ds.samples[i].tensor::<R>(), class, cfg))?;
    let mut methods = Vec::new();
    let mut vectors = Vec::new();
    let mut means = Vec::new();
    for (mi, &method) in Method::ALL.iter().enumerate() {
        let maps: Vec<AttributionMap> = per_sample.iter().map(|v| v[mi].clone()).collect();
        let mean = AttributionMap::mean(&maps)?;
        let max = mean.channel_scores.iter().copied().fold(0.0, f64::max);
        let channel_scores =
            mean.channel_scores.iter().map(|v| if max > 0.0 { v / max } else { 0.0 }).collect::<Vec<_>>();
        methods.push(MethodEvidence {
            method,
            top_channels: top_k(&mean.channel_scores, cfg.top_k),
            segments: key_segments(&mean.time_scores, cfg.percentile)?,
            channel_scores,
        });
        vectors.push(mean.channel_scores.clone());
        means.push(mean);
    }
    let consensus = consensus_sensors(&vectors, cfg.top_k)?;
    let noise = match noise {
        Some((levels, seed)) => {
            Some(noise_perturbation_study(model, &ds.samples[chosen[0]].tensor::<R>(), class, levels, seed, cfg)?)
        }
        None => None,
    };
    let chain = EvidenceChain {
        class,
        requested: n,
        samples_used: chosen.len(),
        sample_indices: chosen,
        methods,
        consensus,
        noise,
        warnings,
    };
    Ok((chain, means))
}

/// A header of channel names, then `T` rows of `C` comma-separated values.
pub fn grid_to_delimited(map: &AttributionMap, channel_names: &[String]) -> Result<String> {
    if channel_names.len() != map.channels {
        return Err(Error::Shape(format!("{} names for {} channels", channel_names.len(), map.channels)));
    }
    let mut out = channel_names.join(",");
    out.push('\n');
    for t in 0..map.steps {
        let row: Vec<String> = (0..map.channels).map(|j| format!("{}", map.at(t, j))).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    Ok(out)
}
