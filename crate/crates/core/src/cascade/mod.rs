//! Two-stage inference: a binary anomaly detector gating a fault classifier.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::models::Network;
use crate::par::{self, Parallelism};
use crate::real::Real;
use crate::tensor::Tensor;
use crate::training::{argmax, evaluate_metrics, MetricsReport};
use serde::{Deserialize, Serialize};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// A frozen classifier the cascade can call on `[B, C, T]` batches.
pub trait Stage<R: Real>: Sync {
    fn input_channels(&self) -> usize;
    fn classes(&self) -> usize;
    /// Row-wise class probabilities.
    fn probabilities(&self, x: &Tensor<R>) -> Result<Vec<Vec<f64>>>;
}

impl<R: Real> Stage<R> for Network<R> {
    fn input_channels(&self) -> usize {
        Network::input_channels(self)
    }

    fn classes(&self) -> usize {
        Network::classes(self)
    }

    fn probabilities(&self, x: &Tensor<R>) -> Result<Vec<Vec<f64>>> {
        let k = Network::classes(self);
        let p = Network::probabilities(self, x)?;
        Ok(p.to_f64_vec().chunks(k).map(|r| r.to_vec()).collect())
    }
}

pub struct CascadeConfig<'a, R: Real> {
    /// Binary head; index 1 is the anomaly class.
    pub stage1: &'a dyn Stage<R>,
    /// Fault classifier over `K` fault classes, reported as labels `1..=K`.
    pub stage2: &'a dyn Stage<R>,
    pub threshold: f64,
}

impl<'a, R: Real> CascadeConfig<'a, R> {
    pub fn new(stage1: &'a dyn Stage<R>, stage2: &'a dyn Stage<R>) -> Self {
        Self { stage1, stage2, threshold: DEFAULT_THRESHOLD }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stage1.classes() != 2 {
            return Err(Error::InvalidArgument(format!(
                "stage 1 must be a binary model, it has {} classes",
                self.stage1.classes()
            )));
        }
        if self.stage2.classes() == 0 {
            return Err(Error::InvalidArgument("stage 2 has no classes".into()));
        }
        if self.stage1.input_channels() != self.stage2.input_channels() {
            return Err(Error::Shape(format!(
                "stage 1 takes {} channels, stage 2 takes {}",
                self.stage1.input_channels(),
                self.stage2.input_channels()
            )));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::InvalidArgument(format!("threshold {} outside [0, 1]", self.threshold)));
        }
        Ok(())
    }

    fn check_input(&self, x: &Tensor<R>) -> Result<()> {
        let s = x.shape();
        if s.len() != 3 || s[1] != self.stage1.input_channels() {
            return Err(Error::Shape(format!(
                "cascade expects [B, {}, T], got {s:?}",
                self.stage1.input_channels()
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CascadeTrace {
    /// 0 for normal, otherwise the stage-2 class plus one.
    pub label: usize,
    pub anomaly_probability: f64,
    pub stage1: Vec<f64>,
    pub stage2: Option<Vec<f64>>,
    pub stage2_ran: bool,
}

/// Runs the cascade on every row of `x: [B, C, T]`. Stage 2 sees only the
/// rows stage 1 flagged.
pub fn cascade_predict<R: Real>(x: &Tensor<R>, cfg: &CascadeConfig<R>) -> Result<Vec<CascadeTrace>> {
    cfg.validate()?;
    cfg.check_input(x)?;
    let p1 = cfg.stage1.probabilities(x)?;
    let flagged: Vec<usize> = (0..p1.len()).filter(|&i| p1[i][1] >= cfg.threshold).collect();
    let mut p2 = if flagged.is_empty() { Vec::new() } else { cfg.stage2.probabilities(&select_rows(x, &flagged))? }
        .into_iter();
    let mut out = Vec::with_capacity(p1.len());
    for (i, s1) in p1.into_iter().enumerate() {
        let anomaly = s1[1];
        let trace = if anomaly >= cfg.threshold {
            let s2 = p2.next().ok_or_else(|| Error::Shape(format!("stage 2 returned too few rows for row {i}")))?;
            CascadeTrace { label: argmax(&s2) + 1, anomaly_probability: anomaly, stage1: s1, stage2: Some(s2), stage2_ran: true }
        } else {
            CascadeTrace { label: 0, anomaly_probability: anomaly, stage1: s1, stage2: None, stage2_ran: false }
        };
        out.push(trace);
    }
    Ok(out)
}

fn select_rows<R: Real>(x: &Tensor<R>, rows: &[usize]) -> Tensor<R> {
    let per: usize = x.shape()[1..].iter().product();
    let mut data = Vec::with_capacity(rows.len() * per);
    for &r in rows {
        data.extend_from_slice(&x.data()[r * per..(r + 1) * per]);
    }
    let mut shape = x.shape().to_vec();
    shape[0] = rows.len();
    Tensor { shape, data }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CascadeEvaluation {
    pub traces: Vec<CascadeTrace>,
    pub predictions: Vec<usize>,
    /// Share of samples that reached stage 2.
    pub stage2_fraction: f64,
    /// Against the full `0..=K` labels.
    pub metrics: MetricsReport,
}

/// End-to-end cascade over a labelled set whose labels are `0` (normal)
/// and `1..=K` (faults).
pub fn evaluate_cascade<R: Real>(
    ds: &Dataset,
    cfg: &CascadeConfig<R>,
    batch: usize,
    mode: Parallelism,
) -> Result<CascadeEvaluation> {
    if ds.is_empty() {
        return Err(Error::EmptyInput("cascade evaluation set"));
    }
    let classes = cfg.stage2.classes() + 1;
    if ds.classes > classes {
        return Err(Error::InvalidArgument(format!(
            "dataset has {} classes but the cascade can emit {classes}",
            ds.classes
        )));
    }
    let idx: Vec<usize> = (0..ds.len()).collect();
    let chunks: Vec<&[usize]> = idx.chunks(batch.max(1)).collect();
    let traces: Vec<CascadeTrace> =
        par::try_map(mode, &chunks, |c| cascade_predict(&ds.batch::<R>(c), cfg))?.into_iter().flatten().collect();
    let predictions: Vec<usize> = traces.iter().map(|t| t.label).collect();
    let ran = traces.iter().filter(|t| t.stage2_ran).count();
    let metrics = evaluate_metrics(&predictions, &ds.labels(), classes)?;
    Ok(CascadeEvaluation { stage2_fraction: ran as f64 / traces.len() as f64, traces, predictions, metrics })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    /// Per-sample cost of stage 1.
    pub c1: f64,
    /// Per-sample cost of stage 2.
    pub c2: f64,
    /// Fraction of normal samples.
    pub p_normal: f64,
}

impl CostModel {
    pub fn new(c1: f64, c2: f64, p_normal: f64) -> Result<Self> {
        let m = Self { c1, c2, p_normal };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c1 >= 0.0 && self.c2 >= 0.0 && self.c1.is_finite() && self.c2.is_finite()) {
            return Err(Error::InvalidArgument(format!("costs must be finite and >= 0, got {} and {}", self.c1, self.c2)));
        }
        if !(0.0..=1.0).contains(&self.p_normal) {
            return Err(Error::InvalidArgument(format!("normal proportion {} outside [0, 1]", self.p_normal)));
        }
        Ok(())
    }
}

/// Expected per-sample cost when stage 2 runs on the anomalous share only.
pub fn expected_cost(m: &CostModel) -> f64 {
    m.c1 + (1.0 - m.p_normal) * m.c2
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub flagged: usize,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

/// Anomaly-class precision, recall and F1 at each threshold. Any label
/// above 0 counts as anomalous.
pub fn threshold_sweep<R: Real>(
    stage1: &dyn Stage<R>,
    ds: &Dataset,
    thresholds: &[f64],
    batch: usize,
    mode: Parallelism,
) -> Result<Vec<SweepRow>> {
    if stage1.classes() != 2 {
        return Err(Error::InvalidArgument(format!("stage 1 must be binary, it has {} classes", stage1.classes())));
    }
    if ds.is_empty() {
        return Err(Error::EmptyInput("threshold sweep set"));
    }
    if ds.channels() != stage1.input_channels() {
        return Err(Error::Shape(format!("model takes {} channels, data has {}", stage1.input_channels(), ds.channels())));
    }
    let idx: Vec<usize> = (0..ds.len()).collect();
    let chunks: Vec<&[usize]> = idx.chunks(batch.max(1)).collect();
    let probs: Vec<f64> = par::try_map(mode, &chunks, |c| stage1.probabilities(&ds.batch::<R>(c)))?
        .into_iter()
        .flatten()
        .map(|p| p[1])
        .collect();
    let truth: Vec<bool> = ds.samples.iter().map(|s| s.label > 0).collect();
    sweep_scores(&probs, &truth, thresholds)
}

/// The sweep on precomputed anomaly probabilities.
pub fn sweep_scores(anomaly: &[f64], truth: &[bool], thresholds: &[f64]) -> Result<Vec<SweepRow>> {
    if anomaly.len() != truth.len() {
        return Err(Error::Shape(format!("{} scores for {} labels", anomaly.len(), truth.len())));
    }
    let positives = truth.iter().filter(|&&t| t).count();
    if positives == 0 || positives == truth.len() {
        return Err(Error::InvalidArgument("threshold sweep needs both normal and anomalous samples".into()));
    }
    if thresholds.is_empty() {
        return Err(Error::EmptyInput("threshold grid"));
    }
    if thresholds.iter().any(|t| !(*t > 0.0 && *t < 1.0)) {
        return Err(Error::InvalidArgument("thresholds must lie in (0, 1)".into()));
    }
    if thresholds.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidArgument("threshold grid must be sorted".into()));
    }
    Ok(thresholds
        .iter()
        .map(|&th| {
            let (mut tp, mut fp) = (0, 0);
            for (&p, &t) in anomaly.iter().zip(truth) {
                if p >= th {
                    if t {
                        tp += 1;
                    } else {
                        fp += 1;
                    }
                }
            }
            let fn_ = positives - tp;
            let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
            let recall = tp as f64 / positives as f64;
            let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
            SweepRow { threshold: th, precision, recall, f1, flagged: tp + fp, tp, fp, fn_ }
        })
        .collect())
}

/// `threshold,precision,recall,f1,flagged` with a header row.
pub fn sweep_to_delimited(rows: &[SweepRow], sep: char) -> String {
    let mut s = ["threshold", "precision", "recall", "f1", "flagged", "tp", "fp", "fn"].join(&sep.to_string());
    s.push('\n');
    for r in rows {
        let cells = [
            format!("{}", r.threshold),
            format!("{:.6}", r.precision),
            format!("{:.6}", r.recall),
            format!("{:.6}", r.f1),
            r.flagged.to_string(),
            r.tp.to_string(),
            r.fp.to_string(),
            r.fn_.to_string(),
        ];
        s.push_str(&cells.join(&sep.to_string()));
        s.push('\n');
    }
    s
}
