use super::losses::{cross_entropy_loss, distill_loss_var, DistillConfig};
use super::metrics::{argmax, evaluate_metrics, MetricsReport};
use super::optim::{adam_step, clip_global_norm, AdamState, Plateau};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::models::{apply_bn_updates, Forward, Network};
use crate::par::{self, Parallelism};
use crate::real::Real;
use crate::tensor::{Tape, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

/// Validation quantity used to pick the returned checkpoint.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Monitor {
    #[default]
    MacroF1,
    /// Recall of class 1 for binary tasks, macro recall otherwise.
    Recall,
    Accuracy,
}

impl Monitor {
    pub fn read(self, m: &MetricsReport) -> f64 {
        match self {
            Monitor::MacroF1 => m.macro_f1,
            Monitor::Recall if m.per_class.len() == 2 => m.per_class[1].recall,
            Monitor::Recall => m.macro_recall,
            Monitor::Accuracy => m.accuracy,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub clip_norm: f64,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub min_lr: f64,
    pub seed: u64,
    pub monitor: Monitor,
    /// Stop after this many epochs without a new best monitored value.
    pub early_stop: Option<usize>,
    /// JSON-lines epoch log.
    pub log_path: Option<PathBuf>,
    pub eval_batch: usize,
    pub parallelism: Parallelism,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            weight_decay: 1e-4,
            batch_size: 32,
            epochs: 200,
            clip_norm: 1.0,
            plateau_factor: 0.5,
            plateau_patience: 10,
            min_lr: 1e-7,
            seed: 0,
            monitor: Monitor::MacroF1,
            early_stop: None,
            log_path: None,
            eval_batch: 64,
            parallelism: Parallelism::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate must be > 0, got {}", self.lr));
        }
        if !(self.weight_decay >= 0.0) {
            return bad(format!("weight decay must be >= 0, got {}", self.weight_decay));
        }
        if !(self.clip_norm > 0.0) {
            return bad(format!("clip norm must be > 0, got {}", self.clip_norm));
        }
        if self.batch_size == 0 || self.eval_batch == 0 {
            return bad("batch sizes must be >= 1".into());
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if self.plateau_patience == 0 || self.early_stop == Some(0) {
            return bad("patience must be >= 1".into());
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return bad(format!("plateau factor must lie in (0, 1), got {}", self.plateau_factor));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub val_macro_f1: f64,
    pub monitored: f64,
    /// Mean pre-clipping global gradient norm over the epoch's batches.
    pub grad_norm: f64,
    pub seconds: f64,
}

pub struct FitOutcome<R> {
    /// Weights from the epoch with the best monitored value (lower validation
    /// loss among ties).
    pub model: Network<R>,
    /// Weights after the last completed epoch.
    pub last: Network<R>,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_metric: f64,
}

/// Eval-mode predictions over a dataset.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub logits: Vec<Vec<f64>>,
    pub predictions: Vec<usize>,
    /// Mean cross-entropy.
    pub loss: f64,
    pub metrics: MetricsReport,
}

/// Eval-mode logits for every sample, computed in chunks of `batch`.
pub fn predict_logits<R: Real>(
    model: &Network<R>,
    ds: &Dataset,
    batch: usize,
    mode: Parallelism,
) -> Result<Vec<Vec<f64>>> {
    let idx: Vec<usize> = (0..ds.len()).collect();
    let chunks: Vec<&[usize]> = idx.chunks(batch.max(1)).collect();
    let k = model.classes();
    let out = par::try_map(mode, &chunks, |c| -> Result<Vec<Vec<f64>>> {
        let z = model.logits(&ds.batch::<R>(c))?;
        Ok(z.to_f64_vec().chunks(k).map(|r| r.to_vec()).collect())
    })?;
    Ok(out.into_iter().flatten().collect())
}

fn mean_ce(logits: &[Vec<f64>], labels: &[usize]) -> f64 {
    let total: f64 = logits
        .iter()
        .zip(labels)
        .map(|(z, &y)| {
            let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            lse - z[y]
        })
        .sum();
    total / labels.len().max(1) as f64
}

pub fn evaluate<R: Real>(model: &Network<R>, ds: &Dataset, batch: usize, mode: Parallelism) -> Result<Evaluation> {
    if ds.is_empty() {
        return Err(Error::EmptyInput("evaluation dataset"));
    }
    let labels = ds.labels();
    if let Some(&y) = labels.iter().find(|&&y| y >= model.classes()) {
        return Err(Error::LabelOutOfRange { label: y, classes: model.classes() });
    }
    let logits = predict_logits(model, ds, batch, mode)?;
    let predictions: Vec<usize> = logits.iter().map(|z| argmax(z)).collect();
    let metrics = evaluate_metrics(&predictions, &labels, model.classes())?;
    Ok(Evaluation { loss: mean_ce(&logits, &labels), logits, predictions, metrics })
}

/// Mini-batch training with Adam, global-norm clipping and plateau decay.
/// With `teacher` set, the loss mixes hard labels with the teacher's
/// softened predictions (teacher weights stay frozen).
pub fn fit<R: Real>(
    model: &Network<R>,
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
    teacher: Option<(&Network<R>, &DistillConfig)>,
) -> Result<FitOutcome<R>> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyInput("training set"));
    }
    if val.is_empty() {
        return Err(Error::EmptyInput("validation set"));
    }
    for ds in [train, val] {
        if ds.channels() != model.input_channels() {
            return Err(Error::Shape(format!("model takes {} channels, data has {}", model.input_channels(), ds.channels())));
        }
        if let Some(&y) = ds.labels().iter().find(|&&y| y >= model.classes()) {
            return Err(Error::LabelOutOfRange { label: y, classes: model.classes() });
        }
    }
    let train_sources: HashSet<&str> = train.samples.iter().map(|s| s.source.as_str()).collect();
    if let Some(s) = val.samples.iter().find(|s| train_sources.contains(s.source.as_str())) {
        return Err(Error::InvalidArgument(format!("sample '{}' is in both training and validation sets", s.source)));
    }
    let teacher_logits = match teacher {
        Some((t, dcfg)) => {
            dcfg.validate()?;
            if t.classes() != model.classes() || t.input_channels() != model.input_channels() {
                return Err(Error::Shape("teacher and student disagree on input channels or classes".into()));
            }
            Some(predict_logits(t, train, cfg.eval_batch, cfg.parallelism)?)
        }
        None => None,
    };
    let mut log = match &cfg.log_path {
        Some(p) => Some(std::fs::File::create(p)?),
        None => None,
    };

    let mut model = model.clone();
    let mut best = model.clone();
    let mut best_metric = f64::NEG_INFINITY;
    let mut best_loss = f64::INFINITY;
    let mut best_epoch = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new();
    let mut plateau = Plateau::new(cfg.lr, cfg.plateau_factor, cfg.plateau_patience, cfg.min_lr)?;
    let mut history = Vec::new();
    let labels = train.labels();
    let k = model.classes();
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let lr = plateau.lr;
        order.shuffle(&mut rng);
        let (mut loss_sum, mut norm_sum, mut batches) = (0.0, 0.0, 0usize);
        for (bi, idx) in order.chunks(cfg.batch_size).enumerate() {
            let x = train.batch::<R>(idx);
            let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            let mut tape = Tape::new();
            let dropout_rng = ChaCha8Rng::seed_from_u64(rng.random());
            let mut f = Forward::train(&mut tape, model.store(), dropout_rng);
            let xv = f.tape.constant(x);
            let out = model.forward(&mut f, xv)?;
            if !f.tape.value(out.logits).all_finite() {
                return Err(Error::NonFinite(format!("model output at epoch {epoch}, batch {bi} (lr {lr:e})")));
            }
            let loss = match (&teacher_logits, teacher) {
                (Some(tl), Some((_, dcfg))) => {
                    let rows: Vec<f64> = idx.iter().flat_map(|&i| tl[i].iter().copied()).collect();
                    let zt = Tensor::<R>::from_f64(&[idx.len(), k], &rows)?;
                    distill_loss_var(f.tape, &zt, out.logits, &y, dcfg)?
                }
                _ => cross_entropy_loss(f.tape, out.logits, &y)?,
            };
            let lv = f.tape.value(loss).item().f64();
            if !lv.is_finite() {
                return Err(Error::NonFinite(format!("training loss {lv} at epoch {epoch}, batch {bi} (lr {lr:e})")));
            }
            let bound = f.bound_params();
            let bn = f.take_bn_updates();
            drop(f);
            let mut grads = tape.backward(loss)?;
            let (ids, mut gs): (Vec<_>, Vec<_>) =
                bound.into_iter().filter_map(|(id, v)| grads.take(v).map(|g| (id, g))).unzip();
            norm_sum += clip_global_norm(&mut gs, cfg.clip_norm)?;
            let pairs: Vec<_> = ids.into_iter().zip(gs).collect();
            adam_step(model.store_mut(), &pairs, &mut adam, lr, cfg.weight_decay).map_err(|e| match e {
                Error::NonFinite(m) => Error::NonFinite(format!("{m} at epoch {epoch}, batch {bi}")),
                e => e,
            })?;
            apply_bn_updates(model.store_mut(), &bn);
            loss_sum += lv;
            batches += 1;
        }
        let ev = evaluate(&model, val, cfg.eval_batch, cfg.parallelism)?;
        plateau.step(ev.loss);
        let monitored = cfg.monitor.read(&ev.metrics);
        let rec = EpochRecord {
            epoch,
            lr,
            train_loss: loss_sum / batches as f64,
            val_loss: ev.loss,
            val_accuracy: ev.metrics.accuracy,
            val_macro_f1: ev.metrics.macro_f1,
            monitored,
            grad_norm: norm_sum / batches as f64,
            seconds: started.elapsed().as_secs_f64(),
        };
        log::debug!("epoch {epoch}: train {:.4} val {:.4} monitored {:.4}", rec.train_loss, rec.val_loss, monitored);
        if let Some(file) = log.as_mut() {
            writeln!(file, "{}", serde_json::to_string(&rec)?)?;
        }
        history.push(rec);
        // ties on the monitored metric (common once it saturates) go to the
        // lower validation loss
        if monitored > best_metric || (monitored == best_metric && ev.loss < best_loss) {
            best_metric = monitored;
            best_loss = ev.loss;
            best_epoch = epoch;
            best = model.clone();
        }
        if let Some(p) = cfg.early_stop {
            if epoch - best_epoch >= p {
                break;
            }
        }
    }
    Ok(FitOutcome { model: best, last: model, history, best_epoch, best_metric })
}
