use crate::error::{Error, Result};
use crate::models::{ParamId, ParamStore};
use crate::real::Real;
use crate::tensor::Tensor;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First and second moment estimates, indexed like the parameter store.
#[derive(Clone, Debug, Default)]
pub struct AdamState<R> {
    pub step: u64,
    m: Vec<Option<Tensor<R>>>,
    v: Vec<Option<Tensor<R>>>,
}

impl<R: Real> AdamState<R> {
    pub fn new() -> Self {
        Self { step: 0, m: Vec::new(), v: Vec::new() }
    }
}

/// One bias-corrected Adam update with weight decay added to the gradient.
/// A non-finite gradient aborts the step before anything is modified.
pub fn adam_step<R: Real>(
    store: &mut ParamStore<R>,
    grads: &[(ParamId, Tensor<R>)],
    state: &mut AdamState<R>,
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    if let Some((id, _)) = grads.iter().find(|(_, g)| !g.all_finite()) {
        return Err(Error::NonFinite(format!("gradient of {}", store.get(*id).name)));
    }
    if state.m.len() < store.len() {
        state.m.resize(store.len(), None);
        state.v.resize(store.len(), None);
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - BETA1.powi(t);
    let c2 = 1.0 - BETA2.powi(t);
    let (b1, b2, wd) = (R::of(BETA1), R::of(BETA2), R::of(weight_decay));
    let (one_b1, one_b2) = (R::of(1.0 - BETA1), R::of(1.0 - BETA2));
    for (id, g) in grads {
        let i = id.index();
        let theta = store.value_mut(*id);
        if g.shape() != theta.shape() {
            return Err(Error::Shape(format!("gradient {:?} for parameter {:?}", g.shape(), theta.shape())));
        }
        let m = state.m[i].get_or_insert_with(|| Tensor::zeros(g.shape()));
        let v = state.v[i].get_or_insert_with(|| Tensor::zeros(g.shape()));
        for (((p, &gi), mi), vi) in theta.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
            let gd = gi + wd * *p;
            *mi = b1 * *mi + one_b1 * gd;
            *vi = b2 * *vi + one_b2 * gd * gd;
            let mhat = mi.f64() / c1;
            let vhat = vi.f64() / c2;
            *p -= R::of(lr * mhat / (vhat.sqrt() + ADAM_EPS));
        }
    }
    Ok(())
}

/// Scales all gradients by `max_norm / g` when their joint L2 norm `g`
/// exceeds `max_norm`. Returns the norm before clipping.
pub fn clip_global_norm<R: Real>(grads: &mut [Tensor<R>], max_norm: f64) -> Result<f64> {
    if !(max_norm > 0.0) {
        return Err(Error::InvalidArgument(format!("max norm must be > 0, got {max_norm}")));
    }
    let norm = grads.iter().map(|g| g.sq_norm()).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = R::of(max_norm / norm);
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    Ok(norm)
}

/// Halves (by default) the learning rate after `patience` consecutive
/// epochs without a strict decrease of the monitored loss.
#[derive(Clone, Debug, PartialEq)]
pub struct Plateau {
    pub lr: f64,
    pub factor: f64,
    pub patience: usize,
    pub min_lr: f64,
    pub tolerance: f64,
    best: f64,
    bad_epochs: usize,
}

impl Plateau {
    pub fn new(lr: f64, factor: f64, patience: usize, min_lr: f64) -> Result<Self> {
        if !(factor > 0.0 && factor < 1.0) {
            return Err(Error::InvalidArgument(format!("plateau factor must lie in (0, 1), got {factor}")));
        }
        if patience == 0 {
            return Err(Error::InvalidArgument("plateau patience must be >= 1".into()));
        }
        Ok(Self { lr, factor, patience, min_lr, tolerance: 1e-8, best: f64::INFINITY, bad_epochs: 0 })
    }

    pub fn bad_epochs(&self) -> usize {
        self.bad_epochs
    }

    /// Records one epoch's monitored value and returns the learning rate to
    /// use next.
    pub fn step(&mut self, monitored: f64) -> f64 {
        if monitored < self.best - self.tolerance {
            self.best = monitored;
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
            if self.bad_epochs >= self.patience {
                self.lr = (self.lr * self.factor).max(self.min_lr);
                self.bad_epochs = 0;
            }
        }
        self.lr
    }
}
