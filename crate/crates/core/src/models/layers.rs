use super::params::{fan_in_uniform, ParamId, ParamKind, ParamStore};
use crate::error::Result;
use crate::real::Real;
use crate::tensor::{Padding, Tape, Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
pub const LN_EPS: f64 = 1e-5;

/// Batch statistics produced by one train-mode batch-norm call.
#[derive(Clone, Debug)]
pub struct BnUpdate<R> {
    pub mean_id: ParamId,
    pub var_id: ParamId,
    pub mean: Vec<R>,
    pub var: Vec<R>,
}

/// One forward pass of a network over a tape.
///
/// Parameters are bound lazily: as gradient leaves when `track_params` is
/// set (training, gradient importance) or as constants otherwise. Train
/// mode uses batch statistics in batch norm and enables dropout.
pub struct Forward<'a, R: Real> {
    pub tape: &'a mut Tape<R>,
    store: &'a ParamStore<R>,
    train: bool,
    track_params: bool,
    bound: Vec<Option<Var>>,
    bn_updates: Vec<BnUpdate<R>>,
    rng: Option<ChaCha8Rng>,
}

impl<'a, R: Real> Forward<'a, R> {
    /// Inference pass: running statistics, no dropout, parameters constant.
    pub fn eval(tape: &'a mut Tape<R>, store: &'a ParamStore<R>) -> Self {
        Self { bound: vec![None; store.len()], tape, store, train: false, track_params: false, bn_updates: Vec::new(), rng: None }
    }

    /// Training pass with parameters as gradient leaves. `rng` drives dropout.
    pub fn train(tape: &'a mut Tape<R>, store: &'a ParamStore<R>, rng: ChaCha8Rng) -> Self {
        Self {
            bound: vec![None; store.len()],
            tape,
            store,
            train: true,
            track_params: true,
            bn_updates: Vec::new(),
            rng: Some(rng),
        }
    }

    /// Eval-mode behaviour but with parameters recorded as leaves.
    pub fn eval_with_param_grads(tape: &'a mut Tape<R>, store: &'a ParamStore<R>) -> Self {
        let mut f = Self::eval(tape, store);
        f.track_params = true;
        f
    }

    pub fn is_train(&self) -> bool {
        self.train
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let value = self.store.value(id).clone();
        let v = if self.track_params && self.store.get(id).kind.learnable() {
            self.tape.leaf(value)
        } else {
            self.tape.constant(value)
        };
        self.bound[id.0] = Some(v);
        v
    }

    /// Learnable parameters that were bound as leaves during this pass.
    pub fn bound_params(&self) -> Vec<(ParamId, Var)> {
        self.bound
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|v| (ParamId(i), v)))
            .filter(|(id, v)| self.store.get(*id).kind.learnable() && self.tape.requires_grad(*v))
            .collect()
    }

    pub fn take_bn_updates(&mut self) -> Vec<BnUpdate<R>> {
        std::mem::take(&mut self.bn_updates)
    }

    /// Inverted dropout; identity outside train mode or at rate 0.
    pub fn dropout(&mut self, x: Var, rate: f64) -> Result<Var> {
        if !self.train || rate <= 0.0 {
            return Ok(x);
        }
        let Some(rng) = self.rng.as_mut() else { return Ok(x) };
        let keep = 1.0 - rate;
        let scale = R::of(1.0 / keep);
        let mask = Tensor::from_fn(self.tape.shape(x), |_| if rng.random::<f64>() < keep { scale } else { R::zero() });
        self.tape.mul_const(x, &mask)
    }
}

/// Applies recorded batch statistics to the running buffers.
pub fn apply_bn_updates<R: Real>(store: &mut ParamStore<R>, updates: &[BnUpdate<R>]) {
    let m = R::of(BN_MOMENTUM);
    let keep = R::one() - m;
    for u in updates {
        for (r, &b) in store.value_mut(u.mean_id).data_mut().iter_mut().zip(&u.mean) {
            *r = keep * *r + m * b;
        }
        for (r, &b) in store.value_mut(u.var_id).data_mut().iter_mut().zip(&u.var) {
            *r = keep * *r + m * b;
        }
    }
}

#[derive(Clone, Debug)]
pub struct Conv {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
}

impl Conv {
    pub fn new(store: &mut ParamStore<f64>, rng: &mut impl Rng, name: &str, cin: usize, cout: usize, k: usize, bias: bool) -> Self {
        let w = store.add(format!("{name}.weight"), ParamKind::ConvWeight, fan_in_uniform(rng, &[cout, cin, k], cin * k));
        let b = bias.then(|| store.add(format!("{name}.bias"), ParamKind::ConvBias, Tensor::zeros(&[cout])));
        Self { w, b, cin, cout, k }
    }

    pub fn forward<R: Real>(&self, f: &mut Forward<R>, x: Var) -> Result<Var> {
        let w = f.param(self.w);
        let b = self.b.map(|b| f.param(b));
        f.tape.conv1d(x, w, b, 1, Padding::Same)
    }

    pub fn weight_count(&self) -> usize {
        self.cout * self.cin * self.k
    }

    /// Same-padded stride-1 cost: one multiply-add per tap.
    pub fn flops(&self, t: usize) -> u64 {
        let mut f = 2 * (t * self.cin * self.cout * self.k) as u64;
        if self.b.is_some() {
            f += (t * self.cout) as u64;
        }
        f
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub mean: ParamId,
    pub var: ParamId,
    pub channels: usize,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore<f64>, name: &str, channels: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), ParamKind::BnGamma, Tensor::full(&[channels], 1.0)),
            beta: store.add(format!("{name}.beta"), ParamKind::BnBeta, Tensor::zeros(&[channels])),
            mean: store.add(format!("{name}.running_mean"), ParamKind::RunningMean, Tensor::zeros(&[channels])),
            var: store.add(format!("{name}.running_var"), ParamKind::RunningVar, Tensor::full(&[channels], 1.0)),
            channels,
        }
    }

    pub fn forward<R: Real>(&self, f: &mut Forward<R>, x: Var) -> Result<Var> {
        let g = f.param(self.gamma);
        let b = f.param(self.beta);
        if f.train {
            let (y, stats) = f.tape.batch_norm(x, g, b, BN_EPS, None)?;
            if let Some((mean, var)) = stats {
                f.bn_updates.push(BnUpdate { mean_id: self.mean, var_id: self.var, mean, var });
            }
            Ok(y)
        } else {
            let store = f.store;
            let running = (store.value(self.mean).data(), store.value(self.var).data());
            Ok(f.tape.batch_norm(x, g, b, BN_EPS, Some(running))?.0)
        }
    }
}

#[derive(Clone, Debug)]
pub struct Dense {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub n_in: usize,
    pub n_out: usize,
}

impl Dense {
    pub fn new(store: &mut ParamStore<f64>, rng: &mut impl Rng, name: &str, n_in: usize, n_out: usize, bias: bool) -> Self {
        let w = store.add(format!("{name}.weight"), ParamKind::DenseWeight, fan_in_uniform(rng, &[n_out, n_in], n_in));
        let b = bias.then(|| store.add(format!("{name}.bias"), ParamKind::DenseBias, Tensor::zeros(&[n_out])));
        Self { w, b, n_in, n_out }
    }

    /// A bias-free layer whose weights start at zero.
    pub fn zeroed(store: &mut ParamStore<f64>, name: &str, n_in: usize, n_out: usize) -> Self {
        let w = store.add(format!("{name}.weight"), ParamKind::DenseWeight, Tensor::zeros(&[n_out, n_in]));
        Self { w, b: None, n_in, n_out }
    }

    pub fn forward<R: Real>(&self, f: &mut Forward<R>, x: Var) -> Result<Var> {
        let w = f.param(self.w);
        let b = self.b.map(|b| f.param(b));
        f.tape.dense(x, w, b)
    }

    /// Cost for `rows` input vectors.
    pub fn flops(&self, rows: usize) -> u64 {
        let mut f = 2 * (rows * self.n_in * self.n_out) as u64;
        if self.b.is_some() {
            f += (rows * self.n_out) as u64;
        }
        f
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub d: usize,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore<f64>, name: &str, d: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), ParamKind::NormGamma, Tensor::full(&[d], 1.0)),
            beta: store.add(format!("{name}.beta"), ParamKind::NormBeta, Tensor::zeros(&[d])),
            d,
        }
    }

    pub fn forward<R: Real>(&self, f: &mut Forward<R>, x: Var) -> Result<Var> {
        let g = f.param(self.gamma);
        let b = f.param(self.beta);
        f.tape.layer_norm(x, g, b, LN_EPS)
    }
}
