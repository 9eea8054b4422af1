//! Network builders and analytic counters.

mod blocks;
mod encoder;
mod layers;
mod params;
mod spec;

#[cfg(test)]
mod tests;

pub use blocks::{Backbone, InceptionModule, LayerFlops, SeGate, Shortcut};
pub use encoder::{positional_encoding, Encoder, EncoderLayer, EncoderOutput};
pub use layers::{apply_bn_updates, BatchNorm, BnUpdate, Conv, Dense, Forward, LayerNorm, BN_EPS, BN_MOMENTUM};
pub use params::{Param, ParamId, ParamKind, ParamStore};
pub use spec::{receptive_field, BackboneSpec, EncoderSpec, InceptionModuleSpec, ModelSpec, ModuleTemplate, SeGateSpec};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::{Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Clone, Debug)]
struct Arch {
    gate: Option<SeGate>,
    backbone: Backbone,
    encoder: Option<Encoder>,
    head: Dense,
}

/// A built network: immutable structure plus its parameter store.
#[derive(Clone, Debug)]
pub struct Network<R> {
    spec: ModelSpec,
    seed: u64,
    arch: Arch,
    store: ParamStore<R>,
}

/// Handles recorded by one [`Network::forward`] call.
pub struct Outputs {
    /// `[B, K]`
    pub logits: Var,
    /// Last backbone feature map `[B, Cf, T]`, post-ReLU.
    pub features: Var,
    /// Input-gate weights ŝ `[B, C]` when the model has a gate.
    pub gate: Option<Var>,
    pub attention: Vec<Var>,
}

/// Anything that can record eval-mode logits for `x: [B, C, T]` on a tape.
/// Attribution and gradient importance only need this much of a model.
pub trait Differentiable<R: Real>: Sync {
    fn input_channels(&self) -> usize;
    fn classes(&self) -> usize;
    /// Returns `[B, K]` logits and, when the model has one, the feature map
    /// used for class activation maps.
    fn record(&self, tape: &mut Tape<R>, x: Var) -> Result<(Var, Option<Var>)>;
}

impl<R: Real> Differentiable<R> for Network<R> {
    fn input_channels(&self) -> usize {
        Network::input_channels(self)
    }

    fn classes(&self) -> usize {
        Network::classes(self)
    }

    fn record(&self, tape: &mut Tape<R>, x: Var) -> Result<(Var, Option<Var>)> {
        let mut f = Forward::eval(tape, &self.store);
        let out = self.forward(&mut f, x)?;
        Ok((out.logits, Some(out.features)))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorCount {
    pub name: String,
    pub category: String,
    pub count: usize,
}

/// Enumerated versus closed-form weight count for one module.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModuleCount {
    pub module: usize,
    pub branches: String,
    pub input_channels: usize,
    pub enumerated: usize,
    pub analytic: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamReport {
    pub tensors: Vec<TensorCount>,
    pub by_category: BTreeMap<String, usize>,
    /// Learnable scalars; running statistics are listed under `buffer`
    /// in `by_category` but not included here.
    pub total: usize,
    pub modules: Vec<ModuleCount>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlopReport {
    pub seq_len: usize,
    pub layers: Vec<LayerFlops>,
    pub total: u64,
}

impl<R: Real> Network<R> {
    /// Builds and initialises a network. Initial values are drawn in f64 and
    /// rounded, so the f32 and f64 builds of one seed agree.
    pub fn new(spec: &ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::<f64>::new();
        let gate = spec.input_gate.as_ref().map(|g| SeGate::new(&mut store, &mut rng, g)).transpose()?;
        let backbone = Backbone::new(&mut store, &mut rng, &spec.backbone)?;
        let cf = spec.backbone.feature_channels();
        let encoder = spec.encoder.as_ref().map(|e| Encoder::new(&mut store, &mut rng, e, cf)).transpose()?;
        let head_in = spec.encoder.as_ref().map_or(cf, |e| e.d_model);
        let head = Dense::new(&mut store, &mut rng, "head", head_in, spec.classes(), true);
        Ok(Self { spec: spec.clone(), seed, arch: Arch { gate, backbone, encoder, head }, store: store.cast() })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn store(&self) -> &ParamStore<R> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<R> {
        &mut self.store
    }

    pub fn backbone(&self) -> &Backbone {
        &self.arch.backbone
    }

    pub fn gate(&self) -> Option<&SeGate> {
        self.arch.gate.as_ref()
    }

    pub fn encoder(&self) -> Option<&Encoder> {
        self.arch.encoder.as_ref()
    }

    pub fn head(&self) -> &Dense {
        &self.arch.head
    }

    pub fn input_channels(&self) -> usize {
        self.spec.input_channels()
    }

    pub fn classes(&self) -> usize {
        self.spec.classes()
    }

    pub fn cast<S: Real>(&self) -> Network<S> {
        Network { spec: self.spec.clone(), seed: self.seed, arch: self.arch.clone(), store: self.store.cast() }
    }

    /// Records the network on `f.tape` for input `x: [B, C, T]`.
    pub fn forward(&self, f: &mut Forward<R>, x: Var) -> Result<Outputs> {
        let xs = f.tape.shape(x).to_vec();
        if xs.len() != 3 || xs[1] != self.input_channels() {
            return Err(Error::Shape(format!("model expects [B, {}, T], got {xs:?}", self.input_channels())));
        }
        let (x, gate) = match &self.arch.gate {
            Some(g) => {
                let (y, s) = g.forward(f, x)?;
                (y, Some(s))
            }
            None => (x, None),
        };
        let features = self.arch.backbone.forward(f, x)?;
        let (pooled, attention) = match &self.arch.encoder {
            Some(enc) => {
                let out = enc.forward(f, features)?;
                (f.tape.mean_axis(out.sequence, 1)?, out.attention)
            }
            None => (f.tape.gap(features)?, Vec::new()),
        };
        let logits = self.arch.head.forward(f, pooled)?;
        Ok(Outputs { logits, features, gate, attention })
    }

    /// Eval-mode logits `[B, K]` without gradient bookkeeping.
    pub fn logits(&self, x: &Tensor<R>) -> Result<Tensor<R>> {
        let mut tape = Tape::new();
        let mut f = Forward::eval(&mut tape, &self.store);
        let xv = f.tape.constant(x.clone());
        let out = self.forward(&mut f, xv)?;
        Ok(tape.value(out.logits).clone())
    }

    /// Eval-mode class probabilities `[B, K]`.
    pub fn probabilities(&self, x: &Tensor<R>) -> Result<Tensor<R>> {
        let mut tape = Tape::new();
        let mut f = Forward::eval(&mut tape, &self.store);
        let xv = f.tape.constant(x.clone());
        let out = self.forward(&mut f, xv)?;
        let p = tape.softmax(out.logits, 1.0)?;
        Ok(tape.value(p).clone())
    }

    /// Exact enumeration of stored scalars plus the closed-form check for
    /// every inception module.
    pub fn param_report(&self) -> ParamReport {
        let mut by_category = BTreeMap::new();
        let mut tensors = Vec::with_capacity(self.store.len());
        let mut total = 0;
        for (_, p) in self.store.iter() {
            let count = p.value.len();
            *by_category.entry(p.kind.category().to_string()).or_insert(0) += count;
            if p.kind.learnable() {
                total += count;
            }
            tensors.push(TensorCount { name: p.name.clone(), category: p.kind.category().into(), count });
        }
        let modules = self
            .arch
            .backbone
            .modules
            .iter()
            .enumerate()
            .map(|(i, m)| ModuleCount {
                module: i,
                branches: m.spec.template().label(),
                input_channels: m.spec.input_channels,
                enumerated: m.convs().iter().map(|c| self.store.value(c.w).len()).sum(),
                analytic: m.spec.analytic_weight_count(),
            })
            .collect();
        ParamReport { tensors, by_category, total, modules }
    }

    /// Per-sample FLOPs at sequence length `t`: 2 per multiply-add, 1 per
    /// output element for pooling, normalisation, activations and adds.
    pub fn flop_report(&self, t: usize) -> FlopReport {
        let mut layers = Vec::new();
        if let Some(g) = &self.arch.gate {
            g.flops(t, &mut layers);
        }
        self.arch.backbone.flops(t, &mut layers);
        let cf = self.spec.backbone.feature_channels() as u64;
        match &self.arch.encoder {
            Some(enc) => {
                enc.flops(t, &mut layers);
                layers.push(LayerFlops { name: "sequence_mean".into(), flops: enc.spec.d_model as u64 });
            }
            None => layers.push(LayerFlops { name: "gap".into(), flops: cf }),
        }
        layers.push(LayerFlops { name: "head".into(), flops: self.arch.head.flops(1) });
        let total = layers.iter().map(|l| l.flops).sum();
        FlopReport { seq_len: t, layers, total }
    }
}
