use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// What a stored tensor is for. Running statistics are buffers, not
/// learnable parameters, but they travel with the model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    ConvWeight,
    ConvBias,
    DenseWeight,
    DenseBias,
    BnGamma,
    BnBeta,
    NormGamma,
    NormBeta,
    RunningMean,
    RunningVar,
}

impl ParamKind {
    pub fn learnable(self) -> bool {
        !matches!(self, ParamKind::RunningMean | ParamKind::RunningVar)
    }

    /// Reporting bucket used by the parameter counter.
    pub fn category(self) -> &'static str {
        match self {
            ParamKind::ConvWeight => "conv_weight",
            ParamKind::ConvBias | ParamKind::DenseBias => "bias",
            ParamKind::DenseWeight => "dense_weight",
            ParamKind::BnGamma | ParamKind::BnBeta => "bn_affine",
            ParamKind::NormGamma | ParamKind::NormBeta => "norm_affine",
            ParamKind::RunningMean | ParamKind::RunningVar => "buffer",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct Param<R> {
    pub name: String,
    pub kind: ParamKind,
    pub value: Tensor<R>,
}

/// Flat, ordered storage for every tensor a network owns.
#[derive(Clone, Debug)]
pub struct ParamStore<R> {
    params: Vec<Param<R>>,
}

impl<R: Real> Default for ParamStore<R> {
    fn default() -> Self {
        Self { params: Vec::new() }
    }
}

impl<R: Real> ParamStore<R> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, kind: ParamKind, value: Tensor<R>) -> ParamId {
        self.params.push(Param { name: name.into(), kind, value });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param<R> {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<R> {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<R> {
        &mut self.params[id.0].value
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<R>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn learnable_ids(&self) -> Vec<ParamId> {
        self.iter().filter(|(_, p)| p.kind.learnable()).map(|(id, _)| id).collect()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Number of learnable scalars.
    pub fn learnable_count(&self) -> usize {
        self.params.iter().filter(|p| p.kind.learnable()).map(|p| p.value.len()).sum()
    }

    pub fn cast<S: Real>(&self) -> ParamStore<S> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param { name: p.name.clone(), kind: p.kind, value: p.value.cast() })
                .collect(),
        }
    }

    /// Replaces values from another store with the same layout.
    pub fn load_from(&mut self, other: &ParamStore<R>) -> Result<()> {
        if other.len() != self.len() {
            return Err(Error::Shape(format!("store has {} tensors, source has {}", self.len(), other.len())));
        }
        for (dst, src) in self.params.iter_mut().zip(&other.params) {
            if dst.name != src.name || dst.value.shape() != src.value.shape() {
                return Err(Error::Shape(format!(
                    "tensor {} {:?} does not match {} {:?}",
                    dst.name,
                    dst.value.shape(),
                    src.name,
                    src.value.shape()
                )));
            }
            dst.value = src.value.clone();
        }
        Ok(())
    }
}

/// Uniform fan-in scaled initialisation, bound `sqrt(6 / fan_in)`.
pub(crate) fn fan_in_uniform(rng: &mut impl Rng, shape: &[usize], fan_in: usize) -> Tensor<f64> {
    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
    Tensor::from_fn(shape, |_| rng.random_range(-bound..=bound))
}
