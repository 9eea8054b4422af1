//! Dense tensors and the reverse-mode recording used to differentiate them.
//!
//! Tensors are row-major. Sequence data is stored channel-major
//! (`[batch, channel, time]`) so 1-D convolutions stream over contiguous
//! time steps; [`Tensor::time_major_to_channel_major`] converts from the
//! `T×C` grids used at the edges of the crate.

mod gradcheck;
mod kernels;
mod tape;

pub use gradcheck::{grad_check, GradCheck};
pub use tape::{Gradients, Padding, Tape, Var};

use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<R> {
    pub(crate) shape: Vec<usize>,
    pub(crate) data: Vec<R>,
}

impl<R: Real> Tensor<R> {
    pub fn new(shape: Vec<usize>, data: Vec<R>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {n} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, R::zero())
    }

    pub fn full(shape: &[usize], v: R) -> Self {
        let n = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![v; n] }
    }

    pub fn scalar(v: R) -> Self {
        Tensor { shape: vec![], data: vec![v] }
    }

    pub fn from_f64(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::new(shape.to_vec(), data.iter().map(|&v| R::of(v)).collect())
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> R) -> Self {
        let n: usize = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: (0..n).map(&mut f).collect() }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[R] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [R] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<R> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> R {
        self.data[0]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::Shape(format!("cannot reshape {:?} to {shape:?}", self.shape)));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(R) -> R) -> Self {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn sum(&self) -> R {
        self.data.iter().copied().sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<S: Real>(&self) -> Tensor<S> {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|v| S::of(v.f64())).collect() }
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.f64()).collect()
    }

    /// Sum of squares, accumulated in 64-bit.
    pub fn sq_norm(&self) -> f64 {
        self.data.iter().map(|v| v.f64() * v.f64()).sum()
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor<R>) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Converts a `T×C` grid into the `C×T` layout used internally.
    pub fn time_major_to_channel_major(grid: &[R], steps: usize, channels: usize) -> Result<Self> {
        if grid.len() != steps * channels {
            return Err(Error::Shape(format!(
                "grid of {} values is not {steps}x{channels}",
                grid.len()
            )));
        }
        let mut data = vec![R::zero(); grid.len()];
        for t in 0..steps {
            for c in 0..channels {
                data[c * steps + t] = grid[t * channels + c];
            }
        }
        Tensor::new(vec![channels, steps], data)
    }

    /// Inverse of [`Tensor::time_major_to_channel_major`] for a `[C, T]` tensor.
    pub fn channel_major_to_time_major(&self) -> Vec<R> {
        assert_eq!(self.rank(), 2, "expected a [C, T] tensor");
        let (channels, steps) = (self.shape[0], self.shape[1]);
        let mut out = vec![R::zero(); self.data.len()];
        for c in 0..channels {
            for t in 0..steps {
                out[t * channels + c] = self.data[c * steps + t];
            }
        }
        out
    }
}

#[cfg(test)]
mod tests;
