//! Gradient, occlusion, class-activation and path-integrated attributions,
//! their channel/time aggregation, and the evidence-chain report.

mod methods;
mod report;


pub use methods::{
    class_probabilities, grad_cam, input_gradient, integrated_gradients, integrated_gradients_with, interpolate_linear,
    occlusion_sensitivity, IgResult, OcclusionResult,
};
pub use report::{
    attribute_all, consensus_sensors, evidence_chain, evidence_chain_with_maps, grid_to_delimited, key_segments, noise_perturbation_study, normalized_entropy,
    top_k, EvidenceChain, MethodEvidence, NoiseStudyResult, Segment,
};

use crate::error::{Error, Result};
pub use crate::par::Parallelism;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    InputGradient,
    Occlusion,
    GradCam,
    IntegratedGradients,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::InputGradient, Method::Occlusion, Method::GradCam, Method::IntegratedGradients];

    pub fn name(self) -> &'static str {
        match self {
            Method::InputGradient => "input_gradient",
            Method::Occlusion => "occlusion",
            Method::GradCam => "grad_cam",
            Method::IntegratedGradients => "integrated_gradients",
        }
    }
}

/// Importance over a `T×C` grid plus its two marginals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributionMap {
    pub method: Method,
    pub class: usize,
    pub steps: usize,
    pub channels: usize,
    /// Time-major: `grid[t * channels + j]`.
    pub grid: Vec<f64>,
    /// Signed grids are aggregated by absolute value.
    pub signed: bool,
    pub channel_scores: Vec<f64>,
    pub time_scores: Vec<f64>,
}

impl AttributionMap {
    pub fn new(method: Method, class: usize, steps: usize, channels: usize, grid: Vec<f64>, signed: bool) -> Result<Self> {
        if grid.len() != steps * channels {
            return Err(Error::Shape(format!("grid of {} values is not {steps}x{channels}", grid.len())));
        }
        let (channel_scores, time_scores) = aggregate(&grid, steps, channels, signed);
        Ok(Self { method, class, steps, channels, grid, signed, channel_scores, time_scores })
    }

    pub fn at(&self, t: usize, j: usize) -> f64 {
        self.grid[t * self.channels + j]
    }

    /// Element-wise mean of maps that share method, class and shape.
    pub fn mean(maps: &[AttributionMap]) -> Result<Self> {
        let first = maps.first().ok_or(Error::EmptyInput("attribution maps to average"))?;
        let mut grid = vec![0.0; first.grid.len()];
        for m in maps {
            if (m.method, m.steps, m.channels) != (first.method, first.steps, first.channels) {
                return Err(Error::Shape("cannot average maps of different methods or shapes".into()));
            }
            for (a, b) in grid.iter_mut().zip(&m.grid) {
                *a += b;
            }
        }
        let n = maps.len() as f64;
        grid.iter_mut().for_each(|v| *v /= n);
        Self::new(first.method, first.class, first.steps, first.channels, grid, first.signed)
    }
}

/// Channel sums and time sums of a time-major grid, of `|S|` when `signed`.
pub fn aggregate(grid: &[f64], steps: usize, channels: usize, signed: bool) -> (Vec<f64>, Vec<f64>) {
    let mut ch = vec![0.0; channels];
    let mut time = vec![0.0; steps];
    for t in 0..steps {
        for j in 0..channels {
            let v = grid[t * channels + j];
            let v = if signed { v.abs() } else { v };
            ch[j] += v;
            time[t] += v;
        }
    }
    (ch, time)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttributionConfig {
    /// Occlusion window; `None` means `T/16`.
    pub occlusion_window: Option<usize>,
    /// Occlusion stride; `None` means half the window.
    pub occlusion_stride: Option<usize>,
    pub baseline: f64,
    pub ig_steps: usize,
    pub top_k: usize,
    pub percentile: f64,
    /// Inputs evaluated per forward pass.
    pub batch: usize,
    pub parallelism: Parallelism,
}

impl Default for AttributionConfig {
    fn default() -> Self {
        Self {
            occlusion_window: None,
            occlusion_stride: None,
            baseline: 0.0,
            ig_steps: 50,
            top_k: 5,
            percentile: 90.0,
            batch: 64,
            parallelism: Parallelism::default(),
        }
    }
}

impl AttributionConfig {
    pub fn window(&self, steps: usize) -> usize {
        self.occlusion_window.unwrap_or((steps / 16).max(1))
    }

    pub fn stride(&self, steps: usize) -> usize {
        self.occlusion_stride.unwrap_or((self.window(steps) / 2).max(1))
    }
}
