//! Flight records: ingestion, preprocessing, augmentation, splitting, a
//! synthetic generator with ground truth, and the on-disk container.

mod augment;
mod container;
mod preprocess;
mod split;
mod synth;


pub use augment::{balance_dataset, timewarp_augment, warp_positions};
pub use container::{read_dataset, write_dataset, LABELS_FILE, MANIFEST_FILE, VALUES_FILE};
pub use preprocess::{
    fill_gaps, ingest_and_preprocess, min_max_normalize, parse_flight_csv, read_flight_csv, resample_linear,
    PreprocessConfig, RawFlight,
};
pub use split::stratified_split;
pub use synth::{synth_generate, FaultDef, Signature, SynthSpec, STANDARD_AMPLITUDE};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

/// Ground truth carried by synthetic fault samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaultAnnotation {
    pub channels: Vec<usize>,
    /// Window as fractions of the record length, `[start, end)`.
    pub start: f64,
    pub end: f64,
    pub signature: Signature,
}

impl FaultAnnotation {
    /// Window in time steps for a record of length `t`.
    pub fn window_steps(&self, t: usize) -> (usize, usize) {
        window_steps(self.start, self.end, t)
    }
}

pub(crate) fn window_steps(start: f64, end: f64, t: usize) -> (usize, usize) {
    let a = ((start * t as f64).round() as usize).min(t);
    let b = ((end * t as f64).round() as usize).clamp(a, t);
    (a, b)
}

/// One record, stored channel-major: `values[c * steps + t]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeSeriesSample {
    pub values: Vec<f32>,
    pub channels: usize,
    pub steps: usize,
    pub label: usize,
    pub source: String,
    pub annotation: Option<FaultAnnotation>,
}

impl TimeSeriesSample {
    pub fn channel(&self, c: usize) -> &[f32] {
        &self.values[c * self.steps..(c + 1) * self.steps]
    }

    pub fn value(&self, t: usize, c: usize) -> f32 {
        self.values[c * self.steps + t]
    }

    /// `[1, C, T]` tensor for model input.
    pub fn tensor<R: Real>(&self) -> Tensor<R> {
        Tensor::from_fn(&[1, self.channels, self.steps], |i| R::of(self.values[i] as f64))
    }

    /// Checks the stored-sample contract: finite values within [0, 1].
    pub fn validate(&self) -> Result<()> {
        if self.values.len() != self.channels * self.steps {
            return Err(Error::Shape(format!(
                "sample {} holds {} values for {}x{}",
                self.source,
                self.values.len(),
                self.channels,
                self.steps
            )));
        }
        if let Some(v) = self.values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!("sample {} has value {v} outside [0, 1]", self.source)));
        }
        Ok(())
    }
}

/// Counts of everything preprocessing dropped or filled.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub flights_in: usize,
    pub dropped_missing: usize,
    pub dropped_short: usize,
    pub interpolated_values: usize,
    pub edge_filled_values: usize,
    pub constant_channels: usize,
    pub augmented: usize,
    pub dropped: Vec<DropRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DropRecord {
    pub source: String,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub samples: usize,
    pub channels: usize,
    pub steps: usize,
    pub classes: usize,
    pub class_counts: Vec<usize>,
    pub channel_names: Vec<String>,
    pub provenance: Provenance,
    pub seed: Option<u64>,
    pub layout: String,
    pub sources: Vec<String>,
    pub annotations: Vec<Option<FaultAnnotation>>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub samples: Vec<TimeSeriesSample>,
    pub channel_names: Vec<String>,
    pub classes: usize,
    pub steps: usize,
    pub provenance: Provenance,
    pub seed: Option<u64>,
    pub warnings: Vec<String>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.channel_names.len()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for s in &self.samples {
            counts[s.label] += 1;
        }
        counts
    }

    /// Same metadata, selected samples.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset { samples: idx.iter().map(|&i| self.samples[i].clone()).collect(), ..self.empty_like() }
    }

    pub fn empty_like(&self) -> Dataset {
        Dataset {
            samples: Vec::new(),
            channel_names: self.channel_names.clone(),
            classes: self.classes,
            steps: self.steps,
            provenance: self.provenance.clone(),
            seed: self.seed,
            warnings: self.warnings.clone(),
        }
    }

    /// Stacks the selected samples into `[B, C, T]`.
    pub fn batch<R: Real>(&self, idx: &[usize]) -> Tensor<R> {
        let per = self.channels() * self.steps;
        let mut data = Vec::with_capacity(idx.len() * per);
        for &i in idx {
            data.extend(self.samples[i].values.iter().map(|&v| R::of(v as f64)));
        }
        Tensor { shape: vec![idx.len(), self.channels(), self.steps], data }
    }

    pub fn manifest(&self) -> DatasetManifest {
        DatasetManifest {
            samples: self.len(),
            channels: self.channels(),
            steps: self.steps,
            classes: self.classes,
            class_counts: self.class_counts(),
            channel_names: self.channel_names.clone(),
            provenance: self.provenance.clone(),
            seed: self.seed,
            layout: container::LAYOUT.into(),
            sources: self.samples.iter().map(|s| s.source.clone()).collect(),
            annotations: self.samples.iter().map(|s| s.annotation.clone()).collect(),
            warnings: self.warnings.clone(),
        }
    }

    /// Checks every sample and the label range.
    pub fn validate(&self) -> Result<()> {
        for s in &self.samples {
            if s.channels != self.channels() || s.steps != self.steps {
                return Err(Error::Shape(format!(
                    "sample {} is {}x{}, dataset is {}x{}",
                    s.source,
                    s.channels,
                    s.steps,
                    self.channels(),
                    self.steps
                )));
            }
            if s.label >= self.classes {
                return Err(Error::LabelOutOfRange { label: s.label, classes: self.classes });
            }
            s.validate()?;
        }
        Ok(())
    }

    /// Relabels to anomaly detection: 0 stays normal, every fault becomes 1.
    pub fn binary(&self) -> Dataset {
        let mut d = self.clone();
        d.classes = 2;
        for s in &mut d.samples {
            s.label = usize::from(s.label > 0);
        }
        d
    }

    /// Fault classes only, relabelled `1..K` to `0..K-1`.
    pub fn faults_only(&self) -> Dataset {
        let mut d = self.empty_like();
        d.classes = self.classes.saturating_sub(1);
        d.samples = self
            .samples
            .iter()
            .filter(|s| s.label > 0)
            .map(|s| TimeSeriesSample { label: s.label - 1, ..s.clone() })
            .collect();
        d
    }

    /// Keeps the listed channels, in the given order.
    pub fn select_channels(&self, keep: &[usize]) -> Result<Dataset> {
        if let Some(&c) = keep.iter().find(|&&c| c >= self.channels()) {
            return Err(Error::InvalidArgument(format!("channel {c} out of range")));
        }
        let mut d = self.empty_like();
        d.channel_names = keep.iter().map(|&c| self.channel_names[c].clone()).collect();
        d.samples = self
            .samples
            .iter()
            .map(|s| {
                let mut values = Vec::with_capacity(keep.len() * s.steps);
                for &c in keep {
                    values.extend_from_slice(s.channel(c));
                }
                let annotation = s.annotation.as_ref().map(|a| FaultAnnotation {
                    channels: a.channels.iter().filter_map(|c| keep.iter().position(|k| k == c)).collect(),
                    ..a.clone()
                });
                TimeSeriesSample { values, channels: keep.len(), annotation, ..s.clone() }
            })
            .collect();
        Ok(d)
    }
}
