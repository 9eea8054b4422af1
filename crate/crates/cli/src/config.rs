//! Run configuration: one TOML table per module, every field defaulted.

use anyhow::{bail, Context, Result};
use fdiag::attribution::AttributionConfig;
use fdiag::channel_select::DEFAULT_BINS;
use fdiag::data::PreprocessConfig;
use fdiag::models::{EncoderSpec, ModelSpec, ModuleTemplate};
use fdiag::training::{DistillConfig, Monitor, TrainConfig};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Precision {
    #[default]
    #[serde(rename = "32")]
    F32,
    #[serde(rename = "64")]
    F64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// Normal plus every fault class.
    #[default]
    Multiclass,
    /// Normal versus any fault.
    Detection,
    /// Fault classes only.
    Identification,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub seed: u64,
    pub precision: Precision,
    pub out: PathBuf,
}

impl Default for RunSection {
    fn default() -> Self {
        Self { seed: 0, precision: Precision::F32, out: PathBuf::from("out") }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// A dataset container written by `gen-data`. Takes precedence over
    /// `flights` and the synthetic settings.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    /// Directory of CSV flights, one subdirectory per class index.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flights: Option<PathBuf>,
    pub classes: usize,
    pub channels: usize,
    pub steps: usize,
    pub per_class: usize,
    pub noise: f64,
    /// Fault amplitude; the generator's standard amplitude when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub amplitude: Option<f64>,
    pub distractors: usize,
    pub min_length: usize,
    pub max_missing: f64,
    pub train_fraction: f64,
    /// Share of the training split held out for validation.
    pub val_fraction: f64,
    /// Balance the training split with warped copies.
    pub augment: bool,
    pub warp_intensity: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            dataset: None,
            flights: None,
            classes: 4,
            channels: 8,
            steps: 256,
            per_class: 250,
            noise: 0.1,
            amplitude: None,
            distractors: 0,
            min_length: PreprocessConfig::default().min_length,
            max_missing: PreprocessConfig::default().max_missing,
            train_fraction: 0.8,
            val_fraction: 0.1,
            augment: false,
            warp_intensity: 0.03,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub task: Task,
    /// `"<conv>+<pool>"`, e.g. `"1+1"` or `"3+1"`.
    pub branches: String,
    /// Replaces the kernel sizes implied by `branches`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kernels: Option<Vec<usize>>,
    pub depth: usize,
    pub filters: usize,
    pub bottleneck: usize,
    /// Input SE gate reduction; 0 builds no gate.
    pub gate_reduction: usize,
    /// Attention encoder for the detection task.
    pub encoder: EncoderSpec,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            task: Task::Multiclass,
            branches: "1+1".into(),
            kernels: None,
            depth: 3,
            filters: 16,
            bottleneck: 16,
            gate_reduction: 0,
            encoder: EncoderSpec { d_model: 32, heads: 4, layers: 1, ff_width: 64, dropout: 0.1, attn_downsample: 8 },
        }
    }
}

impl ModelSection {
    pub fn template(&self) -> Result<ModuleTemplate> {
        let mut t = ModuleTemplate::from_label(&self.branches, self.filters, self.bottleneck)?;
        if let Some(k) = &self.kernels {
            t.conv_kernels = k.clone();
            t.validate()?;
        }
        Ok(t)
    }

    /// The network for `channels` inputs and `classes` outputs.
    pub fn spec(&self, channels: usize, classes: usize) -> Result<ModelSpec> {
        let t = self.template()?;
        let mut spec = match self.task {
            Task::Detection => {
                if classes != 2 {
                    bail!("detection models are binary, got {classes} classes");
                }
                ModelSpec::hybrid(channels, self.depth, t, self.encoder.clone())
            }
            _ => ModelSpec::inception(channels, classes, self.depth, t),
        };
        if self.gate_reduction > 0 {
            spec = spec.with_gate(self.gate_reduction);
        }
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectSection {
    pub bins: usize,
    /// TOML file of `[[override]]` tables.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub overrides: Option<PathBuf>,
}

impl Default for SelectSection {
    fn default() -> Self {
        Self { bins: DEFAULT_BINS, overrides: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainSection {
    pub methods: AttributionConfig,
    /// Correctly classified samples averaged per class.
    pub samples: usize,
    /// Class to explain; the first fault class when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub class: Option<usize>,
    pub noise_levels: Vec<f64>,
    /// Write each method's averaged grid as CSV.
    pub dump_grids: bool,
}

impl Default for ExplainSection {
    fn default() -> Self {
        Self {
            methods: AttributionConfig::default(),
            samples: 30,
            class: None,
            noise_levels: vec![0.0, 0.01, 0.03],
            dump_grids: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CascadeSection {
    pub threshold: f64,
    pub thresholds: Vec<f64>,
}

impl Default for CascadeSection {
    fn default() -> Self {
        Self { threshold: fdiag::cascade::DEFAULT_THRESHOLD, thresholds: (1..20).map(|i| i as f64 / 20.0).collect() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    pub branches: Vec<String>,
    pub depth: usize,
    pub filters: usize,
    pub bottleneck: usize,
    pub channels: usize,
    pub classes: usize,
    pub steps: usize,
    /// Timed inferences per model (at least 100).
    pub runs: usize,
    pub warmup: usize,
}

impl Default for BenchSection {
    fn default() -> Self {
        Self {
            branches: vec!["1+1".into(), "3+1".into()],
            depth: 6,
            filters: 128,
            bottleneck: 64,
            channels: 15,
            classes: 19,
            steps: 2048,
            runs: 100,
            warmup: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateSection {
    pub branches: Vec<String>,
    pub depths: Vec<usize>,
    /// Single-branch kernel sizes, each paired with the pool branch.
    pub kernels: Vec<usize>,
    pub taus: Vec<f64>,
    pub alphas: Vec<f64>,
    /// Teacher branches for `kd-grid` when no teacher checkpoint is given.
    pub teacher_branches: String,
    /// Share of each fault class kept before the augmentation study.
    pub minority_fraction: f64,
}

impl Default for AblateSection {
    fn default() -> Self {
        Self {
            branches: vec!["1+0".into(), "1+1".into(), "2+1".into(), "3+1".into()],
            depths: vec![3, 6, 9],
            kernels: vec![3, 5, 7, 9],
            taus: vec![2.0, 4.0, 8.0, 16.0],
            alphas: vec![0.3, 0.5, 0.7, 0.9],
            teacher_branches: "3+1".into(),
            minority_fraction: 0.25,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub run: RunSection,
    pub data: DataSection,
    pub model: ModelSection,
    pub training: TrainConfig,
    pub distill: DistillConfig,
    pub channel_select: SelectSection,
    pub attribution: ExplainSection,
    pub cascade: CascadeSection,
    pub bench: BenchSection,
    pub ablate: AblateSection,
}

/// Command-line values that override the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub precision: Option<Precision>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Applies flag overrides and propagates the run seed into the data
    /// and training seeds.
    pub fn resolve(mut self, o: &Overrides) -> Result<Self> {
        if let Some(s) = o.seed {
            self.run.seed = s;
        }
        if let Some(p) = &o.out {
            self.run.out = p.clone();
        }
        if let Some(p) = o.precision {
            self.run.precision = p;
        }
        self.training.seed = self.run.seed;
        if self.model.task == Task::Detection {
            self.training.monitor = Monitor::Recall;
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        if !(d.train_fraction > 0.0 && d.train_fraction < 1.0) {
            bail!("data.train_fraction must lie in (0, 1), got {}", d.train_fraction);
        }
        if !(d.val_fraction > 0.0 && d.val_fraction < 1.0) {
            bail!("data.val_fraction must lie in (0, 1), got {}", d.val_fraction);
        }
        if self.bench.runs < 100 {
            bail!("bench.runs must be at least 100, got {}", self.bench.runs);
        }
        self.training.validate()?;
        self.distill.validate()?;
        self.model.template()?;
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let c = Config::default();
        let text = c.to_toml().unwrap();
        assert_eq!(Config::parse(&text).unwrap(), c);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(Config::parse("[training]\nlearning_rate = 1.0\n").is_err());
        assert!(Config::parse("[nonsense]\n").is_err());
    }

    #[test]
    fn flags_override_the_file_and_seed_propagates() {
        let c = Config::parse("[run]\nseed = 3\nprecision = \"64\"\n[training]\nepochs = 2\n").unwrap();
        assert_eq!(c.run.precision, Precision::F64);
        let r = c.resolve(&Overrides { seed: Some(9), ..Overrides::default() }).unwrap();
        assert_eq!((r.run.seed, r.training.seed, r.training.epochs), (9, 9, 2));
    }

    #[test]
    fn kernels_replace_the_branch_layout() {
        let m = ModelSection { kernels: Some(vec![9]), ..ModelSection::default() };
        assert_eq!(m.template().unwrap().conv_kernels, vec![9]);
        assert!(ModelSection { branches: "4+1".into(), ..ModelSection::default() }.template().is_err());
    }
}
