use super::preprocess::min_max_normalize;
use super::{window_steps, Dataset, FaultAnnotation, Provenance, TimeSeriesSample};
use crate::error::{Error, Result};
use crate::par::{self, Parallelism};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Signature {
    /// Raised-cosine bump peaking mid-window.
    Bump,
    /// Linear rise from 0 to the amplitude across the window.
    Ramp,
    /// Sinusoid with an 8-step period inside the window.
    Tone,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultDef {
    pub class: usize,
    pub channels: Vec<usize>,
    pub start: f64,
    pub end: f64,
    pub signature: Signature,
    pub amplitude: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    /// Class 0 is normal; classes 1.. carry their fault signatures.
    pub classes: usize,
    /// Signal channels (distractors are appended after these).
    pub channels: usize,
    pub steps: usize,
    pub per_class: usize,
    pub noise: f64,
    pub faults: Vec<FaultDef>,
    #[serde(default)]
    pub distractors: usize,
    pub seed: u64,
}

const BUMP_EDGE: f64 = 4.0;
/// Fault amplitude of [`SynthSpec::standard`], in units of the noise std.
pub const STANDARD_AMPLITUDE: f64 = 30.0;
const TONE_PERIOD: f64 = 8.0;

impl SynthSpec {
    /// One fault per non-normal class: class k hits channel `(k-1) % C`
    /// in the `(k-1) % 4`-th of four windows, cycling bump, ramp, tone, at
    /// `STANDARD_AMPLITUDE` noise standard deviations.
    pub fn standard(classes: usize, channels: usize, steps: usize, per_class: usize, seed: u64) -> Self {
        let noise = 0.1;
        let sigs = [Signature::Bump, Signature::Ramp, Signature::Tone];
        let faults = (1..classes)
            .map(|k| {
                let start = 0.15 + 0.2 * ((k - 1) % 4) as f64;
                FaultDef {
                    class: k,
                    channels: vec![(k - 1) % channels.max(1)],
                    start,
                    end: start + 0.2,
                    signature: sigs[(k - 1) % 3],
                    amplitude: STANDARD_AMPLITUDE * noise,
                }
            })
            .collect();
        Self { classes, channels, steps, per_class, noise, faults, distractors: 0, seed }
    }

    pub fn total_channels(&self) -> usize {
        self.channels + self.distractors
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.classes == 0 || self.channels == 0 || self.steps < 2 || self.per_class == 0 {
            return bad("synthetic spec needs classes, channels, per_class >= 1 and steps >= 2".into());
        }
        if !(self.noise >= 0.0) {
            return bad(format!("noise std must be >= 0, got {}", self.noise));
        }
        for f in &self.faults {
            if f.class == 0 || f.class >= self.classes {
                return bad(format!("fault class {} must lie in 1..{}", f.class, self.classes));
            }
            if f.channels.is_empty() || f.channels.iter().any(|&c| c >= self.channels) {
                return bad(format!("fault for class {} names channels {:?}", f.class, f.channels));
            }
            if !(0.0 <= f.start && f.start < f.end && f.end <= 1.0) {
                return bad(format!("fault window [{}, {}) for class {}", f.start, f.end, f.class));
            }
            if f.amplitude < 3.0 * self.noise {
                return bad(format!("fault amplitude {} below 3 noise std ({})", f.amplitude, 3.0 * self.noise));
            }
        }
        Ok(())
    }

    /// The two base frequencies (cycles per record) of every signal channel.
    pub fn channel_frequencies(&self) -> Vec<(f64, f64)> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        (0..self.channels).map(|_| (rng.random_range(1.0..3.0), rng.random_range(4.0..8.0))).collect()
    }

    /// Overlapping windows on a shared channel between different classes.
    pub fn collisions(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (i, a) in self.faults.iter().enumerate() {
            for b in &self.faults[i + 1..] {
                let shared = a.channels.iter().any(|c| b.channels.contains(c));
                if a.class != b.class && shared && a.start < b.end && b.start < a.end {
                    out.push(format!("classes {} and {} overlap on a shared channel", a.class, b.class));
                }
            }
        }
        out
    }

    /// Unnormalised `[C_total][T]` grid for sample `index` of `class`.
    pub fn render(&self, class: usize, index: usize) -> Vec<f64> {
        let freqs = self.channel_frequencies();
        self.render_with(&freqs, class, index)
    }

    fn render_with(&self, freqs: &[(f64, f64)], class: usize, index: usize) -> Vec<f64> {
        let t_len = self.steps;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(1 + (class * self.per_class + index) as u64);
        let noise = Normal::new(0.0, self.noise).expect("validated noise std");
        let mut grid = Vec::with_capacity(self.total_channels() * t_len);
        for &(f1, f2) in freqs {
            let p1 = rng.random_range(0.0..2.0 * PI);
            let p2 = rng.random_range(0.0..2.0 * PI);
            for t in 0..t_len {
                let u = t as f64 / t_len as f64;
                let base = 0.5 * (2.0 * PI * f1 * u + p1).sin() + 0.5 * (2.0 * PI * f2 * u + p2).sin();
                grid.push(base + noise.sample(&mut rng));
            }
        }
        for f in self.faults.iter().filter(|f| f.class == class) {
            let (a, b) = window_steps(f.start, f.end, t_len);
            let w = (b - a).max(1) as f64;
            for &c in &f.channels {
                for t in a..b {
                    let r = (t - a) as f64;
                    grid[c * t_len + t] += f.amplitude
                        * match f.signature {
                            Signature::Bump => bump(r, w),
                            Signature::Ramp => (r + 1.0) / w,
                            Signature::Tone => (2.0 * PI * r / TONE_PERIOD).sin(),
                        };
                }
            }
        }
        for _ in 0..self.distractors * t_len {
            grid.push(rng.sample::<f64, _>(rand_distr::StandardNormal));
        }
        grid
    }

    fn annotation(&self, class: usize) -> Option<FaultAnnotation> {
        let defs: Vec<&FaultDef> = self.faults.iter().filter(|f| f.class == class).collect();
        let first = defs.first()?;
        let mut channels: Vec<usize> = defs.iter().flat_map(|f| f.channels.iter().copied()).collect();
        channels.sort_unstable();
        channels.dedup();
        let start = defs.iter().map(|f| f.start).fold(f64::INFINITY, f64::min);
        let end = defs.iter().map(|f| f.end).fold(f64::NEG_INFINITY, f64::max);
        Some(FaultAnnotation { channels, start, end, signature: first.signature })
    }
}

/// Flat-top bump with raised-cosine edges of up to `BUMP_EDGE` steps.
fn bump(r: f64, w: f64) -> f64 {
    let e = BUMP_EDGE.min(w / 4.0).max(0.5);
    let d = (r + 0.5).min(w - r - 0.5);
    if d >= e {
        1.0
    } else {
        (0.5 * PI * d / e).sin().powi(2)
    }
}

/// Generates `per_class` normalised samples for every class, class-major.
pub fn synth_generate(spec: &SynthSpec, mode: Parallelism) -> Result<Dataset> {
    spec.validate()?;
    let freqs = spec.channel_frequencies();
    let c_total = spec.total_channels();
    let samples = par::map_range(mode, spec.classes * spec.per_class, |i| {
        let (class, index) = (i / spec.per_class, i % spec.per_class);
        let mut grid = spec.render_with(&freqs, class, index);
        for ch in grid.chunks_mut(spec.steps) {
            min_max_normalize(ch);
        }
        TimeSeriesSample {
            values: grid.iter().map(|&v| v as f32).collect(),
            channels: c_total,
            steps: spec.steps,
            label: class,
            source: format!("synth-c{class}-{index}"),
            annotation: spec.annotation(class),
        }
    });
    let mut names: Vec<String> = (0..spec.channels).map(|c| format!("ch{c}")).collect();
    names.extend((0..spec.distractors).map(|j| format!("noise{j}")));
    let warnings = spec.collisions();
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(Dataset {
        samples,
        channel_names: names,
        classes: spec.classes,
        steps: spec.steps,
        provenance: Provenance::default(),
        seed: Some(spec.seed),
        warnings,
    })
}
