use super::{Dataset, TimeSeriesSample};
use crate::error::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

const INTERIOR_KNOTS: usize = 4;
const MAX_RETRIES: usize = 100;

/// Source position for every output step under a random monotone warp.
///
/// Knots sit at evenly spaced positions; the interior ones are displaced by
/// Gaussian offsets with std `intensity·T` and the endpoints stay at 0 and
/// T−1. Draws that are not strictly increasing are rejected.
pub fn warp_positions(steps: usize, intensity: f64, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    if !(intensity >= 0.0) {
        return Err(Error::InvalidArgument(format!("warp intensity must be >= 0, got {intensity}")));
    }
    let identity: Vec<f64> = (0..steps).map(|t| t as f64).collect();
    if intensity == 0.0 || steps < 3 {
        return Ok(identity);
    }
    let last = (steps - 1) as f64;
    let n = INTERIOR_KNOTS + 1;
    let xs: Vec<f64> = (0..=n).map(|k| k as f64 * last / n as f64).collect();
    let noise = Normal::new(0.0, intensity * steps as f64).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    for _ in 0..MAX_RETRIES {
        let mut ys = xs.clone();
        for y in &mut ys[1..n] {
            *y += noise.sample(rng);
        }
        if ys.windows(2).all(|w| w[1] > w[0]) {
            return Ok(identity
                .iter()
                .map(|&t| {
                    let seg = ((t / last * n as f64).floor() as usize).min(n - 1);
                    let f = (t - xs[seg]) / (xs[seg + 1] - xs[seg]);
                    (ys[seg] + f * (ys[seg + 1] - ys[seg])).clamp(0.0, last)
                })
                .collect());
        }
    }
    Err(Error::InvalidArgument(format!("no monotone warp after {MAX_RETRIES} draws at intensity {intensity}")))
}

fn sample_at(x: &[f32], p: f64) -> f32 {
    let lo = p.floor() as usize;
    let f = p - lo as f64;
    if f == 0.0 || lo + 1 >= x.len() {
        return x[lo.min(x.len() - 1)];
    }
    (x[lo] as f64 + f * (x[lo + 1] as f64 - x[lo] as f64)) as f32
}

/// Resamples every channel through one shared random time map.
pub fn timewarp_augment(sample: &TimeSeriesSample, intensity: f64, rng: &mut ChaCha8Rng) -> Result<TimeSeriesSample> {
    let pos = warp_positions(sample.steps, intensity, rng)?;
    let mut values = Vec::with_capacity(sample.values.len());
    for c in 0..sample.channels {
        let x = sample.channel(c);
        values.extend(pos.iter().map(|&p| sample_at(x, p)));
    }
    Ok(TimeSeriesSample { values, ..sample.clone() })
}

/// Grows every minority class to the majority count with warped copies,
/// two per original per round, cycling through the originals in order.
pub fn balance_dataset(ds: &Dataset, intensity: f64, seed: u64) -> Result<Dataset> {
    let counts = ds.class_counts();
    let target = counts.iter().copied().max().unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = ds.clone();
    for (class, &have) in counts.iter().enumerate() {
        if have == target {
            continue;
        }
        if have == 0 {
            return Err(Error::NoSamples(format!("class {class} has no samples to augment")));
        }
        let originals: Vec<usize> = (0..ds.len()).filter(|&i| ds.samples[i].label == class).collect();
        let mut count = have;
        let mut round = 0;
        'grow: loop {
            for &i in &originals {
                for copy in 0..2 {
                    if count >= target {
                        break 'grow;
                    }
                    let mut s = timewarp_augment(&ds.samples[i], intensity, &mut rng)?;
                    s.source = format!("{}#warp{}", s.source, 2 * round + copy);
                    out.samples.push(s);
                    count += 1;
                }
            }
            round += 1;
        }
        out.provenance.augmented += count - have;
    }
    Ok(out)
}
