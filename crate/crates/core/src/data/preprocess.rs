use super::{Dataset, DropRecord, Provenance, TimeSeriesSample};
use crate::error::{Error, Result};
use crate::par::{self, Parallelism};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    /// Output length after resampling.
    pub steps: usize,
    /// Flights with fewer rows are dropped.
    pub min_length: usize,
    /// Flights whose missing-cell fraction exceeds this are dropped.
    pub max_missing: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self { steps: 2048, min_length: 2000, max_missing: 0.2 }
    }
}

/// One raw flight: rows of per-second readings, `None` where missing.
#[derive(Clone, Debug, PartialEq)]
pub struct RawFlight {
    pub channel_names: Vec<String>,
    pub rows: Vec<Vec<Option<f64>>>,
    pub source: String,
    pub label: usize,
}

impl RawFlight {
    pub fn missing_fraction(&self) -> f64 {
        let cells = self.rows.len() * self.channel_names.len();
        if cells == 0 {
            return 1.0;
        }
        let missing: usize = self.rows.iter().map(|r| r.iter().filter(|v| v.is_none()).count()).sum();
        missing as f64 / cells as f64
    }

    fn column(&self, c: usize) -> Vec<Option<f64>> {
        self.rows.iter().map(|r| r[c]).collect()
    }
}

/// Parses comma-separated text: a header of channel names, then one row per
/// time step. Empty cells (and `nan`) are missing.
pub fn parse_flight_csv(text: &str, source: &str, label: usize) -> Result<RawFlight> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| Error::Format(format!("{source}: no header row")))?;
    let channel_names: Vec<String> = header.split(',').map(|s| s.trim().to_string()).collect();
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != channel_names.len() {
            return Err(Error::Format(format!(
                "{source}: row {} has {} cells, header has {}",
                i + 2,
                cells.len(),
                channel_names.len()
            )));
        }
        let row = cells
            .iter()
            .map(|c| {
                let c = c.trim();
                if c.is_empty() {
                    return Ok(None);
                }
                let v: f64 = c.parse().map_err(|_| Error::Format(format!("{source}: row {}: bad number {c:?}", i + 2)))?;
                Ok(v.is_finite().then_some(v))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(RawFlight { channel_names, rows, source: source.to_string(), label })
}

pub fn read_flight_csv(path: &Path, label: usize) -> Result<RawFlight> {
    let text = std::fs::read_to_string(path)?;
    parse_flight_csv(&text, &path.display().to_string(), label)
}

/// Linear interpolation of interior gaps and nearest-value fill at the
/// edges. Returns the filled series plus (interior, edge) fill counts. An
/// all-missing series becomes zeros, counted as edge fill.
pub fn fill_gaps(x: &[Option<f64>]) -> (Vec<f64>, usize, usize) {
    let known: Vec<usize> = (0..x.len()).filter(|&i| x[i].is_some()).collect();
    let Some((&first, &last)) = known.first().zip(known.last()) else {
        return (vec![0.0; x.len()], 0, x.len());
    };
    let mut out = vec![0.0; x.len()];
    let (mut interior, mut edge) = (0, 0);
    for o in out.iter_mut().take(first) {
        *o = x[first].unwrap();
        edge += 1;
    }
    for o in out.iter_mut().skip(last + 1) {
        *o = x[last].unwrap();
        edge += 1;
    }
    for w in known.windows(2) {
        let (a, b) = (w[0], w[1]);
        let (va, vb) = (x[a].unwrap(), x[b].unwrap());
        out[a] = va;
        for (i, o) in out.iter_mut().enumerate().take(b).skip(a + 1) {
            let f = (i - a) as f64 / (b - a) as f64;
            *o = va + f * (vb - va);
            interior += 1;
        }
    }
    out[last] = x[last].unwrap();
    (out, interior, edge)
}

/// Linear resampling onto `t` points with both endpoints aligned.
pub fn resample_linear(x: &[f64], t: usize) -> Vec<f64> {
    let n = x.len();
    if n == t {
        return x.to_vec();
    }
    if n == 1 || t == 1 {
        return vec![x[0]; t];
    }
    let scale = (n - 1) as f64 / (t - 1) as f64;
    (0..t)
        .map(|i| {
            let p = i as f64 * scale;
            let lo = (p.floor() as usize).min(n - 1);
            let hi = (lo + 1).min(n - 1);
            let f = p - lo as f64;
            if f == 0.0 {
                x[lo]
            } else {
                x[lo] + f * (x[hi] - x[lo])
            }
        })
        .collect()
}

/// Min-max scaling to [0, 1]; a constant series maps to 0.5. Returns
/// whether the series was constant.
pub fn min_max_normalize(x: &mut [f64]) -> bool {
    let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    if !(range > 0.0) {
        x.iter_mut().for_each(|v| *v = 0.5);
        return true;
    }
    x.iter_mut().for_each(|v| *v = ((*v - lo) / range).clamp(0.0, 1.0));
    false
}

struct Processed {
    sample: Option<TimeSeriesSample>,
    drop: Option<(bool, DropRecord)>,
    interpolated: usize,
    edge: usize,
    constant: usize,
}

fn process_one(f: &RawFlight, cfg: &PreprocessConfig) -> Processed {
    let mut p = Processed { sample: None, drop: None, interpolated: 0, edge: 0, constant: 0 };
    let missing = f.missing_fraction();
    if missing > cfg.max_missing {
        let reason = format!("{:.1}% missing exceeds {:.1}%", 100.0 * missing, 100.0 * cfg.max_missing);
        p.drop = Some((true, DropRecord { source: f.source.clone(), reason }));
        return p;
    }
    if f.rows.len() < cfg.min_length {
        let reason = format!("{} rows, minimum {}", f.rows.len(), cfg.min_length);
        p.drop = Some((false, DropRecord { source: f.source.clone(), reason }));
        return p;
    }
    let c = f.channel_names.len();
    let mut values = Vec::with_capacity(c * cfg.steps);
    for ch in 0..c {
        let (filled, interior, edge) = fill_gaps(&f.column(ch));
        p.interpolated += interior;
        p.edge += edge;
        let mut r = resample_linear(&filled, cfg.steps);
        if min_max_normalize(&mut r) {
            p.constant += 1;
        }
        values.extend(r.iter().map(|&v| v as f32));
    }
    p.sample = Some(TimeSeriesSample {
        values,
        channels: c,
        steps: cfg.steps,
        label: f.label,
        source: f.source.clone(),
        annotation: None,
    });
    p
}

/// Drop rules, gap filling, resampling and per-sample per-channel min-max,
/// in that order. Flights are processed independently.
pub fn ingest_and_preprocess(flights: &[RawFlight], cfg: &PreprocessConfig, mode: Parallelism) -> Result<Dataset> {
    if cfg.steps == 0 {
        return Err(Error::InvalidArgument("output length must be >= 1".into()));
    }
    let first = flights.first().ok_or(Error::NoSamples("no flights to ingest".into()))?;
    let names = first.channel_names.clone();
    for f in flights {
        if f.channel_names.len() != names.len() {
            return Err(Error::Shape(format!(
                "{} has {} channels, expected {}",
                f.source,
                f.channel_names.len(),
                names.len()
            )));
        }
        if let Some(r) = f.rows.iter().find(|r| r.len() != names.len()) {
            return Err(Error::Shape(format!("{}: row with {} cells", f.source, r.len())));
        }
    }
    let results = par::map(mode, flights, |f| process_one(f, cfg));
    let mut prov = Provenance { flights_in: flights.len(), ..Default::default() };
    let mut samples = Vec::new();
    for r in results {
        prov.interpolated_values += r.interpolated;
        prov.edge_filled_values += r.edge;
        prov.constant_channels += r.constant;
        if let Some((missing, rec)) = r.drop {
            if missing {
                prov.dropped_missing += 1;
            } else {
                prov.dropped_short += 1;
            }
            prov.dropped.push(rec);
        }
        samples.extend(r.sample);
    }
    if samples.is_empty() {
        return Err(Error::NoSamples("every flight was dropped by preprocessing".into()));
    }
    let classes = samples.iter().map(|s| s.label).max().unwrap_or(0) + 1;
    Ok(Dataset { samples, channel_names: names, classes, steps: cfg.steps, provenance: prov, seed: None, warnings: Vec::new() })
}
