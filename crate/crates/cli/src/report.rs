//! Run reports: a JSON document plus a flattened `path,value` CSV.

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

pub const JSON_FILE: &str = "report.json";
pub const CSV_FILE: &str = "report.csv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatencyStats {
    pub runs: usize,
    pub mean_ms: f64,
    pub p95_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
}

impl LatencyStats {
    /// Nearest-rank p95 over per-run milliseconds.
    pub fn from_samples(ms: &[f64]) -> Self {
        let mut s = ms.to_vec();
        s.sort_by(f64::total_cmp);
        let n = s.len();
        let rank = ((0.95 * n as f64).ceil() as usize).clamp(1, n.max(1));
        Self {
            runs: n,
            mean_ms: if n == 0 { 0.0 } else { s.iter().sum::<f64>() / n as f64 },
            p95_ms: s.get(rank - 1).copied().unwrap_or(0.0),
            min_ms: s.first().copied().unwrap_or(0.0),
            max_ms: s.last().copied().unwrap_or(0.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunReport {
    pub command: String,
    /// The fully resolved configuration.
    pub config: Value,
    pub metrics: BTreeMap<String, Value>,
    /// Wall-clock seconds per phase.
    pub timings: BTreeMap<String, f64>,
    /// Per-sample inference latency.
    pub latency: BTreeMap<String, LatencyStats>,
    /// Parameter and FLOP counts.
    pub counters: BTreeMap<String, u64>,
}

impl RunReport {
    pub fn new(command: &str, config: &impl Serialize) -> Result<Self> {
        Ok(Self {
            command: command.to_string(),
            config: serde_json::to_value(config)?,
            metrics: BTreeMap::new(),
            timings: BTreeMap::new(),
            latency: BTreeMap::new(),
            counters: BTreeMap::new(),
        })
    }

    pub fn metric(&mut self, key: &str, value: impl Serialize) -> Result<()> {
        self.metrics.insert(key.to_string(), serde_json::to_value(value)?);
        Ok(())
    }

    /// Runs `f` and records its wall-clock time under `phase`.
    pub fn timed<T>(&mut self, phase: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.timings.insert(phase.to_string(), start.elapsed().as_secs_f64());
        out
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// One `path,value` row per leaf, paths joined with `.`.
    pub fn to_csv(&self) -> Result<String> {
        let mut rows = Vec::new();
        flatten("", &serde_json::to_value(self)?, &mut rows);
        let mut out = String::from("path,value\n");
        for (path, value) in rows {
            out.push_str(&csv_cell(&path));
            out.push(',');
            out.push_str(&csv_cell(&value));
            out.push('\n');
        }
        Ok(out)
    }

    /// Writes `report.json` and `report.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        fs::write(dir.join(JSON_FILE), self.to_json()?)?;
        fs::write(dir.join(CSV_FILE), self.to_csv()?)?;
        Ok(())
    }
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
    let join = |k: &str| if prefix.is_empty() { k.to_string() } else { format!("{prefix}.{k}") };
    match v {
        Value::Object(m) if !m.is_empty() => {
            for (k, child) in m {
                flatten(&join(k), child, out);
            }
        }
        Value::Array(a) if !a.is_empty() => {
            for (i, child) in a.iter().enumerate() {
                flatten(&join(&i.to_string()), child, out);
            }
        }
        Value::String(s) => out.push((prefix.to_string(), s.clone())),
        other => out.push((prefix.to_string(), other.to_string())),
    }
}

fn csv_cell(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn sample() -> RunReport {
        let mut r = RunReport::new("bench", &json!({"seed": 7, "name": "a,b"})).unwrap();
        r.metric("accuracy", 0.1 + 0.2).unwrap();
        r.metric("per_class", vec![1.0 / 3.0, 2.0]).unwrap();
        r.timings.insert("fit".into(), 1.25);
        r.latency.insert("1+1".into(), LatencyStats::from_samples(&[3.0, 1.0, 2.0]));
        r.counters.insert("params".into(), u64::MAX);
        r
    }

    #[test]
    fn json_round_trip_is_byte_identical() {
        let a = sample().to_json().unwrap();
        let back = RunReport::from_json(&a).unwrap();
        assert_eq!(back, sample());
        assert_eq!(back.to_json().unwrap(), a);
        assert!(a.contains("0.30000000000000004"));
    }

    #[test]
    fn csv_flattens_every_leaf() {
        let csv = sample().to_csv().unwrap();
        assert!(csv.starts_with("path,value\n"));
        assert!(csv.contains("metrics.per_class.1,2.0\n"));
        assert!(csv.contains("config.name,\"a,b\"\n"));
        assert!(csv.contains("counters.params,18446744073709551615\n"));
    }

    #[test]
    fn p95_uses_nearest_rank() {
        let ms: Vec<f64> = (1..=100).map(f64::from).collect();
        let s = LatencyStats::from_samples(&ms);
        assert_eq!((s.p95_ms, s.mean_ms, s.min_ms, s.max_ms), (95.0, 50.5, 1.0, 100.0));
    }
}
