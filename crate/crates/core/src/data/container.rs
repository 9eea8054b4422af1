use super::{Dataset, DatasetManifest, TimeSeriesSample};
use crate::error::{Error, Result};
use std::fs;
use std::path::Path;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const VALUES_FILE: &str = "values.f32";
pub const LABELS_FILE: &str = "labels.i32";
pub(crate) const LAYOUT: &str = "values.f32: float32 little-endian, N x C x T; labels.i32: int32 little-endian, N";

/// Writes the manifest plus the packed value and label blocks into `dir`.
pub fn write_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    ds.validate()?;
    fs::create_dir_all(dir)?;
    let mut values = Vec::with_capacity(ds.len() * ds.channels() * ds.steps * 4);
    let mut labels = Vec::with_capacity(ds.len() * 4);
    for s in &ds.samples {
        for v in &s.values {
            values.extend_from_slice(&v.to_le_bytes());
        }
        let l = i32::try_from(s.label).map_err(|_| Error::Format(format!("label {} exceeds i32", s.label)))?;
        labels.extend_from_slice(&l.to_le_bytes());
    }
    let mut manifest = serde_json::to_string_pretty(&ds.manifest())?;
    manifest.push('\n');
    fs::write(dir.join(MANIFEST_FILE), manifest)?;
    fs::write(dir.join(VALUES_FILE), values)?;
    fs::write(dir.join(LABELS_FILE), labels)?;
    Ok(())
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let manifest: DatasetManifest = serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
    let values = fs::read(dir.join(VALUES_FILE))?;
    let labels = fs::read(dir.join(LABELS_FILE))?;
    let (n, c, t) = (manifest.samples, manifest.channels, manifest.steps);
    if values.len() != n * c * t * 4 || labels.len() != n * 4 {
        return Err(Error::Format(format!(
            "container sizes ({} value bytes, {} label bytes) do not match {n}x{c}x{t}",
            values.len(),
            labels.len()
        )));
    }
    if manifest.channel_names.len() != c || manifest.sources.len() != n || manifest.annotations.len() != n {
        return Err(Error::Format("manifest metadata lengths disagree with sample count".into()));
    }
    let per = c * t;
    let samples = (0..n)
        .map(|i| {
            let raw = &values[i * per * 4..(i + 1) * per * 4];
            let vals = raw.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
            let lb = &labels[i * 4..i * 4 + 4];
            let label = i32::from_le_bytes([lb[0], lb[1], lb[2], lb[3]]);
            let label = usize::try_from(label).map_err(|_| Error::Format(format!("negative label {label}")))?;
            Ok(TimeSeriesSample {
                values: vals,
                channels: c,
                steps: t,
                label,
                source: manifest.sources[i].clone(),
                annotation: manifest.annotations[i].clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let ds = Dataset {
        samples,
        channel_names: manifest.channel_names,
        classes: manifest.classes,
        steps: t,
        provenance: manifest.provenance,
        seed: manifest.seed,
        warnings: manifest.warnings,
    };
    if ds.class_counts() != manifest.class_counts {
        return Err(Error::Format("manifest class counts do not match labels".into()));
    }
    ds.validate()?;
    Ok(ds)
}
