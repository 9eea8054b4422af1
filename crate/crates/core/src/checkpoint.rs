//! Binary model checkpoints.
//!
//! Layout: the magic `LITN`, a little-endian `u32` format version, a
//! little-endian `u64` header length, the JSON header, then every stored
//! tensor as packed little-endian `f32` in header order. Offsets in the
//! header are byte offsets into that blob section.

use crate::error::{Error, Result};
use crate::models::{ModelSpec, Network, ParamKind};
use crate::real::Real;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"LITN";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub kind: ParamKind,
    pub shape: Vec<usize>,
    pub offset: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub spec: ModelSpec,
    pub seed: u64,
    /// Free-form training provenance (command, config, best epoch, ...).
    #[serde(default)]
    pub provenance: BTreeMap<String, serde_json::Value>,
    pub tensors: Vec<TensorEntry>,
}

/// Serialises a network. 64-bit parameters are rounded to `f32`.
pub fn encode<R: Real>(net: &Network<R>, provenance: BTreeMap<String, serde_json::Value>) -> Result<Vec<u8>> {
    let mut tensors = Vec::with_capacity(net.store().len());
    let mut blob = Vec::new();
    for (_, p) in net.store().iter() {
        tensors.push(TensorEntry {
            name: p.name.clone(),
            kind: p.kind,
            shape: p.value.shape().to_vec(),
            offset: blob.len() as u64,
        });
        for v in p.value.data() {
            blob.extend_from_slice(&(v.f64() as f32).to_le_bytes());
        }
    }
    let header = CheckpointHeader { spec: net.spec().clone(), seed: net.seed(), provenance, tensors };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(16 + json.len() + blob.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&blob);
    Ok(out)
}

/// Rebuilds the network described by a checkpoint and overwrites every
/// tensor with the stored values.
pub fn decode<R: Real>(bytes: &[u8]) -> Result<(Network<R>, CheckpointHeader)> {
    let fmt = |m: String| Error::Format(m);
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(fmt("not a checkpoint (bad magic)".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(fmt(format!("unsupported checkpoint version {version}")));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let hend = usize::try_from(hlen).ok().and_then(|h| h.checked_add(16)).filter(|&e| e <= bytes.len());
    let hend = hend.ok_or_else(|| fmt(format!("header length {hlen} runs past the end of the file")))?;
    let header: CheckpointHeader = serde_json::from_slice(&bytes[16..hend])?;
    let blob = &bytes[hend..];
    let mut net = Network::<R>::new(&header.spec, header.seed)?;
    if net.store().len() != header.tensors.len() {
        return Err(fmt(format!(
            "spec builds {} tensors, checkpoint lists {}",
            net.store().len(),
            header.tensors.len()
        )));
    }
    let mut expected_offset = 0u64;
    let ids: Vec<_> = net.store().iter().map(|(id, _)| id).collect();
    for (id, e) in ids.into_iter().zip(&header.tensors) {
        let p = net.store().get(id);
        if p.name != e.name || p.kind != e.kind || p.value.shape() != e.shape.as_slice() {
            return Err(fmt(format!("tensor {} does not match the model built from the header", e.name)));
        }
        if e.offset != expected_offset {
            return Err(fmt(format!("tensor {} has offset {}, expected {expected_offset}", e.name, e.offset)));
        }
        let n = p.value.len();
        let start = e.offset as usize;
        let raw = blob
            .get(start..start + 4 * n)
            .ok_or_else(|| fmt(format!("tensor {} runs past the end of the file", e.name)))?;
        let data = raw.chunks_exact(4).map(|b| R::of(f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)).collect();
        *net.store_mut().value_mut(id) = Tensor::new(e.shape.clone(), data)?;
        expected_offset += 4 * n as u64;
    }
    if expected_offset != blob.len() as u64 {
        return Err(fmt(format!("{} trailing bytes after the last tensor", blob.len() as u64 - expected_offset)));
    }
    Ok((net, header))
}

pub fn save<R: Real>(net: &Network<R>, provenance: BTreeMap<String, serde_json::Value>, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, encode(net, provenance)?)?;
    Ok(())
}

pub fn load<R: Real>(path: &Path) -> Result<(Network<R>, CheckpointHeader)> {
    decode(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{EncoderSpec, ModuleTemplate};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn perturbed(spec: &ModelSpec) -> Network<f32> {
        let mut net = Network::<f32>::new(spec, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let ids: Vec<_> = net.store().iter().map(|(id, _)| id).collect();
        for id in ids {
            for v in net.store_mut().value_mut(id).data_mut() {
                *v += rng.random_range(-0.1f32..0.1);
            }
        }
        net
    }

    #[test]
    fn round_trip_is_byte_identical_and_bit_exact() {
        let specs = [
            ModelSpec::inception(3, 4, 3, ModuleTemplate::lite(4, 4)).with_gate(2),
            ModelSpec::hybrid(3, 1, ModuleTemplate::classic(2, 2), EncoderSpec { d_model: 4, heads: 2, layers: 1, ff_width: 8, dropout: 0.1, attn_downsample: 4 }),
        ];
        for spec in &specs {
            let net = perturbed(spec);
            let mut prov = BTreeMap::new();
            prov.insert("command".to_string(), serde_json::json!("train"));
            let a = encode(&net, prov.clone()).unwrap();
            let (back, header) = decode::<f32>(&a).unwrap();
            assert_eq!(header.provenance, prov);
            assert_eq!(encode(&back, prov).unwrap(), a);
            let x = Tensor::<f32>::from_fn(&[2, 3, 24], |i| ((i * 7 % 13) as f32) / 13.0);
            let (y0, y1) = (net.logits(&x).unwrap(), back.logits(&x).unwrap());
            assert!(y0.data().iter().zip(y1.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }

    #[test]
    fn layout_starts_with_magic_version_and_header_length() {
        let net = Network::<f32>::new(&ModelSpec::inception(2, 2, 1, ModuleTemplate::lite(2, 2)), 0).unwrap();
        let bytes = encode(&net, BTreeMap::new()).unwrap();
        assert_eq!(&bytes[..4], b"LITN");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        let h = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let header: CheckpointHeader = serde_json::from_slice(&bytes[16..16 + h]).unwrap();
        let scalars: usize = header.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum();
        assert_eq!(bytes.len(), 16 + h + 4 * scalars);
        let first = &header.tensors[0];
        let stored = f32::from_le_bytes(bytes[16 + h..20 + h].try_into().unwrap());
        assert_eq!(stored, net.store().get(net.store().find(&first.name).unwrap()).value.data()[0]);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let net = Network::<f32>::new(&ModelSpec::inception(2, 2, 1, ModuleTemplate::lite(2, 2)), 0).unwrap();
        let good = encode(&net, BTreeMap::new()).unwrap();
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(decode::<f32>(&bad), Err(Error::Format(_))));
        let mut bad = good.clone();
        bad[4] = 9;
        assert!(decode::<f32>(&bad).is_err());
        assert!(decode::<f32>(&good[..good.len() - 1]).is_err());
        let mut bad = good.clone();
        bad.push(0);
        assert!(decode::<f32>(&bad).is_err());
        assert!(decode::<f32>(&good[..10]).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m/model.litn");
        let net = perturbed(&ModelSpec::inception(2, 3, 2, ModuleTemplate::lite(2, 2)));
        save(&net, BTreeMap::new(), &path).unwrap();
        let (back, _) = load::<f64>(&path).unwrap();
        let orig = net.cast::<f64>();
        for ((_, a), (_, b)) in orig.store().iter().zip(back.store().iter()) {
            assert_eq!(a.value, b.value);
        }
    }
}
