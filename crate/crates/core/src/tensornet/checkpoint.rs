//! Parameter checkpoints: a JSON manifest next to one raw little-endian f32
//! file per parameter holding value, first moment and second moment back to
//! back.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::layers::Layer;
use super::Real;
use crate::error::{Error, Result};
use crate::fsio;

pub const MANIFEST: &str = "manifest.json";
const FORMAT: &str = "cardioview-params-1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub file: String,
    pub adam_step: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub tensors: Vec<TensorEntry>,
    /// Caller-owned metadata (network config, training state).
    pub meta: serde_json::Value,
}

fn file_name(i: usize, name: &str) -> String {
    let clean: String = name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '.' { c } else { '_' }).collect();
    format!("{i:04}_{clean}.f32")
}

pub fn save<T: Real>(dir: &Path, layer: &dyn Layer<T>, meta: serde_json::Value) -> Result<()> {
    let mut tensors = Vec::new();
    let mut failure = None;
    layer.visit(&mut |p| {
        if failure.is_some() {
            return;
        }
        let file = file_name(tensors.len(), &p.name);
        let mut bytes = Vec::with_capacity(p.value.len() * 12);
        for part in [p.value.data(), &p.adam.m, &p.adam.v] {
            for v in part {
                bytes.extend_from_slice(&(v.f64() as f32).to_le_bytes());
            }
        }
        if let Err(e) = fsio::write_atomic(&dir.join(&file), &bytes) {
            failure = Some(e);
        }
        tensors.push(TensorEntry { name: p.name.clone(), shape: p.value.shape().to_vec(), file, adam_step: p.adam.step });
    });
    if let Some(e) = failure {
        return Err(e);
    }
    fsio::write_json(&dir.join(MANIFEST), &Manifest { format: FORMAT.into(), tensors, meta })
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let m: Manifest = fsio::read_json(&dir.join(MANIFEST))?;
    if m.format != FORMAT {
        return Err(Error::Checkpoint(format!("unknown checkpoint format {:?}", m.format)));
    }
    Ok(m)
}

/// Loads parameters into an already-constructed layer of the same
/// architecture; names and shapes must match in order. Returns the metadata.
pub fn load<T: Real>(dir: &Path, layer: &mut dyn Layer<T>) -> Result<serde_json::Value> {
    let manifest = read_manifest(dir)?;
    let mut count = 0;
    layer.visit(&mut |_| count += 1);
    if count != manifest.tensors.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {} tensors, network has {count}",
            manifest.tensors.len()
        )));
    }
    let mut i = 0;
    let mut failure = None;
    layer.visit_mut(&mut |p| {
        let entry = &manifest.tensors[i];
        i += 1;
        if failure.is_some() {
            return;
        }
        if entry.name != p.name || entry.shape != p.value.shape() {
            failure = Some(Error::Checkpoint(format!(
                "tensor {}: expected {} {:?}, found {} {:?}",
                i - 1,
                p.name,
                p.value.shape(),
                entry.name,
                entry.shape
            )));
            return;
        }
        let path = dir.join(&entry.file);
        let bytes = match std::fs::read(&path) {
            Ok(b) => b,
            Err(e) => {
                failure = Some(Error::io(path, e));
                return;
            }
        };
        let n = p.value.len();
        if bytes.len() != n * 12 {
            failure = Some(Error::SizeMismatch { expected: n * 12, actual: bytes.len() });
            return;
        }
        let vals: Vec<T> =
            bytes.chunks_exact(4).map(|c| T::lit(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)).collect();
        p.value.data_mut().copy_from_slice(&vals[..n]);
        p.adam.m.copy_from_slice(&vals[n..2 * n]);
        p.adam.v.copy_from_slice(&vals[2 * n..]);
        p.adam.step = entry.adam_step;
    });
    match failure {
        Some(e) => Err(e),
        None => Ok(manifest.meta),
    }
}
