//! Single-file checkpoint archive.
//!
//! Layout: the 8-byte magic `HDRFCKPT`, a little-endian `u64` header length,
//! a UTF-8 JSON header, then every tensor's values as little-endian `f64` in
//! header order. The header lists names, shapes, dtype and byte offsets, and
//! echoes the model configuration so a checkpoint is self-describing.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"HDRFCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    /// `"segmenter"` or `"fusion"`.
    pub kind: String,
    pub config: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub tensors: Vec<Tensor>,
}

pub fn encode(kind: &str, config: serde_json::Value, store: &ParamStore) -> Result<Vec<u8>> {
    let mut offset = 0;
    let mut entries = Vec::with_capacity(store.len());
    for (name, t) in store.iter() {
        entries.push(TensorEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            dtype: "f64".into(),
            offset,
        });
        offset += t.len() * 8;
    }
    let header = CheckpointHeader {
        format_version: FORMAT_VERSION,
        kind: kind.into(),
        config,
        tensors: entries,
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(16 + json.len() + offset);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for t in store.tensors() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let corrupt = |m: &str| Error::CorruptHeader(format!("checkpoint: {m}"));
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body = bytes.get(16..16 + len).ok_or_else(|| corrupt("truncated header"))?;
    let header: CheckpointHeader = serde_json::from_slice(body).map_err(|e| corrupt(&e.to_string()))?;
    if header.format_version != FORMAT_VERSION {
        return Err(corrupt(&format!("unsupported version {}", header.format_version)));
    }
    let payload = &bytes[16 + len..];
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for e in &header.tensors {
        if e.dtype != "f64" {
            return Err(corrupt(&format!("unsupported dtype {}", e.dtype)));
        }
        let n: usize = e.shape.iter().product();
        let raw = payload
            .get(e.offset..e.offset + n * 8)
            .ok_or_else(|| corrupt(&format!("truncated payload for {}", e.name)))?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push(Tensor::from_vec(e.shape.clone(), data));
    }
    Ok(Checkpoint { header, tensors })
}

pub fn save(path: &Path, kind: &str, config: serde_json::Value, store: &ParamStore) -> Result<()> {
    let bytes = encode(kind, config, store)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

impl Checkpoint {
    /// Copies tensors into `store` by name; names and shapes must match exactly.
    pub fn restore_into(&self, store: &mut ParamStore) -> Result<()> {
        if self.tensors.len() != store.len() {
            return Err(Error::CheckpointMismatch(format!(
                "checkpoint has {} tensors, model has {}",
                self.tensors.len(),
                store.len()
            )));
        }
        for (entry, t) in self.header.tensors.iter().zip(&self.tensors) {
            let id = store
                .find(&entry.name)
                .ok_or_else(|| Error::CheckpointMismatch(format!("unknown parameter {}", entry.name)))?;
            if store.get(id).shape() != t.shape() {
                return Err(Error::CheckpointMismatch(format!(
                    "{}: checkpoint shape {:?}, model shape {:?}",
                    entry.name,
                    t.shape(),
                    store.get(id).shape()
                )));
            }
            *store.get_mut(id) = t.clone();
        }
        Ok(())
    }
}
