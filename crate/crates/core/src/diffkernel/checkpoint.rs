//! Checkpoint files: one JSON header line followed by the raw parameter
//! values as little-endian `f64`, in header order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::ParameterStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub d: usize,
    pub n_items: usize,
    pub n_users: usize,
    pub config_hash: String,
    /// Full training configuration the parameters were produced with.
    pub config: serde_json::Value,
    pub params: Vec<ParamEntry>,
}

/// Serializes a store. `header.params` is overwritten with the store's
/// inventory.
pub fn encode(mut header: CheckpointHeader, store: &ParameterStore) -> Result<Vec<u8>> {
    header.format_version = CHECKPOINT_FORMAT_VERSION;
    header.params = store
        .iter()
        .map(|(name, p)| ParamEntry {
            name: name.to_string(),
            shape: [p.value.rows(), p.value.cols()],
        })
        .collect();
    let mut out = serde_json::to_vec(&header)?;
    out.push(b'\n');
    for (_, p) in store.iter() {
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<(CheckpointHeader, ParameterStore)> {
    let split = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::format(path, "missing header line"))?;
    let header: CheckpointHeader = serde_json::from_slice(&bytes[..split])
        .map_err(|e| Error::format(path, format!("header: {e}")))?;
    if header.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(Error::format(
            path,
            format!("unsupported format_version {}", header.format_version),
        ));
    }
    let mut body = &bytes[split + 1..];
    let mut store = ParameterStore::new();
    for entry in &header.params {
        let [r, c] = entry.shape;
        let n = r * c * 8;
        if body.len() < n {
            return Err(Error::format(path, format!("truncated at {}", entry.name)));
        }
        let values = body[..n]
            .chunks_exact(8)
            .map(|ch| f64::from_le_bytes(ch.try_into().expect("8-byte chunk")))
            .collect();
        store.insert(entry.name.clone(), Tensor::from_vec(r, c, values)?);
        body = &body[n..];
    }
    if !body.is_empty() {
        return Err(Error::format(path, "trailing bytes after parameters"));
    }
    Ok((header, store))
}

pub fn save(path: &Path, header: CheckpointHeader, store: &ParameterStore) -> Result<()> {
    let bytes = encode(header, store)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<(CheckpointHeader, ParameterStore)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}
