//! Checkpoint files.
//!
//! ```text
//! b"CXCK" | u32 version | u32 header_len | JSON header | f32 LE tensor data
//! ```
//!
//! The header holds the network config, modulation size, anchors, provenance
//! and the tensor directory (name, shape, frozen flag) in storage order.

use std::collections::BTreeMap;
use std::path::Path;

use contexp_tensor::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::unet::{Anchor, Model, Param, UNetConfig};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CXCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    frozen: bool,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: UNetConfig,
    modulation: Option<usize>,
    anchors: Vec<Anchor>,
    provenance: BTreeMap<String, String>,
    tensors: Vec<TensorEntry>,
}

pub fn encode_checkpoint(model: &Model) -> Vec<u8> {
    let header = Header {
        config: model.config,
        modulation: model.modulation,
        anchors: model.anchors.clone(),
        provenance: model.provenance.clone(),
        tensors: model
            .params()
            .iter()
            .map(|p| TensorEntry { name: p.name.clone(), shape: p.tensor.shape().to_vec(), frozen: p.frozen })
            .collect(),
    };
    let json = serde_json::to_vec(&header).expect("header is serialisable");
    let mut out = Vec::with_capacity(12 + json.len() + 4 * model.param_count());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for p in model.params() {
        for v in p.tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<Model> {
    let bad = |reason: String| Error::format(path, reason);
    if bytes.len() < 12 {
        return Err(bad(format!("truncated: {} bytes, header needs 12", bytes.len())));
    }
    if &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(bad(format!("bad magic {:?}, expected CXCK", &bytes[..4])));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
    let version = u32_at(4);
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("checkpoint version {version} is not supported (expected {CHECKPOINT_VERSION})")));
    }
    let header_len = u32_at(8) as usize;
    let data_start = 12 + header_len;
    if bytes.len() < data_start {
        return Err(bad("truncated header".into()));
    }
    let header: Header = serde_json::from_slice(&bytes[12..data_start]).map_err(|e| bad(format!("header: {e}")))?;
    let total: usize = header.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum();
    let payload = &bytes[data_start..];
    if payload.len() != 4 * total {
        return Err(bad(format!("tensor data is {} bytes, directory needs {}", payload.len(), 4 * total)));
    }
    let mut offset = 0;
    let mut params = Vec::with_capacity(header.tensors.len());
    for t in header.tensors {
        let n: usize = t.shape.iter().product();
        let data = payload[offset..offset + 4 * n]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        offset += 4 * n;
        params.push(Param { name: t.name, tensor: Tensor::new(t.shape, data)?, frozen: t.frozen });
    }
    Model::from_parts(header.config, header.modulation, header.anchors, header.provenance, params)
        .map_err(|e| bad(e.to_string()))
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, encode_checkpoint(model)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path)
}
