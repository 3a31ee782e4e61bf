use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::docmodel::{GraphDocModel, ModelConfig};
use crate::error::{Error, Result};
use crate::gradcore::{ParamStore, Tensor};

pub const MAGIC: &[u8; 4] = b"GDM1";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub shape: Vec<usize>,
    /// Byte offset into the payload.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub config: ModelConfig,
    pub labels: Vec<String>,
    pub manifest: Vec<ManifestEntry>,
}

/// `GDM1`, u32 LE version, u64 LE header length, JSON header, then every
/// parameter as little-endian f32 in manifest (path) order.
pub fn encode_checkpoint(model: &GraphDocModel) -> Vec<u8> {
    let mut manifest = Vec::new();
    let mut payload = Vec::new();
    for (path, t) in model.params().iter() {
        manifest.push(ManifestEntry {
            path: path.to_string(),
            shape: t.shape().to_vec(),
            offset: payload.len(),
        });
        for &v in t.data() {
            payload.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let header = CheckpointHeader {
        config: model.config().clone(),
        labels: model.labels().to_vec(),
        manifest,
    };
    let header = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(16 + header.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&payload);
    out
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<GraphDocModel> {
    if bytes.len() < 16 {
        return Err(bad(format!("{} bytes is too short for a header", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(bad("not a checkpoint (bad magic bytes)"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let payload_start = 16usize
        .checked_add(header_len)
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| bad("header length exceeds file size"))?;
    let header: CheckpointHeader =
        serde_json::from_slice(&bytes[16..payload_start]).map_err(|e| bad(format!("header: {e}")))?;
    let payload = &bytes[payload_start..];

    let mut expected = 0usize;
    let mut params = ParamStore::new();
    for entry in &header.manifest {
        let n: usize = entry.shape.iter().product();
        if entry.offset != expected {
            return Err(bad(format!("`{}` at offset {}, expected {expected}", entry.path, entry.offset)));
        }
        let end = expected + 4 * n;
        if end > payload.len() {
            return Err(bad(format!(
                "payload is {} bytes, manifest needs at least {end}",
                payload.len()
            )));
        }
        let data = payload[expected..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        params.insert(entry.path.clone(), Tensor::new(entry.shape.clone(), data)?);
        expected = end;
    }
    if expected != payload.len() {
        return Err(bad(format!(
            "payload is {} bytes, manifest describes {expected}",
            payload.len()
        )));
    }
    GraphDocModel::from_parts(header.config, params, header.labels)
}

pub fn save_checkpoint(model: &GraphDocModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(model)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<GraphDocModel> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

/// `model` with every parameter rounded to storage precision.
pub fn storage_rounded(model: &GraphDocModel) -> GraphDocModel {
    let mut m = model.clone();
    for (_, t) in m.params_mut().iter_mut() {
        for v in t.data_mut() {
            *v = *v as f32 as f64;
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> GraphDocModel {
        let cfg = ModelConfig {
            d_model: 4,
            d_tok: 4,
            vocab_buckets: 64,
            ..ModelConfig::default()
        };
        let mut m = GraphDocModel::init(cfg, 3).unwrap();
        m.attach_head(["b".to_string(), "a".to_string()], 4).unwrap();
        m
    }

    #[test]
    fn round_trip_is_bit_exact_at_storage_precision() {
        let m = model();
        let bytes = encode_checkpoint(&m);
        let back = decode_checkpoint(&bytes).unwrap();
        assert!(back.params().bit_eq(storage_rounded(&m).params()));
        assert_eq!(back.config(), m.config());
        assert_eq!(back.labels(), m.labels());
        assert_eq!(encode_checkpoint(&back), bytes);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let bytes = encode_checkpoint(&model());
        let truncated = &bytes[..bytes.len() - 3];
        assert!(matches!(decode_checkpoint(truncated), Err(Error::Checkpoint(m)) if m.contains("payload")));
        let mut foreign = bytes.clone();
        foreign[..4].copy_from_slice(b"PK\x03\x04");
        assert!(matches!(decode_checkpoint(&foreign), Err(Error::Checkpoint(m)) if m.contains("magic")));
        let mut version = bytes.clone();
        version[4] = 9;
        assert!(matches!(decode_checkpoint(&version), Err(Error::Checkpoint(m)) if m.contains("version")));
        let mut extra = bytes;
        extra.extend_from_slice(&[0; 4]);
        assert!(decode_checkpoint(&extra).is_err());
        assert!(decode_checkpoint(b"GD").is_err());
    }
}
