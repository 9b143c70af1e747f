//! Versioned single-file checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes   b"TVCKPT\0\0"
//! version      u32
//! header_len   u64
//! header       header_len bytes of JSON: config, training meta, tensor manifest
//! payload      f32 tensor data in manifest order
//! checksum     u64, first 8 bytes of SHA-256(payload) read as little-endian
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::ModelConfig;
use super::params::Params;
use super::Model;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"TVCKPT\0\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingMeta {
    pub steps: usize,
    pub data_mixture: String,
    pub parent_id: Option<String>,
    /// Hash of the run configuration that produced the checkpoint.
    #[serde(default)]
    pub config_hash: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    id: String,
    config: ModelConfig,
    meta: TrainingMeta,
    tensors: Vec<TensorEntry>,
}

/// An immutable trained model. The id is a content hash of config and
/// parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    model: Model<f32>,
    meta: TrainingMeta,
    id: String,
}

fn payload_bytes(params: &Params<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(params.n_params() * 4);
    for t in params.tensors() {
        for v in t {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn checksum(payload: &[u8]) -> u64 {
    let digest = Sha256::digest(payload);
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

impl Checkpoint {
    pub fn new(model: Model<f32>, meta: TrainingMeta) -> Result<Self> {
        model.config.validate()?;
        let mut hasher = Sha256::new();
        hasher.update(serde_json::to_vec(&model.config)?);
        hasher.update(payload_bytes(&model.params));
        let id = hex::encode(&hasher.finalize()[..8]);
        Ok(Self { model, meta, id })
    }

    pub fn model(&self) -> &Model<f32> {
        &self.model
    }

    pub fn config(&self) -> &ModelConfig {
        &self.model.config
    }

    pub fn params(&self) -> &Params<f32> {
        &self.model.params
    }

    pub fn meta(&self) -> &TrainingMeta {
        &self.meta
    }

    /// Records the producing run's config hash. The content id covers only
    /// config and parameters, so it is unchanged.
    pub fn with_config_hash(mut self, hash: &str) -> Self {
        self.meta.config_hash = Some(hash.to_string());
        self
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut offset = 0u64;
        let tensors = self
            .model
            .config
            .tensor_shapes()
            .into_iter()
            .map(|(name, shape)| {
                let entry = TensorEntry {
                    name,
                    offset,
                    shape: shape.clone(),
                };
                offset += 4 * shape.iter().product::<usize>() as u64;
                entry
            })
            .collect();
        let header = Header {
            id: self.id.clone(),
            config: self.model.config.clone(),
            meta: self.meta.clone(),
            tensors,
        };
        let header = serde_json::to_vec(&header)?;
        let payload = payload_bytes(&self.model.params);

        let mut out = Vec::with_capacity(24 + header.len() + payload.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&payload);
        out.extend_from_slice(&checksum(&payload).to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |m: &str| Error::Corrupt(m.to_string());
        if bytes.len() < 20 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let header_end = 20usize
            .checked_add(header_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| corrupt("truncated header"))?;
        let header: Header =
            serde_json::from_slice(&bytes[20..header_end]).map_err(|e| Error::Corrupt(format!("header: {e}")))?;
        header.config.validate()?;

        let expected = header.config.tensor_shapes();
        if expected.len() != header.tensors.len() {
            return Err(corrupt("tensor manifest does not match config"));
        }
        let n_floats: usize = expected.iter().map(|(_, s)| s.iter().product::<usize>()).sum();
        let payload_end = header_end + 4 * n_floats;
        if bytes.len() != payload_end + 8 {
            return Err(corrupt("truncated or oversized payload"));
        }
        let payload = &bytes[header_end..payload_end];
        let stored = u64::from_le_bytes(bytes[payload_end..].try_into().unwrap());
        if stored != checksum(payload) {
            return Err(corrupt("checksum mismatch"));
        }

        let mut params = Params::<f32>::zeros(&header.config);
        for (((name, shape), entry), dst) in expected
            .iter()
            .zip(&header.tensors)
            .zip(params.tensors_mut())
        {
            if &entry.name != name || &entry.shape != shape {
                return Err(Error::Corrupt(format!("unexpected tensor {}", entry.name)));
            }
            let start = entry.offset as usize;
            let end = start + 4 * dst.len();
            if end > payload.len() {
                return Err(corrupt("tensor offset out of range"));
            }
            for (v, chunk) in dst.iter_mut().zip(payload[start..end].chunks_exact(4)) {
                *v = f32::from_le_bytes(chunk.try_into().unwrap());
            }
        }
        let ckpt = Checkpoint::new(
            Model {
                config: header.config,
                params,
            },
            header.meta,
        )?;
        if ckpt.id != header.id {
            return Err(corrupt("content id mismatch"));
        }
        Ok(ckpt)
    }
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, checkpoint.to_bytes()?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ckpt() -> Checkpoint {
        let model = Model::new(ModelConfig {
            n_layers: 1,
            d_model: 4,
            n_heads: 2,
            d_ff: 4,
            vocab_size: 6,
            max_seq_len: 5,
            seed: 2,
            ..ModelConfig::default()
        })
        .unwrap();
        Checkpoint::new(model, TrainingMeta::default()).unwrap()
    }

    #[test]
    fn bytes_round_trip() {
        let c = ckpt();
        let bytes = c.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn flipped_payload_bit_fails_checksum() {
        let mut bytes = ckpt().to_bytes().unwrap();
        let n = bytes.len();
        bytes[n - 12] ^= 0x01;
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::Corrupt(_))));
    }

    #[test]
    fn version_is_checked() {
        let mut bytes = ckpt().to_bytes().unwrap();
        bytes[8] = 9;
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(Error::VersionMismatch { found: 9, expected: 1 })
        ));
    }

    #[test]
    fn every_truncation_is_rejected() {
        let bytes = ckpt().to_bytes().unwrap();
        for cut in [0, 5, 19, 40, bytes.len() - 9, bytes.len() - 1] {
            assert!(Checkpoint::from_bytes(&bytes[..cut]).is_err(), "cut at {cut}");
        }
    }
}
