use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tasks::{Format, Modality};

pub const TASK_VECTOR_MAGIC: &[u8; 8] = b"TVVEC\0\0\0";
const VERSION: u32 = 1;

/// One residual-stream vector and where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskVector {
    pub values: Vec<f32>,
    pub layer: usize,
    pub task_id: Option<usize>,
    pub source_modality: Modality,
    pub source_format: Format,
    pub source_checkpoint: String,
    /// Descriptions of the inputs when this vector is an ensemble.
    pub sources: Vec<String>,
}

impl TaskVector {
    pub fn new(
        values: Vec<f32>,
        layer: usize,
        task_id: Option<usize>,
        source_modality: Modality,
        source_format: Format,
        source_checkpoint: &str,
    ) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self {
            values,
            layer,
            task_id,
            source_modality,
            source_format,
            source_checkpoint: source_checkpoint.to_string(),
            sources: Vec::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn describe(&self) -> String {
        let task = self.task_id.map_or("-".to_string(), |t| t.to_string());
        format!(
            "{}:{:?}/{:?}@L{}#task{}",
            self.source_checkpoint, self.source_modality, self.source_format, self.layer, task
        )
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    layer: usize,
    task_id: Option<usize>,
    modality: Modality,
    format: Format,
    checkpoint: String,
    dim: usize,
    #[serde(default)]
    sources: Vec<String>,
}

/// Layout: magic, u32 version, u64 header length, JSON header, then `dim`
/// little-endian f32 values.
pub fn save_task_vector(v: &TaskVector, path: impl AsRef<Path>) -> Result<()> {
    let header = serde_json::to_vec(&Header {
        layer: v.layer,
        task_id: v.task_id,
        modality: v.source_modality,
        format: v.source_format,
        checkpoint: v.source_checkpoint.clone(),
        dim: v.dim(),
        sources: v.sources.clone(),
    })?;
    let mut out = Vec::with_capacity(20 + header.len() + 4 * v.dim());
    out.extend_from_slice(TASK_VECTOR_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for x in &v.values {
        out.extend_from_slice(&x.to_le_bytes());
    }
    let path = path.as_ref();
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_task_vector(path: impl AsRef<Path>) -> Result<TaskVector> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 20 || &bytes[..8] != TASK_VECTOR_MAGIC {
        return Err(Error::Corrupt("bad task-vector magic".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: VERSION,
        });
    }
    let len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let end = 20usize
        .checked_add(len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::Corrupt("truncated task-vector header".into()))?;
    let h: Header = serde_json::from_slice(&bytes[20..end]).map_err(|e| Error::Corrupt(format!("header: {e}")))?;
    let payload = &bytes[end..];
    if payload.len() != 4 * h.dim {
        return Err(Error::Corrupt("task-vector payload length".into()));
    }
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let mut v = TaskVector::new(values, h.layer, h.task_id, h.modality, h.format, &h.checkpoint)?;
    v.sources = h.sources;
    Ok(v)
}
