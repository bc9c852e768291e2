//! Self-describing checkpoint container.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic "ESCK0001"
//! u64 header length, header JSON {config, transform, tensors: [{name, shape}]}
//! f64 values of every tensor in header order
//! ```
//!
//! The input transform is stored in its text form so that evaluation can
//! rebuild the exact model input from raw embeddings.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{tensor_specs, ModelConfig, ModelError, Parameters, RegressorModel, Result};
use crate::saliency::InputTransform;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"ESCK0001";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: RegressorModel,
    pub transform: InputTransform,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    transform: String,
    tensors: Vec<TensorEntry>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let specs = tensor_specs(&self.model.config);
        let header = Header {
            config: self.model.config.clone(),
            transform: self.transform.to_text(),
            tensors: specs
                .iter()
                .map(|s| TensorEntry {
                    name: s.name.clone(),
                    shape: s.shape.clone(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(16 + json.len() + 8 * self.model.parameter_count());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in self.model.params.tensors() {
            for v in t {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: String| ModelError::Checkpoint(m);
        if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(bad("missing magic".into()));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let body_start = 16usize
            .checked_add(hlen)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| bad("truncated header".into()))?;
        let header: Header =
            serde_json::from_slice(&bytes[16..body_start]).map_err(|e| bad(format!("header: {e}")))?;
        header.config.validate()?;
        let specs = tensor_specs(&header.config);
        if specs.len() != header.tensors.len()
            || specs
                .iter()
                .zip(&header.tensors)
                .any(|(s, t)| s.name != t.name || s.shape != t.shape)
        {
            return Err(bad("tensor table does not match the config".into()));
        }
        let total: usize = specs.iter().map(|s| s.len()).sum();
        let body = &bytes[body_start..];
        if body.len() != 8 * total {
            return Err(bad(format!("expected {} value bytes, found {}", 8 * total, body.len())));
        }
        let mut values = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let tensors: Vec<Vec<f64>> = specs
            .iter()
            .map(|s| values.by_ref().take(s.len()).collect())
            .collect();
        let params = Parameters::from_tensors(&header.config, tensors)?;
        if !params.all_finite() {
            return Err(bad("non-finite parameter".into()));
        }
        let transform =
            InputTransform::from_text(&header.transform).map_err(|e| bad(format!("transform: {e}")))?;
        if transform.output_dims(header.config.input_dim) != header.config.input_dim {
            return Err(bad("transform output width differs from model input_dim".into()));
        }
        Ok(Checkpoint {
            model: RegressorModel::from_parameters(header.config, params)?,
            transform,
        })
    }
}

pub fn write_checkpoint(ckpt: &Checkpoint, dest: impl AsRef<Path>) -> Result<()> {
    let dest = dest.as_ref();
    fs::write(dest, ckpt.to_bytes()).map_err(|source| ModelError::Io {
        path: dest.to_path_buf(),
        source,
    })
}

pub fn read_checkpoint(src: impl AsRef<Path>) -> Result<Checkpoint> {
    let src = src.as_ref();
    let bytes = fs::read(src).map_err(|source| ModelError::Io {
        path: src.to_path_buf(),
        source,
    })?;
    Checkpoint::from_bytes(&bytes)
}
