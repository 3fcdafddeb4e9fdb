//! Checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! | bytes | content |
//! |---|---|
//! | 8 | magic `PPLMCKPT` |
//! | 4 | format version (u32, currently 1) |
//! | 8 | header length H (u64) |
//! | H | UTF-8 JSON header: `config`, `provenance`, `tensors` (name + shape) |
//! | 8 × P | parameters as f64, tensors in header order, each row-major |

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{Model, ModelConfig};
use crate::corpus::write_file;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"PPLMCKPT";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub scheme: String,
    pub epoch: usize,
    pub init_seed: u64,
    pub train_seed: u64,
    pub blacklist_digest: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub provenance: Provenance,
}

#[derive(Serialize, Deserialize)]
struct TensorInfo {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    provenance: Provenance,
    tensors: Vec<TensorInfo>,
}

impl Checkpoint {
    pub fn new(model: Model, provenance: Provenance) -> Result<Checkpoint> {
        if provenance.scheme.is_empty() || provenance.blacklist_digest.is_empty() {
            return Err(Error::Checkpoint(
                "provenance needs a scheme and a blacklist digest".into(),
            ));
        }
        Ok(Checkpoint { model, provenance })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            config: *self.model.config(),
            provenance: self.provenance.clone(),
            tensors: self
                .model
                .layout()
                .tensors()
                .into_iter()
                .map(|(name, _, shape)| TensorInfo {
                    name: name.to_string(),
                    shape,
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(20 + json.len() + 8 * self.model.param_count());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for p in self.model.params() {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(20..20 + hlen).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(body)?;
        let data = &bytes[20 + hlen..];
        if data.len() % 8 != 0 {
            return Err(bad("parameter block is not a whole number of f64 values"));
        }
        let params: Vec<f64> = data
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let model = Model::from_parts(header.config, params)?;
        let shapes: Vec<Vec<usize>> = model.layout().tensors().into_iter().map(|t| t.2).collect();
        let stored: Vec<Vec<usize>> = header.tensors.into_iter().map(|t| t.shape).collect();
        if shapes != stored {
            return Err(bad("tensor shapes disagree with the model config"));
        }
        Checkpoint::new(model, header.provenance)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes())
    }

    pub fn read(path: &Path) -> Result<Checkpoint> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes)
    }
}
