//! Versioned binary checkpoints.
//!
//! Layout: the 8-byte magic `DUMACKPT`, a little-endian `u32` format
//! version, a little-endian `u64` header length, the JSON header, then
//! every tensor as raw little-endian `f32` in header order.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::optim::AdamState;
use crate::config::{ModelConfig, TrainConfig};
use crate::model::Model;
use crate::tensor::Tensor;
use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"DUMACKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the blob section.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub model_config: ModelConfig,
    pub train_config: TrainConfig,
    pub step: usize,
    pub dev_accuracy: Option<f64>,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub train_config: TrainConfig,
    pub step: usize,
    pub dev_accuracy: Option<f64>,
    pub moments: Option<AdamState>,
}

const PARAM_PREFIX: &str = "param/";
const M_PREFIX: &str = "adam_m/";
const V_PREFIX: &str = "adam_v/";

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut tensors = Vec::new();
        let mut blobs: Vec<&[f32]> = Vec::new();
        let mut offset = 0;
        let mut entries: Vec<(String, Vec<usize>, &[f32])> = Vec::new();
        for p in self.model.params.iter() {
            entries.push((format!("{PARAM_PREFIX}{}", p.name), p.value.shape().to_vec(), p.value.data()));
        }
        if let Some(st) = &self.moments {
            for (p, (m, v)) in self.model.params.iter().zip(st.m.iter().zip(&st.v)) {
                entries.push((format!("{M_PREFIX}{}", p.name), p.value.shape().to_vec(), m));
                entries.push((format!("{V_PREFIX}{}", p.name), p.value.shape().to_vec(), v));
            }
        }
        for (name, shape, data) in entries {
            tensors.push(TensorEntry { name, shape, offset });
            offset += data.len() * 4;
            blobs.push(data);
        }
        let header = CheckpointHeader {
            format_version: FORMAT_VERSION,
            model_config: self.model.config.clone(),
            train_config: self.train_config.clone(),
            step: self.step,
            dev_accuracy: self.dev_accuracy,
            tensors,
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut out = Vec::with_capacity(20 + json.len() + offset);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for blob in blobs {
            for v in blob {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(corrupt("not a checkpoint file (bad magic)"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {version}")));
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = bytes
            .get(20..20usize.checked_add(header_len).ok_or_else(|| corrupt("header length overflow"))?)
            .ok_or_else(|| corrupt("truncated header"))?;
        let header: CheckpointHeader =
            serde_json::from_slice(body).map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
        let blobs = &bytes[20 + header_len..];
        let read = |entry: &TensorEntry| -> Result<Tensor<f32>> {
            let n: usize = entry.shape.iter().product();
            let raw = blobs
                .get(entry.offset..entry.offset + n * 4)
                .ok_or_else(|| Error::Checkpoint(format!("tensor {} extends past end of file", entry.name)))?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
            Tensor::new(entry.shape.clone(), data).map_err(|e| Error::Checkpoint(e.to_string()))
        };
        let expected_end = header
            .tensors
            .iter()
            .map(|t| t.offset + t.shape.iter().product::<usize>() * 4)
            .max()
            .unwrap_or(0);
        if blobs.len() != expected_end {
            return Err(Error::Checkpoint(format!(
                "blob section is {} bytes, header describes {expected_end}",
                blobs.len()
            )));
        }

        let mut model = Model::new(header.model_config.clone())?;
        let find = |name: &str| header.tensors.iter().find(|t| t.name == name);
        for p in model.params.iter_mut() {
            let entry = find(&format!("{PARAM_PREFIX}{}", p.name))
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {}", p.name)))?;
            let t = read(entry)?;
            if t.shape() != p.value.shape() {
                return Err(Error::Checkpoint(format!("shape mismatch for {}", p.name)));
            }
            p.value = t;
        }
        let has_moments = header.tensors.iter().any(|t| t.name.starts_with(M_PREFIX));
        let moments = if has_moments {
            let mut st = AdamState { m: Vec::new(), v: Vec::new() };
            for p in model.params.iter() {
                for (prefix, dst) in [(M_PREFIX, &mut st.m), (V_PREFIX, &mut st.v)] {
                    let entry = find(&format!("{prefix}{}", p.name))
                        .ok_or_else(|| Error::Checkpoint(format!("missing moment {prefix}{}", p.name)))?;
                    dst.push(read(entry)?.into_data());
                }
            }
            Some(st)
        } else {
            None
        };
        Ok(Self {
            model,
            train_config: header.train_config,
            step: header.step,
            dev_accuracy: header.dev_accuracy,
            moments,
        })
    }

    /// Writes to a sibling temporary file, then renames over `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let io = |source| Error::Io {
            context: format!("writing checkpoint {}", path.display()),
            source,
        };
        let mut tmp_name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
        tmp_name.push(".tmp");
        let tmp = path.with_file_name(tmp_name);
        let mut f = std::fs::File::create(&tmp).map_err(io)?;
        f.write_all(&bytes).map_err(io)?;
        f.sync_all().map_err(io)?;
        drop(f);
        std::fs::rename(&tmp, path).map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|source| Error::Io {
            context: format!("reading checkpoint {}", path.display()),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}
