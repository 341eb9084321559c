//! Binary checkpoint: the magic `RASHVIT1`, a little-endian `u32` header
//! length, a JSON header (config plus a tensor table), then raw little-endian
//! `f32` data for every tensor in header order.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::params::ModelParams;
use crate::diffcore::Tensor;
use crate::io::write_atomic;
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"RASHVIT1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Role {
    Param,
    Buffer,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    role: Role,
    dtype: String,
    shape: Vec<usize>,
    /// Byte offset from the start of the data section.
    offset: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: ModelConfig,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ModelParams<f32>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.params.check_against(&self.config)?;
        let mut tensors = Vec::new();
        let mut blob = Vec::new();
        let groups = [(Role::Param, &self.params.params), (Role::Buffer, &self.params.buffers)];
        for (role, map) in groups {
            for (name, t) in map {
                tensors.push(TensorEntry {
                    name: name.clone(),
                    role,
                    dtype: "f32".into(),
                    shape: t.shape().to_vec(),
                    offset: blob.len(),
                });
                for v in t.data() {
                    blob.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        let header = serde_json::to_vec(&Header {
            config: self.config.clone(),
            tensors,
        })?;
        let len = u32::try_from(header.len()).map_err(|_| Error::Format("header too large".into()))?;
        let mut out = Vec::with_capacity(12 + header.len() + blob.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&blob);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..8] != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let data_start = 12 + len;
        if bytes.len() < data_start {
            return Err(Error::Format("truncated checkpoint header".into()));
        }
        let header: Header = serde_json::from_slice(&bytes[12..data_start])?;
        header.config.validate()?;
        let data = &bytes[data_start..];
        let mut params = BTreeMap::new();
        let mut buffers = BTreeMap::new();
        let mut expected_offset = 0;
        for e in &header.tensors {
            if e.dtype != "f32" {
                return Err(Error::Format(format!("{}: unsupported dtype {}", e.name, e.dtype)));
            }
            let n: usize = e.shape.iter().product();
            let end = e.offset + 4 * n;
            if e.offset != expected_offset || end > data.len() {
                return Err(Error::Format(format!("{}: bad offset {}", e.name, e.offset)));
            }
            expected_offset = end;
            let values = data[e.offset..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            let t = Tensor::new(&e.shape, values)?;
            let map = match e.role {
                Role::Param => &mut params,
                Role::Buffer => &mut buffers,
            };
            if map.insert(e.name.clone(), t).is_some() {
                return Err(Error::Format(format!("duplicate tensor {}", e.name)));
            }
        }
        if expected_offset != data.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after tensor data",
                data.len() - expected_offset
            )));
        }
        let params = ModelParams { params, buffers };
        params.check_against(&header.config)?;
        Ok(Self {
            config: header.config,
            params,
        })
    }
}

pub fn save_checkpoint(path: &Path, config: &ModelConfig, params: &ModelParams<f32>) -> Result<()> {
    let ck = Checkpoint {
        config: config.clone(),
        params: params.clone(),
    };
    write_atomic(path, &ck.to_bytes()?)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    Checkpoint::from_bytes(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let config = ModelConfig::gradcheck_tiny();
        let params = ModelParams::init(&config, 5).unwrap();
        Checkpoint { config, params }
    }

    #[test]
    fn round_trip_is_exact_and_resave_is_byte_identical() {
        let ck = sample();
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let ck = sample();
        save_checkpoint(&path, &ck.config, &ck.params).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), ck);
        assert!(matches!(
            load_checkpoint(&dir.path().join("nope")),
            Err(Error::MissingFile(_))
        ));
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let bytes = sample().to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(b"NOTACKPT0000").is_err());
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 4]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
    }

    #[test]
    fn mismatched_params_are_rejected() {
        let mut ck = sample();
        ck.params.params.remove("long_skip.bias");
        assert!(ck.to_bytes().is_err());
    }
}
