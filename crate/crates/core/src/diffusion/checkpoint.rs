//! Binary checkpoint container.
//!
//! Layout: magic `PGVC`, format version (u32 LE), header length (u32 LE), a
//! JSON header with the network config, training metadata and tensor index
//! (name, shape, byte offset into the data section), then every tensor as
//! little-endian `f32` in index order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::{NetworkConfig, ParamId, Params, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 4] = b"PGVC";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub steps: usize,
    pub final_loss: Option<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T = f32> {
    pub config: NetworkConfig,
    pub params: Params<T>,
    pub meta: TrainingMeta,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: NetworkConfig,
    meta: TrainingMeta,
    tensors: Vec<TensorEntry>,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl<T: Scalar> Checkpoint<T> {
    /// Freshly initialized weights, no training.
    pub fn init(config: NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = Params::init(&config, seed);
        Ok(Checkpoint {
            config,
            params,
            meta: TrainingMeta {
                steps: 0,
                final_loss: None,
                seed,
            },
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut offset = 0u64;
        let tensors = self
            .params
            .iter()
            .map(|(id, t)| {
                let entry = TensorEntry {
                    name: id.name().to_string(),
                    shape: t.shape.clone(),
                    offset,
                };
                offset += 4 * t.data.len() as u64;
                entry
            })
            .collect();
        let header = Header {
            config: self.config.clone(),
            meta: self.meta.clone(),
            tensors,
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(12 + header.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for (_, t) in self.params.iter() {
            for v in &t.data {
                out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..4] != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(corrupt(format!("unsupported format version {version}")));
        }
        let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let data_start = 12usize
            .checked_add(header_len)
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| corrupt("header length exceeds file"))?;
        let header: Header = serde_json::from_slice(&bytes[12..data_start])
            .map_err(|e| corrupt(format!("header: {e}")))?;
        header
            .config
            .validate()
            .map_err(|e| corrupt(format!("config: {e}")))?;
        let data = &bytes[data_start..];

        if header.tensors.len() != ParamId::ALL.len() {
            return Err(corrupt(format!(
                "expected {} tensors, index lists {}",
                ParamId::ALL.len(),
                header.tensors.len()
            )));
        }
        let mut slots: Vec<Option<Tensor<T>>> = vec![None; ParamId::ALL.len()];
        let mut expected_offset = 0u64;
        for entry in &header.tensors {
            let id = ParamId::from_name(&entry.name)
                .ok_or_else(|| corrupt(format!("unknown tensor {}", entry.name)))?;
            let shape = id.shape(&header.config);
            if entry.shape != shape {
                return Err(corrupt(format!(
                    "{} has shape {:?}, expected {:?}",
                    entry.name, entry.shape, shape
                )));
            }
            if entry.offset != expected_offset {
                return Err(corrupt(format!(
                    "{} at offset {}, expected {}",
                    entry.name, entry.offset, expected_offset
                )));
            }
            let count: usize = shape.iter().product();
            let start = entry.offset as usize;
            let end = start + 4 * count;
            if end > data.len() {
                return Err(corrupt(format!("{} runs past end of file", entry.name)));
            }
            expected_offset = end as u64;
            let values = data[start..end]
                .chunks_exact(4)
                .map(|b| T::of(f32::from_le_bytes(b.try_into().unwrap()) as f64))
                .collect();
            let slot = &mut slots[id as usize];
            if slot.is_some() {
                return Err(corrupt(format!("duplicate tensor {}", entry.name)));
            }
            *slot = Some(Tensor { shape, data: values });
        }
        if expected_offset as usize != data.len() {
            return Err(corrupt(format!(
                "{} trailing bytes after tensor data",
                data.len() - expected_offset as usize
            )));
        }
        let tensors = slots.into_iter().map(|t| t.expect("all slots filled")).collect();
        let params = Params::from_tensors(&header.config, tensors)?;
        Ok(Checkpoint {
            config: header.config,
            params,
            meta: header.meta,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes)
    }

    pub fn cast<U: Scalar>(&self) -> Checkpoint<U> {
        Checkpoint {
            config: self.config.clone(),
            params: self.params.cast(),
            meta: self.meta.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> NetworkConfig {
        NetworkConfig {
            base_channels: 8,
            window_frames: 2,
            height: 8,
            width: 8,
            ..NetworkConfig::default()
        }
    }

    fn header_of(bytes: &[u8]) -> (usize, serde_json::Value) {
        let len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        (len, serde_json::from_slice(&bytes[12..12 + len]).unwrap())
    }

    fn with_header(bytes: &[u8], header: &serde_json::Value) -> Vec<u8> {
        let (len, _) = header_of(bytes);
        let h = serde_json::to_vec(header).unwrap();
        let mut out = bytes[..8].to_vec();
        out.extend_from_slice(&(h.len() as u32).to_le_bytes());
        out.extend_from_slice(&h);
        out.extend_from_slice(&bytes[12 + len..]);
        out
    }

    #[test]
    fn round_trip_is_bitwise() {
        let mut ckpt = Checkpoint::<f32>::init(small(), 3).unwrap();
        ckpt.meta.final_loss = Some(0.1 + 0.2);
        ckpt.meta.steps = 17;
        let back = Checkpoint::<f32>::from_bytes(&ckpt.to_bytes()).unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(&ckpt.to_bytes()[..4], b"PGVC");
    }

    #[test]
    fn rejects_corruption() {
        let bytes = Checkpoint::<f32>::init(small(), 3).unwrap().to_bytes();

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::<f32>::from_bytes(&bad), Err(Error::Checkpoint(_))));

        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(Checkpoint::<f32>::from_bytes(&bad).is_err());

        assert!(Checkpoint::<f32>::from_bytes(&bytes[..bytes.len() - 4]).is_err());
        let mut long = bytes.clone();
        long.extend([0, 0, 0, 0]);
        assert!(Checkpoint::<f32>::from_bytes(&long).is_err());

        let (_, header) = header_of(&bytes);
        let mut h = header.clone();
        h["tensors"][0]["shape"] = serde_json::json!([8, 4, 3, 2]);
        assert!(Checkpoint::<f32>::from_bytes(&with_header(&bytes, &h)).is_err());

        let mut h = header.clone();
        h["tensors"][1]["name"] = serde_json::json!("in_conv.weight");
        assert!(Checkpoint::<f32>::from_bytes(&with_header(&bytes, &h)).is_err());

        let mut h = header.clone();
        h["tensors"][2]["offset"] = serde_json::json!(4);
        assert!(Checkpoint::<f32>::from_bytes(&with_header(&bytes, &h)).is_err());

        let mut h = header;
        h["config"]["base_channels"] = serde_json::json!(16);
        assert!(Checkpoint::<f32>::from_bytes(&with_header(&bytes, &h)).is_err());
    }
}
