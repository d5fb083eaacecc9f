//! Versioned binary checkpoints.
//!
//! Layout: the 8-byte magic `MOEFCKPT`, a little-endian `u32` format
//! version, a little-endian `u64` header length, the JSON header, then every
//! parameter's values followed by every Adagrad accumulator, all as
//! little-endian `f64` in parameter order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::train::{TrainConfig, TrainedModel};
use crate::error::{MoefError, Result};
use crate::mixture::MoefModel;
use crate::numerics::{Adagrad, ParamStore, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MOEFCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ParamMeta {
    name: String,
    shape: Vec<usize>,
    requires_grad: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    model: MoefModel,
    train: TrainConfig,
    learning_rate: f64,
    epsilon: f64,
    params: Vec<ParamMeta>,
}

impl TrainedModel {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            model: self.model.clone(),
            train: self.train.clone(),
            learning_rate: self.optimizer.learning_rate,
            epsilon: self.optimizer.epsilon,
            params: self
                .store
                .iter()
                .map(|(_, p)| ParamMeta {
                    name: p.name.clone(),
                    shape: p.value.shape().to_vec(),
                    requires_grad: p.requires_grad,
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).expect("checkpoint header serializes");
        let total = self.store.num_values() * 2;
        let mut out = Vec::with_capacity(20 + json.len() + total * 8);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, p) in self.store.iter() {
            for v in p.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        for acc in self.optimizer.accumulators() {
            for v in acc {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |what: &str| MoefError::Data(format!("corrupt checkpoint: {what}"));
        if bytes.len() < 20 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(MoefError::Incompatible("not a checkpoint file (bad magic)".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(MoefError::Incompatible(format!(
                "checkpoint format version {version}, this build reads version {CHECKPOINT_VERSION}"
            )));
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(20..20 + header_len).ok_or_else(|| corrupt("truncated header"))?;
        let header: Header = serde_json::from_slice(body).map_err(|e| corrupt(&e.to_string()))?;
        let mut floats = bytes[20 + header_len..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        let expected: usize = header.params.iter().map(|p| p.shape.iter().product::<usize>()).sum();
        if bytes.len() - 20 - header_len != expected * 16 {
            return Err(corrupt(&format!(
                "payload holds {} bytes, header describes {}",
                bytes.len() - 20 - header_len,
                expected * 16
            )));
        }
        let mut store = ParamStore::new();
        for meta in &header.params {
            let n = meta.shape.iter().product();
            let data: Vec<f64> = floats.by_ref().take(n).collect();
            let id = store.add(meta.name.clone(), Tensor::new(meta.shape.clone(), data)?)?;
            store.get_mut(id).requires_grad = meta.requires_grad;
        }
        let accumulators = header
            .params
            .iter()
            .map(|meta| floats.by_ref().take(meta.shape.iter().product()).collect())
            .collect();
        Ok(Self {
            model: header.model,
            store,
            optimizer: Adagrad::from_parts(header.learning_rate, header.epsilon, accumulators),
            train: header.train,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| MoefError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| MoefError::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
