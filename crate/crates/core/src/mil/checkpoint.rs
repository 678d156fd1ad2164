//! Binary model checkpoints.
//!
//! Layout (little endian): `MILM`, u32 format version, u32 D, u32 L, u32 input
//! size, u32 stem pool, u32 block count, u32 channels per block, then every
//! parameter tensor as u64 length followed by f64 values.

use std::path::Path;

use thiserror::Error;

use super::cnn::ArchSpec;
use super::model::{MilModel, ModelConfig};
use crate::ingest::content_hash;
use crate::scalar::Real;

const MAGIC: &[u8; 4] = b"MILM";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a model checkpoint (bad magic)")]
    BadMagic,
    #[error("checkpoint format version {found} is not supported (expected {CHECKPOINT_VERSION})")]
    Version { found: u32 },
    #[error("checkpoint truncated")]
    Truncated,
    #[error("checkpoint describes an invalid model: {0}")]
    Invalid(String),
    #[error("{0}: {1}")]
    Io(std::path::PathBuf, #[source] std::io::Error),
}

pub fn encode<T: Real>(model: &MilModel<T>) -> Vec<u8> {
    let cfg = &model.config;
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    let mut u32s = vec![
        CHECKPOINT_VERSION,
        cfg.arch.feature_dim as u32,
        cfg.attention_dim as u32,
        cfg.arch.input_size as u32,
        cfg.arch.stem_pool as u32,
        cfg.arch.channels.len() as u32,
    ];
    u32s.extend(cfg.arch.channels.iter().map(|&c| c as u32));
    for v in u32s {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for (_, t) in model.tensors() {
        buf.extend_from_slice(&(t.len() as u64).to_le_bytes());
        for v in t {
            buf.extend_from_slice(&v.as_f64().to_le_bytes());
        }
    }
    buf
}

pub fn decode<T: Real>(bytes: &[u8]) -> Result<MilModel<T>, CheckpointError> {
    let mut at = 0usize;
    let mut take = |n: usize| -> Result<&[u8], CheckpointError> {
        let s = bytes.get(at..at + n).ok_or(CheckpointError::Truncated)?;
        at += n;
        Ok(s)
    };
    if take(4)? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut u32_at = || -> Result<u32, CheckpointError> { Ok(u32::from_le_bytes(take(4)?.try_into().unwrap())) };
    let version = u32_at()?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version { found: version });
    }
    let feature_dim = u32_at()? as usize;
    let attention_dim = u32_at()? as usize;
    let input_size = u32_at()? as usize;
    let stem_pool = u32_at()? as usize;
    let blocks = u32_at()? as usize;
    if blocks > 64 {
        return Err(CheckpointError::Invalid(format!("{blocks} conv blocks")));
    }
    let channels = (0..blocks).map(|_| u32_at().map(|c| c as usize)).collect::<Result<Vec<_>, _>>()?;
    let config = ModelConfig { arch: ArchSpec { input_size, stem_pool, channels, feature_dim }, attention_dim };
    config.validate().map_err(|e| CheckpointError::Invalid(e.to_string()))?;
    let mut model = MilModel::<T>::zeros(&config);
    for t in model.tensors_mut() {
        let len = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
        if len != t.len() {
            return Err(CheckpointError::Invalid(format!("tensor of {len} values, expected {}", t.len())));
        }
        for v in t.iter_mut() {
            *v = T::lit(f64::from_le_bytes(take(8)?.try_into().unwrap()));
        }
    }
    if at != bytes.len() {
        return Err(CheckpointError::Invalid("trailing bytes".into()));
    }
    Ok(model)
}

pub fn save_checkpoint<T: Real>(model: &MilModel<T>, path: &Path) -> Result<(), CheckpointError> {
    std::fs::write(path, encode(model)).map_err(|e| CheckpointError::Io(path.to_path_buf(), e))
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<MilModel<T>, CheckpointError> {
    let bytes = std::fs::read(path).map_err(|e| CheckpointError::Io(path.to_path_buf(), e))?;
    decode(&bytes)
}

/// Stable identifier of a model's weights, used to key cached results.
pub fn model_version<T: Real>(model: &MilModel<T>) -> String {
    format!("milm{CHECKPOINT_VERSION}-{:016x}", content_hash(&[&encode(model)]))
}
