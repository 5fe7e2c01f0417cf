//! Self-describing parameter container.
//!
//! Layout: the 8-byte magic `STVOCKPT`, a little-endian `u32` format
//! version, a little-endian `u64` header length, a UTF-8 JSON header
//! (model configuration, normalization statistics, element type and a table
//! of named tensors with shapes and element offsets), then every tensor's
//! values as little-endian IEEE floats.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use stvo_core::data::NormStats;
use stvo_core::model::{ModelConfig, ParameterSet};
use stvo_core::Real;
use thiserror::Error;

pub const MAGIC: &[u8; 8] = b"STVOCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("checkpoint is truncated")]
    Truncated,
    #[error("checkpoint header: {0}")]
    Header(String),
    #[error("checkpoint stores {found} values, expected {expected}")]
    DtypeMismatch { expected: String, found: String },
    #[error("checkpoint lacks tensor {0}")]
    MissingTensor(String),
    #[error("checkpoint has unknown tensor {0}")]
    UnexpectedTensor(String),
    #[error("tensor {name} has shape {found:?}, expected {expected:?}")]
    TensorShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("checkpoint model does not match the configuration: {0}")]
    ConfigMismatch(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// Scalars that can be stored.
pub trait Element: Real {
    const SIZE: usize;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl Element for f32 {
    const SIZE: usize = 4;
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().unwrap())
    }
}

impl Element for f64 {
    const SIZE: usize = 8;
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().unwrap())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub num_frames: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub num_heads: usize,
    pub mlp_ratio: f64,
}

impl From<&ModelConfig> for ModelSection {
    fn from(c: &ModelConfig) -> Self {
        Self {
            num_frames: c.num_frames,
            channels: c.channels,
            height: c.height,
            width: c.width,
            patch_size: c.patch_size,
            embed_dim: c.embed_dim,
            depth: c.depth,
            num_heads: c.num_heads,
            mlp_ratio: c.mlp_ratio,
        }
    }
}

impl From<&ModelSection> for ModelConfig {
    fn from(s: &ModelSection) -> Self {
        Self {
            num_frames: s.num_frames,
            channels: s.channels,
            height: s.height,
            width: s.width,
            patch_size: s.patch_size,
            embed_dim: s.embed_dim,
            depth: s.depth,
            num_heads: s.num_heads,
            mlp_ratio: s.mlp_ratio,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsSection {
    pub image_mean: Vec<f64>,
    pub image_std: Vec<f64>,
    pub target_mean: [f64; 6],
    pub target_std: [f64; 6],
}

impl From<&NormStats> for StatsSection {
    fn from(s: &NormStats) -> Self {
        Self {
            image_mean: s.image_mean.clone(),
            image_std: s.image_std.clone(),
            target_mean: s.target_mean,
            target_std: s.target_std,
        }
    }
}

impl From<StatsSection> for NormStats {
    fn from(s: StatsSection) -> Self {
        Self {
            image_mean: s.image_mean,
            image_std: s.image_std,
            target_mean: s.target_mean,
            target_std: s.target_std,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    dtype: String,
    model: ModelSection,
    norm_stats: StatsSection,
    epoch: Option<usize>,
    tensors: Vec<TensorEntry>,
}

/// Everything needed to run a trained model.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub config: ModelConfig,
    pub stats: NormStats,
    pub params: ParameterSet<T>,
    /// Training epoch the parameters come from, when known.
    pub epoch: Option<usize>,
}

pub fn encode<T: Element>(ckpt: &Checkpoint<T>) -> Vec<u8> {
    let named = ckpt.params.named_tensors();
    let mut offset = 0;
    let tensors = named
        .iter()
        .map(|(name, t)| {
            let e = TensorEntry {
                name: name.clone(),
                shape: t.shape.clone(),
                offset,
            };
            offset += t.len();
            e
        })
        .collect();
    let header = Header {
        dtype: T::NAME.into(),
        model: (&ckpt.config).into(),
        norm_stats: (&ckpt.stats).into(),
        epoch: ckpt.epoch,
        tensors,
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(20 + json.len() + offset * T::SIZE);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in &named {
        for &v in &t.data {
            v.write_le(&mut out);
        }
    }
    out
}

fn take<'a>(bytes: &mut &'a [u8], n: usize) -> Result<&'a [u8], CheckpointError> {
    if bytes.len() < n {
        return Err(CheckpointError::Truncated);
    }
    let (head, rest) = bytes.split_at(n);
    *bytes = rest;
    Ok(head)
}

pub fn decode<T: Element>(mut bytes: &[u8]) -> Result<Checkpoint<T>, CheckpointError> {
    if take(&mut bytes, 8)? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = u32::from_le_bytes(take(&mut bytes, 4)?.try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let len = u64::from_le_bytes(take(&mut bytes, 8)?.try_into().unwrap()) as usize;
    let header: Header = serde_json::from_slice(take(&mut bytes, len)?)
        .map_err(|e| CheckpointError::Header(e.to_string()))?;
    if header.dtype != T::NAME {
        return Err(CheckpointError::DtypeMismatch {
            expected: T::NAME.into(),
            found: header.dtype,
        });
    }
    let config = ModelConfig::from(&header.model);
    let mut params =
        ParameterSet::<T>::zeros(&config).map_err(|e| CheckpointError::Header(e.to_string()))?;
    let data = bytes;
    let mut seen = vec![false; header.tensors.len()];
    for (name, tensor) in params.named_tensors_mut() {
        let (i, entry) = header
            .tensors
            .iter()
            .enumerate()
            .find(|(_, e)| e.name == name)
            .ok_or_else(|| CheckpointError::MissingTensor(name.clone()))?;
        seen[i] = true;
        if entry.shape != tensor.shape {
            return Err(CheckpointError::TensorShape {
                name,
                expected: tensor.shape.clone(),
                found: entry.shape.clone(),
            });
        }
        let start = entry.offset * T::SIZE;
        let end = start + tensor.len() * T::SIZE;
        let raw = data.get(start..end).ok_or(CheckpointError::Truncated)?;
        for (v, chunk) in tensor.data.iter_mut().zip(raw.chunks_exact(T::SIZE)) {
            *v = T::read_le(chunk);
        }
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(CheckpointError::UnexpectedTensor(
            header.tensors[i].name.clone(),
        ));
    }
    Ok(Checkpoint {
        config,
        stats: header.norm_stats.into(),
        params,
        epoch: header.epoch,
    })
}

pub fn save<T: Element>(path: &Path, ckpt: &Checkpoint<T>) -> Result<(), CheckpointError> {
    let io = |source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    };
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io)?;
    }
    // Written beside the target, then renamed into place.
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, encode(ckpt)).map_err(io)?;
    fs::rename(&tmp, path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load<T: Element>(path: &Path) -> Result<Checkpoint<T>, CheckpointError> {
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode(&bytes)
}

/// Fails unless the checkpoint's architecture equals the runtime one.
pub fn ensure_same_model(
    runtime: &ModelConfig,
    stored: &ModelConfig,
) -> Result<(), CheckpointError> {
    if runtime == stored {
        return Ok(());
    }
    Err(CheckpointError::ConfigMismatch(format!(
        "configured {:?}, checkpoint {:?}",
        ModelSection::from(runtime),
        ModelSection::from(stored)
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint<f32> {
        let config = ModelConfig::tiny();
        Checkpoint {
            params: ParameterSet::init(&config, 17).unwrap(),
            stats: NormStats {
                image_mean: vec![0.1, 1.0 / 3.0, 0.7],
                image_std: vec![0.2, 0.3, std::f64::consts::PI],
                target_mean: [1e-300, -2.5, 0.1, 0.2, 0.3, 0.4],
                target_std: [1.0, 2.0, 3.0, 4.0, 5.0, 6.0 + f64::EPSILON * 6.0],
            },
            config,
            epoch: Some(3),
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ckpt = sample();
        let back: Checkpoint<f32> = decode(&encode(&ckpt)).unwrap();
        assert_eq!(back, ckpt);
        let wide = Checkpoint {
            params: ckpt.params.cast::<f64>(),
            config: ckpt.config.clone(),
            stats: ckpt.stats.clone(),
            epoch: None,
        };
        assert_eq!(decode::<f64>(&encode(&wide)).unwrap(), wide);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let bytes = encode(&sample());
        assert!(matches!(
            decode::<f32>(&bytes[..bytes.len() - 1]),
            Err(CheckpointError::Truncated)
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            decode::<f32>(&bad),
            Err(CheckpointError::BadMagic)
        ));
        let mut bad = bytes.clone();
        bad[8] = 9;
        assert!(matches!(
            decode::<f32>(&bad),
            Err(CheckpointError::UnsupportedVersion(9))
        ));
        assert!(matches!(
            decode::<f64>(&bytes),
            Err(CheckpointError::DtypeMismatch { .. })
        ));
    }

    #[test]
    fn model_mismatch_is_reported() {
        let a = ModelConfig::tiny();
        let b = ModelConfig {
            depth: 2,
            ..a.clone()
        };
        assert!(ensure_same_model(&a, &a).is_ok());
        assert!(matches!(
            ensure_same_model(&a, &b),
            Err(CheckpointError::ConfigMismatch(_))
        ));
    }
}
