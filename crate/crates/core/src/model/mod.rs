//! The pose-regression transformer.
//!
//! A clip of `num_frames` images is cut into `P x P` patches, linearly
//! embedded, and run through `depth` encoder blocks that alternate temporal
//! attention (tokens sharing a spatial index), a fully connected map, spatial
//! attention (tokens of one frame plus the class token) and an MLP. The class
//! token's final state is regressed to `num_frames - 1` six-component motions.

mod network;
pub(crate) mod ops;
mod params;
mod rollout;

use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;

use thiserror::Error;

use crate::real::Real;

pub use network::{
    attention_maps, embed, encoder_block, forward, loss_and_gradients, patchify, unpatchify,
    BlockAttention, PoseBatchOutput,
};
pub use params::{param_count, BlockParams, ParameterSet, Tensor};
pub use rollout::{attention_rollout, rollout_from_attention, RelevanceMap};

/// Width of one motion: three Euler angles and three translation components.
pub const MOTION_DIM: usize = 6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },
    #[error("non-finite activation at {site}")]
    NonFiniteActivation { site: ActivationSite },
    #[error("empty batch")]
    EmptyBatch,
}

/// Where a non-finite value first appeared during a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActivationSite {
    Embedding,
    Block(usize),
    Head,
}

impl core::fmt::Display for ActivationSite {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            ActivationSite::Embedding => f.write_str("patch embedding"),
            ActivationSite::Block(i) => write!(f, "encoder block {i}"),
            ActivationSite::Head => f.write_str("regression head"),
        }
    }
}

pub(crate) fn shape_mismatch(expected: impl Into<String>, actual: impl Into<String>) -> ModelError {
    ModelError::ShapeMismatch {
        expected: expected.into(),
        actual: actual.into(),
    }
}

/// Architectural hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
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

impl ModelConfig {
    /// Twelve blocks, six heads, 384-wide embeddings, 16-pixel patches over
    /// 192x640 frames.
    pub fn standard(num_frames: usize) -> Self {
        Self {
            num_frames,
            channels: 3,
            height: 192,
            width: 640,
            patch_size: 16,
            embed_dim: 384,
            depth: 12,
            num_heads: 6,
            mlp_ratio: 4.0,
        }
    }

    /// A desk-scale configuration used by tests and smoke runs.
    pub fn tiny() -> Self {
        Self {
            num_frames: 2,
            channels: 3,
            height: 32,
            width: 32,
            patch_size: 16,
            embed_dim: 8,
            depth: 1,
            num_heads: 2,
            mlp_ratio: 4.0,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: &str| Err(ModelError::InvalidConfig(msg.into()));
        if self.num_frames < 2 {
            return bad("num_frames must be at least 2");
        }
        if self.channels == 0 || self.patch_size == 0 || self.embed_dim == 0 {
            return bad("channels, patch_size and embed_dim must be positive");
        }
        if self.height == 0 || self.width == 0 {
            return bad("image size must be positive");
        }
        if !self.height.is_multiple_of(self.patch_size)
            || !self.width.is_multiple_of(self.patch_size)
        {
            return bad("image height and width must be multiples of patch_size");
        }
        if self.num_heads == 0 || !self.embed_dim.is_multiple_of(self.num_heads) {
            return bad("embed_dim must be divisible by num_heads");
        }
        let hidden = self.mlp_ratio * self.embed_dim as f64;
        if !(hidden >= 1.0) || hidden != libm::floor(hidden) {
            return bad("mlp_ratio * embed_dim must be a positive integer");
        }
        Ok(())
    }

    pub fn grid_height(&self) -> usize {
        self.height / self.patch_size
    }

    pub fn grid_width(&self) -> usize {
        self.width / self.patch_size
    }

    /// Patches per frame, `HW / P^2`.
    pub fn patches_per_frame(&self) -> usize {
        self.grid_height() * self.grid_width()
    }

    pub fn patch_dim(&self) -> usize {
        self.channels * self.patch_size * self.patch_size
    }

    /// Class token plus every patch of every frame.
    pub fn num_tokens(&self) -> usize {
        self.num_frames * self.patches_per_frame() + 1
    }

    pub fn mlp_hidden_dim(&self) -> usize {
        (self.mlp_ratio * self.embed_dim as f64) as usize
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.num_heads
    }

    /// Motions regressed per clip.
    pub fn num_pairs(&self) -> usize {
        self.num_frames - 1
    }

    pub fn output_dim(&self) -> usize {
        MOTION_DIM * self.num_pairs()
    }

    pub fn frame_len(&self) -> usize {
        self.channels * self.height * self.width
    }
}

/// `num_frames` channel-first frames. Frames are reference counted so
/// overlapping clips of one sequence share storage.
#[derive(Debug, Clone, PartialEq)]
pub struct Clip<T> {
    frames: Vec<Arc<[T]>>,
    channels: usize,
    height: usize,
    width: usize,
}

impl<T: Real> Clip<T> {
    pub fn new(
        frames: Vec<Arc<[T]>>,
        channels: usize,
        height: usize,
        width: usize,
    ) -> Result<Self, ModelError> {
        let len = channels * height * width;
        if let Some(f) = frames.iter().find(|f| f.len() != len) {
            return Err(shape_mismatch(
                alloc::format!("{channels}x{height}x{width} = {len} values per frame"),
                alloc::format!("{} values", f.len()),
            ));
        }
        Ok(Self {
            frames,
            channels,
            height,
            width,
        })
    }

    /// Splits a dense `frames x C x H x W` array.
    pub fn from_dense(
        data: &[T],
        num_frames: usize,
        channels: usize,
        height: usize,
        width: usize,
    ) -> Result<Self, ModelError> {
        let len = channels * height * width;
        if data.len() != num_frames * len {
            return Err(shape_mismatch(
                alloc::format!("{num_frames}x{channels}x{height}x{width}"),
                alloc::format!("{} values", data.len()),
            ));
        }
        let frames = data.chunks_exact(len).map(Arc::from).collect();
        Self::new(frames, channels, height, width)
    }

    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn frame(&self, t: usize) -> &[T] {
        &self.frames[t]
    }

    pub fn frames(&self) -> &[Arc<[T]>] {
        &self.frames
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.frames.len(), self.channels, self.height, self.width]
    }

    pub fn to_dense(&self) -> Vec<T> {
        self.frames.iter().flat_map(|f| f.iter().copied()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.frames.iter().all(|f| f.iter().all(|v| v.is_finite()))
    }

    pub fn check_config(&self, config: &ModelConfig) -> Result<(), ModelError> {
        let expected = [
            config.num_frames,
            config.channels,
            config.height,
            config.width,
        ];
        if self.shape() != expected {
            return Err(shape_mismatch(
                alloc::format!("clip {expected:?}"),
                alloc::format!("{:?}", self.shape()),
            ));
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> Clip<U> {
        Clip {
            frames: self
                .frames
                .iter()
                .map(|f| f.iter().map(|v| U::from_f64(v.as_f64())).collect())
                .collect(),
            channels: self.channels,
            height: self.height,
            width: self.width,
        }
    }
}
