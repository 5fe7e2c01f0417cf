//! Sliding-window inference and trajectory reconstruction.

use alloc::sync::Arc;
use alloc::vec::Vec;

use thiserror::Error;

use crate::data::{clip_windows, DataError, NormStats};
use crate::geometry::{
    accumulate, average_overlapping, euler_to_matrix, GeometryError, MotionVector, Pose, Trajectory,
};
use crate::model::{forward, Clip, ModelConfig, ModelError, ParameterSet, MOTION_DIM};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InferenceError {
    #[error("predictor returned {actual} values for a clip, expected {expected}")]
    OutputShape { expected: usize, actual: usize },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Source of normalized motion estimates, `(N_f - 1) * 6` values per clip.
pub trait MotionPredictor {
    fn predict(&mut self, clip: &Clip<f32>, start_frame: usize)
        -> Result<Vec<f64>, InferenceError>;

    /// Predicts clips starting at consecutive frames from `first_start`.
    fn predict_batch(
        &mut self,
        clips: &[Clip<f32>],
        first_start: usize,
    ) -> Result<Vec<Vec<f64>>, InferenceError> {
        clips
            .iter()
            .enumerate()
            .map(|(i, c)| self.predict(c, first_start + i))
            .collect()
    }
}

/// Runs the network one clip at a time.
#[derive(Debug, Clone, Copy)]
pub struct NetworkPredictor<'a> {
    pub params: &'a ParameterSet<f32>,
    pub config: &'a ModelConfig,
}

impl MotionPredictor for NetworkPredictor<'_> {
    fn predict(
        &mut self,
        clip: &Clip<f32>,
        _start_frame: usize,
    ) -> Result<Vec<f64>, InferenceError> {
        let out = forward(core::slice::from_ref(clip), self.params, self.config)?;
        Ok(out.values.iter().map(|&v| v as f64).collect())
    }
}

/// Index of the clip whose estimate of motion `m` is used without
/// averaging: the first clip for its own motions, afterwards the clip that
/// ends on frame `m + 1`.
fn latest_clip(m: usize, num_frames: usize, num_clips: usize) -> usize {
    m.saturating_sub(num_frames - 2).min(num_clips - 1)
}

/// Denormalized motion estimates `(pair index, motion)` of every clip.
pub fn collect_estimates(
    predictions: &[Vec<f64>],
    config: &ModelConfig,
    stats: &NormStats,
) -> Result<Vec<(usize, MotionVector)>, InferenceError> {
    let k = config.output_dim();
    let mut out = Vec::with_capacity(predictions.len() * config.num_pairs());
    for (start, p) in predictions.iter().enumerate() {
        if p.len() != k {
            return Err(InferenceError::OutputShape {
                expected: k,
                actual: p.len(),
            });
        }
        for (j, m) in p.chunks_exact(MOTION_DIM).enumerate() {
            out.push((start + j, stats.denormalize_target(m)));
        }
    }
    Ok(out)
}

/// Per-frame-pair motions, either averaged over every clip that covers a
/// pair or taken from the most recent clip.
pub fn combine_estimates(
    predictions: &[Vec<f64>],
    config: &ModelConfig,
    stats: &NormStats,
    average: bool,
) -> Result<Vec<MotionVector>, InferenceError> {
    let estimates = collect_estimates(predictions, config, stats)?;
    if average {
        return Ok(average_overlapping(&estimates)?);
    }
    let pairs = config.num_pairs();
    let num_motions = predictions.len() + pairs - 1;
    Ok((0..num_motions)
        .map(|m| {
            let clip = latest_clip(m, config.num_frames, predictions.len());
            estimates[clip * pairs + (m - clip)].1
        })
        .collect())
}

/// Reconstructs the camera trajectory of a sequence of prepared frames,
/// starting from the identity pose.
pub fn infer_trajectory<P: MotionPredictor + ?Sized>(
    frames: &[Arc<[f32]>],
    config: &ModelConfig,
    stats: &NormStats,
    predictor: &mut P,
    average: bool,
) -> Result<Trajectory, InferenceError> {
    let clips = clip_windows(frames, config)?;
    let predictions = predictor.predict_batch(&clips, 0)?;
    let motions = combine_estimates(&predictions, config, stats, average)?;
    let rel: Vec<Pose> = motions.iter().map(euler_to_matrix).collect();
    Ok(accumulate(&Pose::identity(), &rel))
}
