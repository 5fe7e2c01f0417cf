use std::path::PathBuf;

use stvo_core::data::{prepare_frames, NormStats, SequenceRecord};
use stvo_core::inference::{infer_trajectory, MotionPredictor};
use stvo_core::model::ModelConfig;
use stvo_core::Trajectory;

use super::{or_default, Context};
use crate::engine::ThreadedPredictor;
use crate::error::CliError;
use crate::kitti;

#[derive(Debug, Clone)]
pub struct InferArgs {
    pub checkpoint: PathBuf,
    pub sequence: String,
    /// Defaults to `<output dir>/predictions/<sequence>.txt`.
    pub output: Option<PathBuf>,
    /// Average overlapping clip estimates; otherwise use the latest clip.
    pub average: bool,
}

/// Reconstructs the trajectory of a loaded sequence with any predictor.
pub fn reconstruct<P: MotionPredictor + ?Sized>(
    sequence: &SequenceRecord,
    config: &ModelConfig,
    stats: &NormStats,
    predictor: &mut P,
    average: bool,
) -> Result<Trajectory, CliError> {
    if sequence.len() < config.num_frames {
        return Err(CliError::data(format!(
            "sequence {} has {} frames, the model needs {}",
            sequence.sequence_id,
            sequence.len(),
            config.num_frames
        )));
    }
    let frames = prepare_frames(&sequence.frames, config, stats)?;
    Ok(infer_trajectory(
        &frames, config, stats, predictor, average,
    )?)
}

pub fn run(ctx: &Context, args: &InferArgs) -> Result<(PathBuf, Trajectory), CliError> {
    let ckpt = ctx.load_checkpoint(&args.checkpoint)?;
    let sequence = ctx.load_sequence(&args.sequence, &ckpt.config)?;
    let mut predictor = ThreadedPredictor {
        params: &ckpt.params,
        config: &ckpt.config,
        threads: ctx.threads(),
    };
    let trajectory = reconstruct(
        &sequence,
        &ckpt.config,
        &ckpt.stats,
        &mut predictor,
        args.average,
    )?;
    let path = or_default(&args.output, || {
        ctx.output_dir()
            .join("predictions")
            .join(format!("{}.txt", args.sequence))
    });
    kitti::write_poses(&path, &trajectory)?;
    ctx.progress(format!(
        "wrote {} poses to {}",
        trajectory.len(),
        path.display()
    ));
    Ok((path, trajectory))
}
