use std::collections::VecDeque;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use stvo_core::data::{prepare_frames, Image};
use stvo_core::geometry::euler_to_matrix;
use stvo_core::inference::{MotionPredictor, NetworkPredictor};
use stvo_core::model::{Clip, MOTION_DIM};
use stvo_core::synthetic::{generate, MotionKind, SynthSpec};
use stvo_core::Pose;

use super::{or_default, write_file, Context};
use crate::error::CliError;
use crate::report::{BenchReport, TimingStat};

#[derive(Debug, Clone)]
pub struct BenchArgs {
    pub checkpoint: PathBuf,
    /// Dataset sequence to stream; a synthetic one when absent.
    pub sequence: Option<String>,
    pub clips: usize,
    /// Defaults to `<output dir>/bench.json`.
    pub output: Option<PathBuf>,
}

fn millis(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

/// Streams frames through a buffer of the last `N_f - 1` frames, timing
/// per clip the preparation of the new frame, the forward pass and the
/// conversion of the newest motion into a pose.
pub fn run(ctx: &Context, args: &BenchArgs) -> Result<BenchReport, CliError> {
    if args.clips == 0 {
        return Err(CliError::usage("bench needs at least one clip"));
    }
    let ckpt = ctx.load_checkpoint(&args.checkpoint)?;
    let config = &ckpt.config;
    let nf = config.num_frames;
    let frames: Vec<Image> = match &args.sequence {
        Some(id) => ctx.load_sequence(id, config)?.frames,
        None => {
            let mut spec = SynthSpec::new(
                MotionKind::Straight { step: 1.0 },
                (args.clips + nf - 1).min(64).max(nf),
                config.height,
                config.width,
            );
            spec.channels = config.channels;
            generate(&spec, "bench")?.frames
        }
    };
    if frames.len() < nf {
        return Err(CliError::data(format!(
            "bench needs at least {nf} frames, got {}",
            frames.len()
        )));
    }

    let mut predictor = NetworkPredictor {
        params: &ckpt.params,
        config,
    };
    let mut buffer: VecDeque<Arc<[f32]>> =
        prepare_frames(&frames[..nf - 1], config, &ckpt.stats)?.into();
    let mut pose = Pose::identity();
    let (mut pre, mut inf, mut post) = (Vec::new(), Vec::new(), Vec::new());
    for k in 0..args.clips {
        let frame = &frames[(nf - 1 + k) % frames.len()];

        let t = Instant::now();
        let prepared = prepare_frames(std::slice::from_ref(frame), config, &ckpt.stats)?;
        buffer.extend(prepared);
        let clip = Clip::new(
            buffer.iter().cloned().collect(),
            config.channels,
            config.height,
            config.width,
        )?;
        buffer.pop_front();
        pre.push(millis(t));

        let t = Instant::now();
        let out = predictor.predict(&clip, k)?;
        inf.push(millis(t));

        let t = Instant::now();
        let newest = &out[out.len() - MOTION_DIM..];
        let motion = ckpt.stats.denormalize_target(newest);
        pose = pose * euler_to_matrix(&motion);
        post.push(millis(t));
    }
    std::hint::black_box(pose);

    let report = BenchReport {
        clips: args.clips,
        threads: 1,
        preprocessing: TimingStat::from_samples(&pre),
        inference: TimingStat::from_samples(&inf),
        postprocessing: TimingStat::from_samples(&post),
    };
    let path = or_default(&args.output, || ctx.output_dir().join("bench.json"));
    write_file(
        &path,
        &serde_json::to_string_pretty(&report).expect("report serializes"),
    )?;
    Ok(report)
}
