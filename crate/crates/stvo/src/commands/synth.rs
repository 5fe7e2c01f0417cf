use std::path::PathBuf;

use stvo_core::synthetic::{generate, MotionKind, SynthSpec};

use super::{write_file, Context};
use crate::config::RunConfig;
use crate::error::CliError;
use crate::kitti::DatasetLayout;

#[derive(Debug, Clone)]
pub struct SynthArgs {
    /// Dataset root to write the KITTI layout into.
    pub root: PathBuf,
    pub kind: MotionKind,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    /// Sequence ids; sequence `i` uses seed `seed + i`.
    pub ids: Vec<String>,
    pub seed: u64,
    pub jitter: f64,
    /// Also write a run configuration that trains and tests on the new data.
    pub config_out: Option<PathBuf>,
}

pub fn run(ctx: &Context, args: &SynthArgs) -> Result<Vec<PathBuf>, CliError> {
    if args.ids.is_empty() {
        return Err(CliError::usage("no sequence ids given"));
    }
    if !(0.0..=1.0).contains(&args.jitter) {
        return Err(CliError::usage("jitter must be in [0, 1]"));
    }
    let layout = DatasetLayout::new(args.root.clone());
    let mut written = Vec::new();
    for (i, id) in args.ids.iter().enumerate() {
        let mut spec = SynthSpec::new(args.kind, args.frames, args.height, args.width);
        spec.seed = args.seed.wrapping_add(i as u64);
        spec.jitter = args.jitter;
        let seq = generate(&spec, id)?;
        layout.save_sequence(&seq)?;
        ctx.progress(format!("sequence {id}: {} frames", seq.len()));
        written.push(layout.image_dir(id));
    }
    if let Some(path) = &args.config_out {
        let mut cfg: RunConfig = ctx.config.clone();
        cfg.data.root = std::path::absolute(&args.root).map_err(|e| CliError::io(&args.root, e))?;
        cfg.data.train_sequences = args.ids.clone();
        cfg.data.test_sequences = args.ids.clone();
        cfg.model.height = args.height;
        cfg.model.width = args.width;
        cfg.validate()?;
        write_file(path, &cfg.to_toml())?;
    }
    Ok(written)
}
