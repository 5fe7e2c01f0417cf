use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use stvo_core::data::{prepare_frames, Image};
use stvo_core::model::{attention_rollout, Clip, ModelConfig, RelevanceMap};

use super::{or_default, write_file, Context};
use crate::error::CliError;
use crate::kitti;

#[derive(Debug, Clone)]
pub struct RolloutArgs {
    pub checkpoint: PathBuf,
    pub sequence: String,
    /// First frame of the clip.
    pub start: usize,
    /// Defaults to `<output dir>/rollout/<sequence>_<start>`.
    pub output_dir: Option<PathBuf>,
    /// Also write a heat-map PNG per frame.
    pub png: bool,
}

/// One text row per grid row; values round-trip exactly.
pub fn format_grid(values: &[f64], rows: usize, cols: usize) -> String {
    let mut out = String::new();
    for r in 0..rows {
        let line: Vec<String> = values[r * cols..(r + 1) * cols]
            .iter()
            .map(|v| format!("{v:e}"))
            .collect();
        writeln!(out, "{}", line.join(" ")).unwrap();
    }
    out
}

/// Nearest-patch upsampling of one frame's map to pixel resolution.
pub fn upsample(map: &RelevanceMap, t: usize, config: &ModelConfig) -> Vec<f64> {
    let grid = map.frame(t);
    let p = config.patch_size;
    let mut out = Vec::with_capacity(config.height * config.width);
    for y in 0..config.height {
        for x in 0..config.width {
            out.push(grid[(y / p) * map.grid_width + x / p]);
        }
    }
    out
}

/// Input frame in grey with the relevance (scaled to its maximum) in red.
fn overlay_image(frame: &Image, pixels: &[f64]) -> Image {
    let (h, w) = (frame.height, frame.width);
    let max = pixels.iter().cloned().fold(0.0f64, f64::max);
    let scale = if max > 0.0 { 1.0 / max } else { 0.0 };
    let mut data = vec![0.0f32; 3 * h * w];
    for i in 0..h * w {
        let grey = (0..frame.channels)
            .map(|c| frame.data[c * h * w + i])
            .sum::<f32>()
            / frame.channels as f32;
        let heat = (pixels[i] * scale) as f32;
        data[i] = 0.5 * grey + 0.5 * heat;
        data[h * w + i] = 0.5 * grey;
        data[2 * h * w + i] = 0.5 * grey;
    }
    Image::new(3, h, w, data).expect("sized above")
}

pub fn write_maps(
    dir: &Path,
    map: &RelevanceMap,
    config: &ModelConfig,
    frames: Option<&[Image]>,
) -> Result<Vec<PathBuf>, CliError> {
    let mut written = Vec::new();
    for t in 0..map.num_frames {
        let grid = dir.join(format!("frame{t}_grid.txt"));
        write_file(
            &grid,
            &format_grid(map.frame(t), map.grid_height, map.grid_width),
        )?;
        let pixels = upsample(map, t, config);
        let overlay = dir.join(format!("frame{t}_overlay.txt"));
        write_file(&overlay, &format_grid(&pixels, config.height, config.width))?;
        written.extend([grid, overlay]);
        if let Some(frames) = frames {
            let png = dir.join(format!("frame{t}_overlay.png"));
            kitti::save_image(&png, &overlay_image(&frames[t], &pixels))?;
            written.push(png);
        }
    }
    Ok(written)
}

pub fn run(ctx: &Context, args: &RolloutArgs) -> Result<RelevanceMap, CliError> {
    let ckpt = ctx.load_checkpoint(&args.checkpoint)?;
    let config = &ckpt.config;
    let sequence = ctx.load_sequence(&args.sequence, config)?;
    let end = args.start + config.num_frames;
    if end > sequence.len() {
        return Err(CliError::data(format!(
            "clip {}..{} is outside sequence {} of {} frames",
            args.start,
            end,
            args.sequence,
            sequence.len()
        )));
    }
    let raw = &sequence.frames[args.start..end];
    let frames = prepare_frames(raw, config, &ckpt.stats)?;
    let clip = Clip::new(frames, config.channels, config.height, config.width)?;
    let map = attention_rollout(&clip, &ckpt.params, config)?;
    let dir = or_default(&args.output_dir, || {
        ctx.output_dir()
            .join("rollout")
            .join(format!("{}_{}", args.sequence, args.start))
    });
    let written = write_maps(&dir, &map, config, args.png.then_some(raw))?;
    ctx.progress(format!(
        "wrote {} files to {}",
        written.len(),
        dir.display()
    ));
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn upsampling_repeats_patch_values() {
        let config = ModelConfig::tiny();
        let map = RelevanceMap {
            num_frames: 1,
            grid_height: 2,
            grid_width: 2,
            values: vec![0.1, 0.2, 0.3, 0.4],
        };
        let px = upsample(&map, 0, &config);
        assert_eq!(px.len(), 32 * 32);
        assert_eq!(px[0], 0.1);
        assert_eq!(px[15], 0.1);
        assert_eq!(px[16], 0.2);
        assert_eq!(px[16 * 32], 0.3);
        assert_eq!(px[32 * 32 - 1], 0.4);
        assert_eq!(format_grid(&map.values, 2, 2).lines().count(), 2);
    }
}
