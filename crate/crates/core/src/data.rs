//! Frames, normalization statistics and stride-1 clip sampling.

use alloc::boxed::Box;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::geometry::{matrix_to_euler, relative_motion, MotionVector, Trajectory};
use crate::model::{Clip, ModelConfig, ModelError, MOTION_DIM};
use crate::real::Real;

/// Standard deviations below this are treated as degenerate.
pub const MIN_STD: f64 = 1e-12;

/// Fraction of training clips held out for validation.
pub const DEFAULT_VAL_FRACTION: f64 = 0.10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DataError {
    #[error("image has no pixels")]
    EmptyImage,
    #[error("image buffer holds {actual} values, expected {expected}")]
    ImageShape { expected: usize, actual: usize },
    #[error("degenerate standard deviation for {components:?}")]
    DegenerateStd {
        components: Vec<StatComponent>,
        stats: Box<NormStats>,
    },
    #[error("sequence {sequence_id} has {frames} frames, fewer than the {needed} a clip needs")]
    TooShort {
        sequence_id: String,
        frames: usize,
        needed: usize,
    },
    #[error("sequence {0} has no ground truth")]
    MissingGroundTruth(String),
    #[error("ground truth has {poses} poses for {frames} frames")]
    GroundTruthLength { frames: usize, poses: usize },
    #[error("no training sequences with ground truth")]
    NoTrainingData,
    #[error("channel count {actual} does not match the expected {expected}")]
    ChannelMismatch { expected: usize, actual: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Which statistic was degenerate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StatComponent {
    ImageChannel(usize),
    Target(usize),
}

/// Channel-first image with intensities scaled to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(
        channels: usize,
        height: usize,
        width: usize,
        data: Vec<f32>,
    ) -> Result<Self, DataError> {
        let expected = channels * height * width;
        if data.len() != expected {
            return Err(DataError::ImageShape {
                expected,
                actual: data.len(),
            });
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }
}

/// Half-pixel source coordinate and interpolation taps along one axis.
fn taps(out_len: usize, in_len: usize) -> Vec<(usize, usize, f64)> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|d| {
            let src = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (in_len - 1) as f64);
            let i0 = libm::floor(src) as usize;
            let i1 = (i0 + 1).min(in_len - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

/// Bilinear resampling with half-pixel centers and edge clamping.
pub fn resize_frame(image: &Image, height: usize, width: usize) -> Result<Image, DataError> {
    if image.data.is_empty() || image.height == 0 || image.width == 0 || height == 0 || width == 0 {
        return Err(DataError::EmptyImage);
    }
    if image.height == height && image.width == width {
        return Ok(image.clone());
    }
    let ys = taps(height, image.height);
    let xs = taps(width, image.width);
    let mut data = Vec::with_capacity(image.channels * height * width);
    for c in 0..image.channels {
        let plane = image.plane(c);
        for &(y0, y1, wy) in &ys {
            let r0 = &plane[y0 * image.width..(y0 + 1) * image.width];
            let r1 = &plane[y1 * image.width..(y1 + 1) * image.width];
            for &(x0, x1, wx) in &xs {
                let top = r0[x0] as f64 * (1.0 - wx) + r0[x1] as f64 * wx;
                let bottom = r1[x0] as f64 * (1.0 - wx) + r1[x1] as f64 * wx;
                data.push((top * (1.0 - wy) + bottom * wy) as f32);
            }
        }
    }
    Image::new(image.channels, height, width, data)
}

/// Per-channel image statistics and per-component target statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub image_mean: Vec<f64>,
    pub image_std: Vec<f64>,
    pub target_mean: [f64; MOTION_DIM],
    pub target_std: [f64; MOTION_DIM],
}

impl NormStats {
    /// Statistics that leave data unchanged.
    pub fn identity(channels: usize) -> Self {
        Self {
            image_mean: vec![0.0; channels],
            image_std: vec![1.0; channels],
            target_mean: [0.0; MOTION_DIM],
            target_std: [1.0; MOTION_DIM],
        }
    }

    pub fn degenerate_components(&self) -> Vec<StatComponent> {
        let mut out: Vec<_> = self
            .image_std
            .iter()
            .enumerate()
            .filter(|(_, s)| !(**s >= MIN_STD))
            .map(|(c, _)| StatComponent::ImageChannel(c))
            .collect();
        out.extend(
            self.target_std
                .iter()
                .enumerate()
                .filter(|(_, s)| !(**s >= MIN_STD))
                .map(|(i, _)| StatComponent::Target(i)),
        );
        out
    }

    /// Replaces every degenerate standard deviation by one, so the component
    /// is only mean-shifted. Returns the replaced components.
    pub fn with_unit_fallback(mut self) -> (Self, Vec<StatComponent>) {
        let degenerate = self.degenerate_components();
        for c in &degenerate {
            match *c {
                StatComponent::ImageChannel(i) => self.image_std[i] = 1.0,
                StatComponent::Target(i) => self.target_std[i] = 1.0,
            }
        }
        (self, degenerate)
    }

    pub fn normalize_target(&self, motion: &MotionVector) -> [f64; MOTION_DIM] {
        let raw = motion.to_array();
        core::array::from_fn(|i| (raw[i] - self.target_mean[i]) / self.target_std[i])
    }

    pub fn denormalize_target(&self, values: &[f64]) -> MotionVector {
        MotionVector::from_array(core::array::from_fn(|i| {
            values[i] * self.target_std[i] + self.target_mean[i]
        }))
    }

    pub fn normalize_image(&self, image: &Image) -> Result<Vec<f32>, DataError> {
        if image.channels != self.image_mean.len() {
            return Err(DataError::ChannelMismatch {
                expected: self.image_mean.len(),
                actual: image.channels,
            });
        }
        let n = image.height * image.width;
        let mut out = Vec::with_capacity(image.data.len());
        for c in 0..image.channels {
            let (m, s) = (self.image_mean[c], self.image_std[c]);
            out.extend(
                image.data[c * n..(c + 1) * n]
                    .iter()
                    .map(|&v| ((v as f64 - m) / s) as f32),
            );
        }
        Ok(out)
    }
}

/// One recorded sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceRecord {
    pub sequence_id: String,
    pub frames: Vec<Image>,
    pub ground_truth: Option<Trajectory>,
}

impl SequenceRecord {
    pub fn new(
        sequence_id: impl Into<String>,
        frames: Vec<Image>,
        ground_truth: Option<Trajectory>,
    ) -> Result<Self, DataError> {
        if let Some(gt) = &ground_truth {
            if gt.len() != frames.len() {
                return Err(DataError::GroundTruthLength {
                    frames: frames.len(),
                    poses: gt.len(),
                });
            }
        }
        Ok(Self {
            sequence_id: sequence_id.into(),
            frames,
            ground_truth,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// A clip with its normalized targets; row `j` of `targets` is the motion
/// from frame `start_frame + j` to `start_frame + j + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipSample<T> {
    pub clip: Clip<T>,
    pub targets: Vec<f64>,
    pub sequence_id: String,
    pub start_frame: usize,
}

impl<T: Real> ClipSample<T> {
    pub fn cast<U: Real>(&self) -> ClipSample<U> {
        ClipSample {
            clip: self.clip.cast(),
            targets: self.targets.clone(),
            sequence_id: self.sequence_id.clone(),
            start_frame: self.start_frame,
        }
    }
}

fn ground_truth_motions(gt: &Trajectory) -> impl Iterator<Item = MotionVector> + '_ {
    gt.poses()
        .windows(2)
        .map(|w| matrix_to_euler(&relative_motion(&w[0], &w[1])).motion)
}

/// Mean and population standard deviation of every image channel and every
/// relative-motion component over the sequences that have ground truth and
/// at least `num_frames` frames.
pub fn compute_norm_stats(
    sequences: &[SequenceRecord],
    num_frames: usize,
) -> Result<NormStats, DataError> {
    let used: Vec<&SequenceRecord> = sequences
        .iter()
        .filter(|s| s.ground_truth.is_some() && s.len() >= num_frames.max(2))
        .collect();
    let channels = used
        .iter()
        .flat_map(|s| s.frames.first())
        .map(|f| f.channels)
        .next()
        .ok_or(DataError::NoTrainingData)?;

    let mut sum = vec![0.0f64; channels];
    let mut count = vec![0usize; channels];
    for f in used.iter().flat_map(|s| &s.frames) {
        if f.channels != channels {
            return Err(DataError::ChannelMismatch {
                expected: channels,
                actual: f.channels,
            });
        }
        for c in 0..channels {
            sum[c] += f.plane(c).iter().map(|&v| v as f64).sum::<f64>();
            count[c] += f.height * f.width;
        }
    }
    let image_mean: Vec<f64> = sum.iter().zip(&count).map(|(s, &n)| s / n as f64).collect();
    let mut sq = vec![0.0f64; channels];
    for f in used.iter().flat_map(|s| &s.frames) {
        for (c, acc) in sq.iter_mut().enumerate() {
            let m = image_mean[c];
            *acc += f
                .plane(c)
                .iter()
                .map(|&v| (v as f64 - m) * (v as f64 - m))
                .sum::<f64>();
        }
    }
    let image_std = sq
        .iter()
        .zip(&count)
        .map(|(s, &n)| libm::sqrt(s / n as f64))
        .collect();

    let motions: Vec<[f64; 6]> = used
        .iter()
        .flat_map(|s| ground_truth_motions(s.ground_truth.as_ref().unwrap()))
        .map(|m| m.to_array())
        .collect();
    let n = motions.len() as f64;
    let target_mean: [f64; 6] =
        core::array::from_fn(|i| motions.iter().map(|m| m[i]).sum::<f64>() / n);
    let target_std: [f64; 6] = core::array::from_fn(|i| {
        let var = motions
            .iter()
            .map(|m| (m[i] - target_mean[i]) * (m[i] - target_mean[i]))
            .sum::<f64>()
            / n;
        libm::sqrt(var)
    });

    let stats = NormStats {
        image_mean,
        image_std,
        target_mean,
        target_std,
    };
    let degenerate = stats.degenerate_components();
    if degenerate.is_empty() {
        Ok(stats)
    } else {
        Err(DataError::DegenerateStd {
            components: degenerate,
            stats: Box::new(stats),
        })
    }
}

/// Resizes every frame to the model's input size and normalizes it. The
/// returned buffers are shared by all clips of the sequence.
pub fn prepare_frames(
    frames: &[Image],
    config: &ModelConfig,
    stats: &NormStats,
) -> Result<Vec<Arc<[f32]>>, DataError> {
    frames
        .iter()
        .map(|f| {
            if f.channels != config.channels {
                return Err(DataError::ChannelMismatch {
                    expected: config.channels,
                    actual: f.channels,
                });
            }
            let resized = resize_frame(f, config.height, config.width)?;
            Ok(Arc::from(stats.normalize_image(&resized)?))
        })
        .collect()
}

/// Stride-1 windows of `config.num_frames` prepared frames.
pub fn clip_windows(
    frames: &[Arc<[f32]>],
    config: &ModelConfig,
) -> Result<Vec<Clip<f32>>, DataError> {
    if frames.len() < config.num_frames {
        return Err(DataError::TooShort {
            sequence_id: String::new(),
            frames: frames.len(),
            needed: config.num_frames,
        });
    }
    frames
        .windows(config.num_frames)
        .map(|w| {
            Clip::new(w.to_vec(), config.channels, config.height, config.width).map_err(Into::into)
        })
        .collect()
}

/// Every stride-1 clip of a sequence with its normalized targets.
pub fn sample_clips(
    sequence: &SequenceRecord,
    config: &ModelConfig,
    stats: &NormStats,
) -> Result<Vec<ClipSample<f32>>, DataError> {
    config.validate()?;
    let nf = config.num_frames;
    if sequence.len() < nf {
        return Err(DataError::TooShort {
            sequence_id: sequence.sequence_id.clone(),
            frames: sequence.len(),
            needed: nf,
        });
    }
    let gt = sequence
        .ground_truth
        .as_ref()
        .ok_or_else(|| DataError::MissingGroundTruth(sequence.sequence_id.clone()))?;
    let targets: Vec<[f64; 6]> = ground_truth_motions(gt)
        .map(|m| stats.normalize_target(&m))
        .collect();
    let frames = prepare_frames(&sequence.frames, config, stats)?;
    let clips = clip_windows(&frames, config)?;
    Ok(clips
        .into_iter()
        .enumerate()
        .map(|(start, clip)| ClipSample {
            clip,
            targets: targets[start..start + nf - 1]
                .iter()
                .flatten()
                .copied()
                .collect(),
            sequence_id: sequence.sequence_id.clone(),
            start_frame: start,
        })
        .collect())
}

/// Seeded random partition: `round(fraction * n)` samples go to validation,
/// the rest to training in shuffled order.
pub fn split_train_val<S>(samples: Vec<S>, fraction: f64, seed: u64) -> (Vec<S>, Vec<S>) {
    let n = samples.len();
    let n_val = libm::round(fraction * n as f64) as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut slots: Vec<Option<S>> = samples.into_iter().map(Some).collect();
    let mut take = |i: usize| slots[i].take().expect("index visited once");
    let val: Vec<S> = order[..n_val].iter().map(|&i| take(i)).collect();
    let train: Vec<S> = order[n_val..].iter().map(|&i| take(i)).collect();
    (train, val)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{accumulate, euler_to_matrix, Pose};

    fn gray_sequence(frames: usize, value: f32) -> SequenceRecord {
        let imgs = (0..frames).map(|_| Image::filled(3, 4, 6, value)).collect();
        let gt = accumulate(
            &Pose::identity(),
            &vec![Pose::from_translation(0.0, 0.0, 1.0); frames - 1],
        );
        SequenceRecord::new("00", imgs, Some(gt)).unwrap()
    }

    #[test]
    fn resize_constant_and_identity() {
        let img = Image::filled(3, 10, 14, 0.25);
        let out = resize_frame(&img, 192, 640).unwrap();
        assert_eq!((out.height, out.width), (192, 640));
        assert!(out.data.iter().all(|&v| v == 0.25));

        let ramp: Vec<f32> = (0..3 * 192 * 640)
            .map(|i| (i % 977) as f32 / 977.0)
            .collect();
        let img = Image::new(3, 192, 640, ramp).unwrap();
        let same = resize_frame(&img, 192, 640).unwrap();
        assert!(img
            .data
            .iter()
            .zip(&same.data)
            .all(|(a, b)| (a - b).abs() as f64 <= 1e-12));
        assert_eq!(
            resize_frame(&Image::filled(3, 0, 0, 0.0), 4, 4),
            Err(DataError::EmptyImage)
        );
    }

    #[test]
    fn downscale_ramp_hits_midpoints() {
        // Row-constant ramp v(x) = x over 8 columns, halved to 4.
        let data: Vec<f32> = (0..2 * 8).map(|i| (i % 8) as f32).collect();
        let img = Image::new(1, 2, 8, data).unwrap();
        let out = resize_frame(&img, 1, 4).unwrap();
        assert_eq!(out.data, [0.5, 2.5, 4.5, 6.5]);
    }

    #[test]
    fn gray_sequence_has_degenerate_stats() {
        match compute_norm_stats(&[gray_sequence(4, 0.5)], 2) {
            Err(DataError::DegenerateStd { components, stats }) => {
                assert!(stats.image_mean.iter().all(|&m| (m - 0.5).abs() < 1e-12));
                assert!(components.contains(&StatComponent::ImageChannel(0)));
                // A pure-forward trajectory: t_z mean is the step, std zero.
                assert!((stats.target_mean[5] - 1.0).abs() < 1e-12);
                assert!(components.contains(&StatComponent::Target(5)));
                let (fixed, replaced) = stats.with_unit_fallback();
                assert_eq!(replaced, components);
                assert!(fixed.degenerate_components().is_empty());
            }
            other => panic!("expected DegenerateStd, got {other:?}"),
        }
    }

    #[test]
    fn stats_by_direct_summation() {
        // Channel 0 pixels {0, 1, 1, 0} over two 1x2 frames; channel 1 {0.2 x4}
        // except one 0.6.
        let f0 = Image::new(2, 1, 2, vec![0.0, 1.0, 0.2, 0.2]).unwrap();
        let f1 = Image::new(2, 1, 2, vec![1.0, 0.0, 0.2, 0.6]).unwrap();
        let gt = Trajectory::from_poses(vec![
            Pose::identity(),
            euler_to_matrix(&MotionVector::new([0.1, 0.2, 0.3], [1.0, 2.0, 3.0])),
        ])
        .unwrap();
        let seq = SequenceRecord::new("x", vec![f0, f1], Some(gt.clone())).unwrap();
        let err = compute_norm_stats(&[seq], 2).unwrap_err();
        let DataError::DegenerateStd { stats, .. } = err else {
            panic!("single motion has zero target spread")
        };
        assert!((stats.image_mean[0] - 0.5).abs() < 1e-12);
        assert!((stats.image_std[0] - 0.5).abs() < 1e-12);
        let m1 = (0.2 * 3.0 + 0.6) / 4.0;
        let v1 = (3.0 * (0.2f64 - m1).powi(2) + (0.6f64 - m1).powi(2)) / 4.0;
        assert!((stats.image_mean[1] - m1).abs() < 1e-7);
        assert!((stats.image_std[1] - v1.sqrt()).abs() < 1e-7);
        assert!((stats.target_mean[0] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn clip_counts_and_overlap() {
        let config = ModelConfig {
            num_frames: 3,
            channels: 3,
            height: 4,
            width: 6,
            patch_size: 2,
            ..ModelConfig::tiny()
        };
        let seq = gray_sequence(10, 0.3);
        let stats = NormStats::identity(3);
        let clips = sample_clips(&seq, &config, &stats).unwrap();
        assert_eq!(clips.len(), 8);
        for (i, c) in clips.iter().enumerate() {
            assert_eq!(c.start_frame, i);
            assert_eq!(c.targets.len(), 12);
        }
        for w in clips.windows(2) {
            for j in 0..2 {
                assert!(Arc::ptr_eq(
                    &w[0].clip.frames()[j + 1],
                    &w[1].clip.frames()[j]
                ));
            }
        }
        let exact = sample_clips(&gray_sequence(3, 0.3), &config, &stats).unwrap();
        assert_eq!(exact.len(), 1);
        assert!(matches!(
            sample_clips(&gray_sequence(2, 0.3), &config, &stats),
            Err(DataError::TooShort { .. })
        ));
    }

    #[test]
    fn targets_denormalize_to_raw_motion() {
        let config = ModelConfig {
            height: 4,
            width: 6,
            patch_size: 2,
            ..ModelConfig::tiny()
        };
        let motions: Vec<Pose> = (0..5)
            .map(|i| {
                euler_to_matrix(&MotionVector::new(
                    [0.01 * i as f64, -0.02, 0.05],
                    [0.1, 0.0, 1.0 + 0.1 * i as f64],
                ))
            })
            .collect();
        let gt = accumulate(&Pose::identity(), &motions);
        let frames = (0..6).map(|_| Image::filled(3, 4, 6, 0.1)).collect();
        let seq = SequenceRecord::new("s", frames, Some(gt)).unwrap();
        let stats = NormStats {
            image_mean: vec![0.1; 3],
            image_std: vec![2.0; 3],
            target_mean: [0.1, -0.3, 0.2, 0.5, 0.1, 1.0],
            target_std: [0.5, 2.0, 0.1, 3.0, 1.0, 0.25],
        };
        let samples = sample_clips(&seq, &config, &stats).unwrap();
        for s in &samples {
            let raw = stats.denormalize_target(&s.targets);
            let expected = matrix_to_euler(&motions[s.start_frame]).motion;
            for (a, b) in raw.to_array().iter().zip(expected.to_array()) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn split_sizes_and_determinism() {
        let (train, val) = split_train_val((0..100).collect::<Vec<_>>(), 0.1, 42);
        assert_eq!((train.len(), val.len()), (90, 10));
        let mut all: Vec<_> = train.iter().chain(&val).copied().collect();
        all.sort();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        let again = split_train_val((0..100).collect::<Vec<_>>(), 0.1, 42);
        assert_eq!((train, val), again);

        let (train, val) = split_train_val(vec![7], 0.1, 1);
        assert_eq!((train, val), (vec![7], vec![]));
    }

    #[test]
    fn ground_truth_length_is_checked() {
        let gt = Trajectory::from_poses(vec![Pose::identity()]).unwrap();
        let frames = vec![Image::filled(3, 2, 2, 0.0); 2];
        assert!(matches!(
            SequenceRecord::new("a", frames, Some(gt)),
            Err(DataError::GroundTruthLength { .. })
        ));
    }
}
