//! KITTI odometry pose files and directory layout.
//!
//! A dataset root holds `sequences/<id>/image_2/<frame>.png` and
//! `poses/<id>.txt`, one pose per line as the twelve row-major entries of
//! the upper 3x4 block of the camera-to-world matrix.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use stvo_core::data::{resize_frame, Image, SequenceRecord};
use stvo_core::geometry::{orthonormality_error, orthonormalize, Pose, Trajectory};
use stvo_core::nalgebra::{Matrix3, Vector3};
use thiserror::Error;

/// Rotations further than this from orthonormal are rejected.
pub const MAX_ORTHONORMALITY_ERROR: f64 = 1e-4;
/// Rotations closer than this are kept as written.
pub const EXACT_ORTHONORMALITY: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum KittiError {
    #[error("{path}:{line}: {reason}")]
    MalformedLine {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("{path}:{line}: rotation is {error:.3e} from orthonormal")]
    InvalidRotation {
        path: String,
        line: usize,
        error: f64,
    },
    #[error("{path}: no poses")]
    Empty { path: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {reason}")]
    Image { path: String, reason: String },
    #[error("sequence {id}: {frames} images but {poses} poses")]
    LengthMismatch {
        id: String,
        frames: usize,
        poses: usize,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> KittiError + '_ {
    move |source| KittiError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Parses pose text; `origin` names the source in errors.
pub fn parse_poses(text: &str, origin: &str) -> Result<Trajectory, KittiError> {
    let mut poses = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |reason: String| KittiError::MalformedLine {
            path: origin.to_string(),
            line: line_no,
            reason,
        };
        let values: Vec<f64> = line
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>()
                    .map_err(|_| malformed(format!("not a number: {tok:?}")))
            })
            .collect::<Result<_, _>>()?;
        if values.len() != 12 {
            return Err(malformed(format!(
                "expected 12 values, found {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(malformed("non-finite value".into()));
        }
        let rotation = Matrix3::new(
            values[0], values[1], values[2], values[4], values[5], values[6], values[8], values[9],
            values[10],
        );
        let translation = Vector3::new(values[3], values[7], values[11]);
        let error = orthonormality_error(&rotation);
        let rotation = if error <= EXACT_ORTHONORMALITY {
            rotation
        } else if error <= MAX_ORTHONORMALITY_ERROR {
            orthonormalize(&rotation)
        } else {
            return Err(KittiError::InvalidRotation {
                path: origin.to_string(),
                line: line_no,
                error,
            });
        };
        poses.push(Pose::new_unchecked(rotation, translation));
    }
    if poses.is_empty() {
        return Err(KittiError::Empty {
            path: origin.to_string(),
        });
    }
    Ok(Trajectory::from_poses(poses).expect("nonempty"))
}

/// Pose text with shortest round-trip formatting of every value.
pub fn format_poses(trajectory: &Trajectory) -> String {
    let mut out = String::new();
    for pose in trajectory.poses() {
        let row = pose.to_row_major_3x4();
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            write!(out, "{v:e}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn read_poses(path: &Path) -> Result<Trajectory, KittiError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_poses(&text, &path.display().to_string())
}

pub fn write_poses(path: &Path, trajectory: &Trajectory) -> Result<(), KittiError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, format_poses(trajectory)).map_err(io_err(path))
}

/// Paths of one dataset root.
#[derive(Debug, Clone)]
pub struct DatasetLayout {
    pub root: PathBuf,
}

impl DatasetLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn image_dir(&self, id: &str) -> PathBuf {
        self.root.join("sequences").join(id).join("image_2")
    }

    pub fn image_path(&self, id: &str, frame: usize) -> PathBuf {
        self.image_dir(id).join(format!("{frame:06}.png"))
    }

    pub fn poses_path(&self, id: &str) -> PathBuf {
        self.root.join("poses").join(format!("{id}.txt"))
    }

    /// PNG files of a sequence in name order.
    pub fn image_files(&self, id: &str) -> Result<Vec<PathBuf>, KittiError> {
        let dir = self.image_dir(id);
        let mut files: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(io_err(&dir))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
            .collect();
        files.sort();
        Ok(files)
    }

    /// Loads a sequence, resizing frames to `height x width` on the way in.
    /// Ground truth is attached when the pose file exists.
    pub fn load_sequence(
        &self,
        id: &str,
        height: usize,
        width: usize,
    ) -> Result<SequenceRecord, KittiError> {
        let files = self.image_files(id)?;
        let frames = std::thread::scope(|s| {
            let workers = std::thread::available_parallelism().map_or(1, |n| n.get());
            let chunk = files.len().div_ceil(workers).max(1);
            let handles: Vec<_> = files
                .chunks(chunk)
                .map(|part| {
                    s.spawn(move || {
                        part.iter()
                            .map(|p| load_image(p, height, width))
                            .collect::<Result<Vec<_>, _>>()
                    })
                })
                .collect();
            let mut frames = Vec::with_capacity(files.len());
            for h in handles {
                frames.extend(h.join().expect("image loader panicked")?);
            }
            Ok::<_, KittiError>(frames)
        })?;
        let poses_path = self.poses_path(id);
        let ground_truth = if poses_path.exists() {
            let gt = read_poses(&poses_path)?;
            if gt.len() != frames.len() {
                return Err(KittiError::LengthMismatch {
                    id: id.to_string(),
                    frames: frames.len(),
                    poses: gt.len(),
                });
            }
            Some(gt)
        } else {
            None
        };
        Ok(SequenceRecord::new(id, frames, ground_truth).expect("lengths checked"))
    }

    /// Writes frames as 8-bit PNG and the ground truth, if any.
    pub fn save_sequence(&self, sequence: &SequenceRecord) -> Result<(), KittiError> {
        let dir = self.image_dir(&sequence.sequence_id);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        for (i, frame) in sequence.frames.iter().enumerate() {
            save_image(&self.image_path(&sequence.sequence_id, i), frame)?;
        }
        if let Some(gt) = &sequence.ground_truth {
            write_poses(&self.poses_path(&sequence.sequence_id), gt)?;
        }
        Ok(())
    }
}

/// Reads a PNG as RGB in `[0, 1]` and resizes it bilinearly.
pub fn load_image(path: &Path, height: usize, width: usize) -> Result<Image, KittiError> {
    let err = |reason: String| KittiError::Image {
        path: path.display().to_string(),
        reason,
    };
    let rgb = image::open(path).map_err(|e| err(e.to_string()))?.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mut data = vec![0.0f32; 3 * h * w];
    for (i, px) in rgb.pixels().enumerate() {
        for c in 0..3 {
            data[c * h * w + i] = px[c] as f32 / 255.0;
        }
    }
    let img = Image::new(3, h, w, data).map_err(|e| err(e.to_string()))?;
    resize_frame(&img, height, width).map_err(|e| err(e.to_string()))
}

/// Writes an RGB (or single-channel, replicated) image as 8-bit PNG.
pub fn save_image(path: &Path, img: &Image) -> Result<(), KittiError> {
    let (h, w) = (img.height, img.width);
    let mut buf = image::RgbImage::new(w as u32, h as u32);
    for (i, px) in buf.pixels_mut().enumerate() {
        for c in 0..3 {
            let v = img.data[c.min(img.channels - 1) * h * w + i];
            px[c] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        }
    }
    buf.save(path).map_err(|e| KittiError::Image {
        path: path.display().to_string(),
        reason: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use stvo_core::geometry::{accumulate, euler_to_matrix, MotionVector};

    #[test]
    fn round_trip_is_bit_exact() {
        let motions: Vec<Pose> = (0..20)
            .map(|k| {
                euler_to_matrix(&MotionVector::new(
                    [0.01 * k as f64, -0.03, 0.1],
                    [0.3, -0.01, 1.0 / 3.0],
                ))
            })
            .collect();
        let traj = accumulate(&Pose::identity(), &motions);
        let back = parse_poses(&format_poses(&traj), "mem").unwrap();
        for (a, b) in traj.poses().iter().zip(back.poses()) {
            assert_eq!(a.to_row_major_3x4(), b.to_row_major_3x4());
        }
    }

    #[test]
    fn identity_line() {
        let t = parse_poses("1 0 0 0 0 1 0 0 0 0 1 0\n", "mem").unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.poses()[0], Pose::identity());
    }

    #[test]
    fn malformed_lines_are_reported() {
        let err = parse_poses("1 0 0 0 0 1 0 0 0 0 1 0\n1 0 0\n", "f.txt").unwrap_err();
        assert!(matches!(err, KittiError::MalformedLine { line: 2, .. }));
        let err = parse_poses("1 0 0 0 0 1 0 0 0 0 x 0\n", "f.txt").unwrap_err();
        assert!(matches!(err, KittiError::MalformedLine { line: 1, .. }));
        assert!(matches!(
            parse_poses("\n", "f"),
            Err(KittiError::Empty { .. })
        ));
    }

    #[test]
    fn rotation_tolerance_bands() {
        // Six-digit rounding of a rotation is repaired.
        let s = "9.999978e-01 5.272628e-04 -2.066935e-03 0 -5.296506e-04 9.999992e-01 -1.154865e-03 0 2.066324e-03 1.155958e-03 9.999971e-01 1\n";
        let t = parse_poses(s, "f").unwrap();
        assert!(t.poses()[0].orthonormality_error() < 1e-12);
        let err = parse_poses("2 0 0 0 0 1 0 0 0 0 1 0\n", "f").unwrap_err();
        assert!(matches!(err, KittiError::InvalidRotation { .. }));
    }
}
