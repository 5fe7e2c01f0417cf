//! KITTI odometry metrics and 7-DoF similarity alignment.

use alloc::vec::Vec;

use core::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

use crate::geometry::{relative_motion, Pose, Trajectory};

/// Subsequence lengths in metres for the segment errors.
pub const SEGMENT_LENGTHS: [f64; 8] = [100.0, 200.0, 300.0, 400.0, 500.0, 600.0, 700.0, 800.0];

/// Singular-value ratio below which the cross-covariance counts as rank
/// deficient.

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("trajectories have {pred} and {gt} poses")]
    LengthMismatch { pred: usize, gt: usize },
    #[error("need at least {needed} poses, got {actual}")]
    TooFewPoses { needed: usize, actual: usize },
    #[error("positions have no spread; alignment is undefined")]
    DegenerateGeometry,
}

fn check_lengths(pred: &Trajectory, gt: &Trajectory, needed: usize) -> Result<(), EvalError> {
    if pred.len() != gt.len() {
        return Err(EvalError::LengthMismatch {
            pred: pred.len(),
            gt: gt.len(),
        });
    }
    if pred.len() < needed {
        return Err(EvalError::TooFewPoses {
            needed,
            actual: pred.len(),
        });
    }
    Ok(())
}

/// `x -> scale * rotation * x + translation`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sim3Transform {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Sim3Transform {
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn apply_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p * self.scale + self.translation
    }

    /// Maps a camera pose: its centre is transformed, its orientation rotated.
    pub fn apply_pose(&self, pose: &Pose) -> Pose {
        Pose::new_unchecked(
            self.rotation * pose.rotation(),
            self.apply_point(pose.translation()),
        )
    }

    pub fn apply(&self, trajectory: &Trajectory) -> Trajectory {
        let poses = trajectory
            .poses()
            .iter()
            .map(|p| self.apply_pose(p))
            .collect();
        Trajectory::new(poses, trajectory.frame_index().to_vec()).expect("frame index is unchanged")
    }
}

/// Least-squares similarity mapping predicted positions onto ground truth
/// (Umeyama's closed form). For collinear positions the rotation about the
/// line is arbitrary but the residual and scale are not.
pub fn align_7dof(
    pred: &Trajectory,
    gt: &Trajectory,
) -> Result<(Sim3Transform, Trajectory), EvalError> {
    check_lengths(pred, gt, 3)?;
    let p: Vec<Vector3<f64>> = pred.positions().collect();
    let g: Vec<Vector3<f64>> = gt.positions().collect();
    let n = p.len() as f64;
    let mu_p = p.iter().sum::<Vector3<f64>>() / n;
    let mu_g = g.iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    let mut var_p = 0.0;
    for (pi, gi) in p.iter().zip(&g) {
        let dp = pi - mu_p;
        cov += (gi - mu_g) * dp.transpose();
        var_p += dp.norm_squared();
    }
    cov /= n;
    var_p /= n;
    if !(var_p > 0.0) || !cov.iter().all(|v| v.is_finite()) {
        return Err(EvalError::DegenerateGeometry);
    }
    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let sv = svd.singular_values;
    if !(sv.max() > 0.0) {
        return Err(EvalError::DegenerateGeometry);
    }
    let smallest = (0..3).min_by(|&a, &b| sv[a].total_cmp(&sv[b])).unwrap();
    let mut s = Vector3::new(1.0, 1.0, 1.0);
    if u.determinant() * v_t.determinant() < 0.0 {
        s[smallest] = -1.0;
    }
    let rotation = u * Matrix3::from_diagonal(&s) * v_t;
    let scale = sv.dot(&s) / var_p;
    let translation = mu_g - rotation * mu_p * scale;
    let sim = Sim3Transform {
        scale,
        rotation,
        translation,
    };
    let aligned = sim.apply(pred);
    Ok((sim, aligned))
}

/// Root mean square of per-frame position differences.
pub fn ate(pred: &Trajectory, gt: &Trajectory) -> Result<f64, EvalError> {
    check_lengths(pred, gt, 1)?;
    let sq: f64 = pred
        .positions()
        .zip(gt.positions())
        .map(|(p, g)| (p - g).norm_squared())
        .sum();
    Ok(libm::sqrt(sq / pred.len() as f64))
}

/// Frame-to-frame error: translation RMSE in metres, mean rotation in degrees.
pub fn rpe(pred: &Trajectory, gt: &Trajectory) -> Result<(f64, f64), EvalError> {
    check_lengths(pred, gt, 2)?;
    let mut sq = 0.0;
    let mut rot = 0.0;
    let (pp, gp) = (pred.poses(), gt.poses());
    for k in 1..pred.len() {
        let e = relative_motion(&gp[k - 1], &gp[k])
            .inverse()
            .compose(&relative_motion(&pp[k - 1], &pp[k]));
        sq += e.translation().norm_squared();
        rot += e.rotation_angle();
    }
    let m = (pred.len() - 1) as f64;
    Ok((libm::sqrt(sq / m), rot / m * 180.0 / PI))
}

/// Averaged subsequence errors: translation in percent, rotation in degrees
/// per 100 m.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentErrors {
    pub t_err: f64,
    pub r_err: f64,
    pub segments: usize,
}

fn segment_end(dist: &[f64], first: usize, length: f64) -> Option<usize> {
    (first..dist.len()).find(|&i| dist[i] > dist[first] + length)
}

/// Mean relative translation and rotation error over every subsequence of
/// 100..800 m. `Ok(None)` marks a ground-truth path too short for any
/// subsequence.
pub fn terr_rerr(pred: &Trajectory, gt: &Trajectory) -> Result<Option<SegmentErrors>, EvalError> {
    check_lengths(pred, gt, 1)?;
    let dist = gt.arc_lengths();
    let (pp, gp) = (pred.poses(), gt.poses());
    let (mut t_sum, mut r_sum, mut count) = (0.0, 0.0, 0usize);
    for first in 0..gt.len() {
        for &len in &SEGMENT_LENGTHS {
            let Some(last) = segment_end(&dist, first, len) else {
                break;
            };
            let gt_delta = relative_motion(&gp[first], &gp[last]);
            let pred_delta = relative_motion(&pp[first], &pp[last]);
            let e = pred_delta.inverse().compose(&gt_delta);
            t_sum += e.translation().norm() / len;
            r_sum += e.rotation_angle() / len;
            count += 1;
        }
    }
    if count == 0 {
        return Ok(None);
    }
    let n = count as f64;
    Ok(Some(SegmentErrors {
        t_err: t_sum / n * 100.0,
        r_err: r_sum / n * 100.0 * 180.0 / PI,
        segments: count,
    }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    /// Percent; `None` when the path is shorter than the shortest subsequence.
    pub t_err: Option<f64>,
    /// Degrees per 100 m; `None` as for `t_err`.
    pub r_err: Option<f64>,
    pub ate: f64,
    pub rpe_trans: f64,
    pub rpe_rot: f64,
    pub aligned: bool,
    pub alignment_scale: f64,
}

/// All metric families, optionally after 7-DoF alignment of `pred`.
pub fn evaluate(
    pred: &Trajectory,
    gt: &Trajectory,
    align: bool,
) -> Result<MetricsReport, EvalError> {
    check_lengths(pred, gt, 2)?;
    let (scale, aligned_pred) = if align {
        let (sim, traj) = align_7dof(pred, gt)?;
        (sim.scale, traj)
    } else {
        (1.0, pred.clone())
    };
    let segments = terr_rerr(&aligned_pred, gt)?;
    let (rpe_trans, rpe_rot) = rpe(&aligned_pred, gt)?;
    Ok(MetricsReport {
        t_err: segments.map(|s| s.t_err),
        r_err: segments.map(|s| s.r_err),
        ate: ate(&aligned_pred, gt)?,
        rpe_trans,
        rpe_rot,
        aligned: align,
        alignment_scale: scale,
    })
}
