//! Rigid-body pose arithmetic in 64-bit floating point.
//!
//! Rotations use the ZYX Euler product `R = Rz(angle_z) * Ry(angle_y) * Rx(angle_x)`.
//! A pose maps camera coordinates at frame `k` into the reference frame, so
//! the motion between consecutive frames is `T_{k-1}^-1 * T_k` and a
//! trajectory is rebuilt by right-multiplying those motions.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::f64::consts::PI;
use core::ops::Mul;

use nalgebra::{Matrix3, Matrix4, Vector3};
use thiserror::Error;

/// Orthonormality tolerance for [`Pose`] rotation blocks.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

/// `|angle_y|` beyond which the ZYX extraction is treated as singular.
pub const GIMBAL_LOCK_THRESHOLD: f64 = core::f64::consts::FRAC_PI_2 - 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("rotation is not orthonormal (error {0:e})")]
    InvalidRotation(f64),
    #[error("non-finite pose component")]
    NonFinite,
    #[error("trajectory must contain at least one pose")]
    EmptyTrajectory,
    #[error("frame indices must be strictly increasing (index {0})")]
    UnorderedFrames(usize),
    #[error("frame index list has {indices} entries for {poses} poses")]
    IndexCountMismatch { poses: usize, indices: usize },
    #[error("no motion estimates to average")]
    EmptyInput,
}

/// Rigid transform `[R | t]` with an orthonormal rotation block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a pose, rejecting rotation blocks that are not orthonormal
    /// within [`ROTATION_TOLERANCE`].
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        if rotation
            .iter()
            .chain(translation.iter())
            .any(|v| !v.is_finite())
        {
            return Err(GeometryError::NonFinite);
        }
        let err = orthonormality_error(&rotation);
        if err >= ROTATION_TOLERANCE {
            return Err(GeometryError::InvalidRotation(err));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    /// Builds a pose without checking the rotation block.
    pub fn new_unchecked(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::new(x, y, z),
        }
    }

    /// Row-major upper 3x4 block `[r11 r12 r13 t1 r21 ... t3]`.
    pub fn from_row_major_3x4(values: &[f64; 12]) -> Result<Self, GeometryError> {
        let rotation = Matrix3::new(
            values[0], values[1], values[2], values[4], values[5], values[6], values[8], values[9],
            values[10],
        );
        let translation = Vector3::new(values[3], values[7], values[11]);
        Self::new(rotation, translation)
    }

    pub fn to_row_major_3x4(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            t[0],
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            t[1],
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            t[2],
        ]
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Closed-form inverse `[R^T | -R^T t]`.
    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn compose(&self, rhs: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * rhs.rotation,
            translation: self.rotation * rhs.translation + self.translation,
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Rotation angle in radians. Equals `arccos((trace(R) - 1) / 2)` but is
    /// evaluated through `atan2` to stay accurate near zero.
    pub fn rotation_angle(&self) -> f64 {
        let r = &self.rotation;
        let c = 0.5 * (r.trace() - 1.0);
        let s = 0.5
            * Vector3::new(
                r[(2, 1)] - r[(1, 2)],
                r[(0, 2)] - r[(2, 0)],
                r[(1, 0)] - r[(0, 1)],
            )
            .norm();
        libm::atan2(s, c)
    }

    pub fn orthonormality_error(&self) -> f64 {
        orthonormality_error(&self.rotation)
    }
}

impl Mul for Pose {
    type Output = Pose;

    fn mul(self, rhs: Pose) -> Pose {
        self.compose(&rhs)
    }
}

impl<'a> Mul<&'a Pose> for &'a Pose {
    type Output = Pose;

    fn mul(self, rhs: &'a Pose) -> Pose {
        self.compose(rhs)
    }
}

/// Max of `||R^T R - I||_inf` and `|det R - 1|`.
pub fn orthonormality_error(r: &Matrix3<f64>) -> f64 {
    let gram = r.transpose() * r - Matrix3::identity();
    let gram_err = gram.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    gram_err.max((r.determinant() - 1.0).abs())
}

/// Nearest rotation in the Frobenius sense, via SVD.
pub fn orthonormalize(r: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = r.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    u * d * v_t
}

/// Six-component relative motion: ZYX Euler angles (radians) and translation
/// (meters).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MotionVector {
    pub angle_x: f64,
    pub angle_y: f64,
    pub angle_z: f64,
    pub t_x: f64,
    pub t_y: f64,
    pub t_z: f64,
}

impl MotionVector {
    pub const LEN: usize = 6;

    pub fn new(angles: [f64; 3], translation: [f64; 3]) -> Self {
        Self {
            angle_x: angles[0],
            angle_y: angles[1],
            angle_z: angles[2],
            t_x: translation[0],
            t_y: translation[1],
            t_z: translation[2],
        }
    }

    /// Component order `[angle_x, angle_y, angle_z, t_x, t_y, t_z]`, the
    /// layout of regression targets and network outputs.
    pub fn to_array(&self) -> [f64; 6] {
        [
            self.angle_x,
            self.angle_y,
            self.angle_z,
            self.t_x,
            self.t_y,
            self.t_z,
        ]
    }

    pub fn from_array(v: [f64; 6]) -> Self {
        Self::new([v[0], v[1], v[2]], [v[3], v[4], v[5]])
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self::new([v[0], v[1], v[2]], [v[3], v[4], v[5]])
    }
}

/// Result of a rotation-to-Euler extraction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EulerExtraction {
    pub motion: MotionVector,
    /// Set when `|angle_y|` is within 1e-6 of pi/2; the extraction then fixes
    /// `angle_x = 0` and puts the whole yaw/roll combination into `angle_z`.
    pub gimbal_lock: bool,
}

/// Ordered absolute poses with strictly increasing frame indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    poses: Vec<Pose>,
    frame_index: Vec<usize>,
}

impl Trajectory {
    pub fn new(poses: Vec<Pose>, frame_index: Vec<usize>) -> Result<Self, GeometryError> {
        if poses.is_empty() {
            return Err(GeometryError::EmptyTrajectory);
        }
        if poses.len() != frame_index.len() {
            return Err(GeometryError::IndexCountMismatch {
                poses: poses.len(),
                indices: frame_index.len(),
            });
        }
        if let Some(i) = frame_index.windows(2).position(|w| w[1] <= w[0]) {
            return Err(GeometryError::UnorderedFrames(i + 1));
        }
        Ok(Self { poses, frame_index })
    }

    /// Frame indices `0..poses.len()`.
    pub fn from_poses(poses: Vec<Pose>) -> Result<Self, GeometryError> {
        let idx = (0..poses.len()).collect();
        Self::new(poses, idx)
    }

    pub fn poses(&self) -> &[Pose] {
        &self.poses
    }

    pub fn frame_index(&self) -> &[usize] {
        &self.frame_index
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn positions(&self) -> impl Iterator<Item = Vector3<f64>> + '_ {
        self.poses.iter().map(|p| *p.translation())
    }

    /// Motions between consecutive poses.
    pub fn relative_motions(&self) -> Vec<Pose> {
        self.poses
            .windows(2)
            .map(|w| relative_motion(&w[0], &w[1]))
            .collect()
    }

    /// Left-multiplies every pose by `t`.
    pub fn transformed(&self, t: &Pose) -> Self {
        Self {
            poses: self.poses.iter().map(|p| t.compose(p)).collect(),
            frame_index: self.frame_index.clone(),
        }
    }

    /// Cumulative path length along the positions, starting at 0.
    pub fn arc_lengths(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.poses.len());
        let mut acc = 0.0;
        out.push(0.0);
        for w in self.poses.windows(2) {
            acc += (w[1].translation() - w[0].translation()).norm();
            out.push(acc);
        }
        out
    }
}

/// `T_{k-1,k} = T_{k-1}^-1 * T_k`.
pub fn relative_motion(prev: &Pose, curr: &Pose) -> Pose {
    prev.inverse().compose(curr)
}

/// Chains motions from `start`: `pose_k = pose_{k-1} * motion_k`.
pub fn accumulate(start: &Pose, motions: &[Pose]) -> Trajectory {
    let mut poses = Vec::with_capacity(motions.len() + 1);
    let mut current = *start;
    poses.push(current);
    for m in motions {
        current = current.compose(m);
        poses.push(current);
    }
    let idx = (0..poses.len()).collect();
    Trajectory {
        poses,
        frame_index: idx,
    }
}

fn wrap_half_open(angle: f64) -> f64 {
    // atan2 may return -pi exactly; the canonical range is (-pi, pi].
    if angle <= -PI {
        angle + 2.0 * PI
    } else {
        angle
    }
}

/// ZYX Euler extraction consistent with [`euler_to_matrix`].
pub fn matrix_to_euler(pose: &Pose) -> EulerExtraction {
    let r = pose.rotation();
    let (r11, r12, r21, r22, r31, r32, r33) = (
        r[(0, 0)],
        r[(0, 1)],
        r[(1, 0)],
        r[(1, 1)],
        r[(2, 0)],
        r[(2, 1)],
        r[(2, 2)],
    );
    let angle_y = libm::atan2(-r31, libm::sqrt(r11 * r11 + r21 * r21));
    let gimbal_lock = angle_y.abs() > GIMBAL_LOCK_THRESHOLD;
    let (angle_x, angle_z) = if gimbal_lock {
        (0.0, libm::atan2(-r12, r22))
    } else {
        (libm::atan2(r32, r33), libm::atan2(r21, r11))
    };
    let t = pose.translation();
    EulerExtraction {
        motion: MotionVector::new(
            [
                wrap_half_open(angle_x),
                wrap_half_open(angle_y),
                wrap_half_open(angle_z),
            ],
            [t[0], t[1], t[2]],
        ),
        gimbal_lock,
    }
}

pub fn rotation_x(a: f64) -> Matrix3<f64> {
    let (s, c) = libm::sincos(a);
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

pub fn rotation_y(a: f64) -> Matrix3<f64> {
    let (s, c) = libm::sincos(a);
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

pub fn rotation_z(a: f64) -> Matrix3<f64> {
    let (s, c) = libm::sincos(a);
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// `R = Rz(angle_z) * Ry(angle_y) * Rx(angle_x)` with the motion's translation.
pub fn euler_to_matrix(motion: &MotionVector) -> Pose {
    let rotation =
        rotation_z(motion.angle_z) * rotation_y(motion.angle_y) * rotation_x(motion.angle_x);
    Pose::new_unchecked(rotation, Vector3::new(motion.t_x, motion.t_y, motion.t_z))
}

/// Component-wise mean of every estimate sharing a frame-pair index, ordered
/// by index. Indices without estimates produce no output.
pub fn average_overlapping(
    estimates: &[(usize, MotionVector)],
) -> Result<Vec<MotionVector>, GeometryError> {
    if estimates.is_empty() {
        return Err(GeometryError::EmptyInput);
    }
    let mut sums: BTreeMap<usize, ([f64; 6], usize)> = BTreeMap::new();
    for (k, m) in estimates {
        let entry = sums.entry(*k).or_insert(([0.0; 6], 0));
        for (acc, v) in entry.0.iter_mut().zip(m.to_array()) {
            *acc += v;
        }
        entry.1 += 1;
    }
    Ok(sums
        .into_values()
        .map(|(sum, n)| MotionVector::from_array(sum.map(|s| s / n as f64)))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::FRAC_PI_2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_motion(rng: &mut ChaCha8Rng, max_pitch: f64) -> MotionVector {
        MotionVector::new(
            [
                rng.random_range(-PI + 1e-6..PI),
                rng.random_range(-max_pitch..max_pitch),
                rng.random_range(-PI + 1e-6..PI),
            ],
            [
                rng.random_range(-10.0..10.0),
                rng.random_range(-10.0..10.0),
                rng.random_range(-10.0..10.0),
            ],
        )
    }

    fn max_abs_diff(a: &Pose, b: &Pose) -> f64 {
        (a.to_homogeneous() - b.to_homogeneous()).amax()
    }

    #[test]
    fn identity_motion_is_identity() {
        let m = relative_motion(&Pose::identity(), &Pose::identity());
        assert_eq!(m, Pose::identity());
    }

    #[test]
    fn motion_from_identity_is_target() {
        let t = Pose::from_translation(1.0, 2.0, 3.0);
        assert!(max_abs_diff(&relative_motion(&Pose::identity(), &t), &t) < 1e-15);
    }

    #[test]
    fn relative_motion_recomposes() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let a = euler_to_matrix(&random_motion(&mut rng, 1.5));
            let b = euler_to_matrix(&random_motion(&mut rng, 1.5));
            let m = relative_motion(&a, &b);
            assert!(max_abs_diff(&a.compose(&m), &b) < 1e-9);
        }
    }

    #[test]
    fn accumulate_empty_and_chain() {
        let t = accumulate(&Pose::identity(), &[]);
        assert_eq!(t.len(), 1);
        assert_eq!(t.poses()[0], Pose::identity());

        let step = Pose::from_translation(1.0, 0.0, 0.0);
        let t = accumulate(&Pose::identity(), &[step; 3]);
        let xs: Vec<_> = t.positions().map(|p| p[0]).collect();
        assert_eq!(xs, [0.0, 1.0, 2.0, 3.0]);
        assert!(t.positions().all(|p| p[1] == 0.0 && p[2] == 0.0));
    }

    #[test]
    fn accumulate_inverts_relative_motion() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let poses: Vec<_> = (0..50)
            .map(|_| euler_to_matrix(&random_motion(&mut rng, 1.4)))
            .collect();
        let traj = Trajectory::from_poses(poses).unwrap();
        let rebuilt = accumulate(&traj.poses()[0], &traj.relative_motions());
        let worst = traj
            .positions()
            .zip(rebuilt.positions())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(worst < 1e-9, "{worst}");
    }

    #[test]
    fn identity_extracts_zeros() {
        let e = matrix_to_euler(&Pose::identity());
        assert_eq!(e.motion.to_array(), [0.0; 6]);
        assert!(!e.gimbal_lock);
    }

    #[test]
    fn quarter_turn_about_z() {
        let p = Pose::new(rotation_z(FRAC_PI_2), Vector3::zeros()).unwrap();
        let e = matrix_to_euler(&p);
        assert!((e.motion.angle_z - FRAC_PI_2).abs() < 1e-15);
        assert!(e.motion.angle_x.abs() < 1e-15);
        assert!(e.motion.angle_y.abs() < 1e-15);
    }

    #[test]
    fn roll_quarter_turn_pattern() {
        let p = euler_to_matrix(&MotionVector::new([FRAC_PI_2, 0.0, 0.0], [0.0; 3]));
        let r = p.rotation();
        // r32 = c_theta s_phi, r33 = c_theta c_phi.
        assert!((r[(2, 1)] - 1.0).abs() < 1e-15);
        assert!(r[(2, 2)].abs() < 1e-15);
        assert!((r[(1, 2)] + 1.0).abs() < 1e-15);
        assert!((r[(0, 0)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_motion_is_identity_pose() {
        assert_eq!(euler_to_matrix(&MotionVector::default()), Pose::identity());
    }

    #[test]
    fn euler_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let m = random_motion(&mut rng, FRAC_PI_2 - 0.1);
            let p = euler_to_matrix(&m);
            assert!((p.rotation().determinant() - 1.0).abs() < 1e-12);
            let e = matrix_to_euler(&p);
            assert!(!e.gimbal_lock);
            let diff = e
                .motion
                .to_array()
                .iter()
                .zip(m.to_array())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(diff < 1e-9, "{m:?} -> {:?}", e.motion);
            assert!(max_abs_diff(&euler_to_matrix(&e.motion), &p) < 1e-9);
        }
    }

    #[test]
    fn gimbal_lock_is_flagged_and_consistent() {
        for &pitch in &[FRAC_PI_2, -FRAC_PI_2] {
            let m = MotionVector::new([0.3, pitch, -0.7], [1.0, 2.0, 3.0]);
            let p = euler_to_matrix(&m);
            let e = matrix_to_euler(&p);
            assert!(e.gimbal_lock);
            assert_eq!(e.motion.angle_x, 0.0);
            // The extracted angles still describe the same rotation.
            assert!(max_abs_diff(&euler_to_matrix(&e.motion), &p) < 1e-9);
        }
    }

    #[test]
    fn angles_stay_in_half_open_range() {
        let p = Pose::new(rotation_z(PI), Vector3::zeros()).unwrap();
        let e = matrix_to_euler(&p);
        assert!(e.motion.angle_z > -PI && e.motion.angle_z <= PI);
    }

    #[test]
    fn pose_rejects_non_rotation() {
        let m = Matrix3::new(1.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 1.0);
        assert!(matches!(
            Pose::new(m, Vector3::zeros()),
            Err(GeometryError::InvalidRotation(_))
        ));
        let reflect = Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0);
        assert!(Pose::new(reflect, Vector3::zeros()).is_err());
    }

    #[test]
    fn trajectory_validation() {
        assert_eq!(
            Trajectory::from_poses(Vec::new()),
            Err(GeometryError::EmptyTrajectory)
        );
        let p = Pose::identity();
        assert_eq!(
            Trajectory::new(alloc::vec![p, p], alloc::vec![3, 3]),
            Err(GeometryError::UnorderedFrames(1))
        );
    }

    #[test]
    fn averaging_examples() {
        assert_eq!(average_overlapping(&[]), Err(GeometryError::EmptyInput));

        let a = MotionVector::new([0.1, 0.1, 0.1], [0.1, 0.1, 0.1]);
        let b = MotionVector::new([0.3, 0.3, 0.3], [0.3, 0.3, 0.3]);
        let single = average_overlapping(&[(0, a), (1, b)]).unwrap();
        assert_eq!(single, alloc::vec![a, b]);

        let same = average_overlapping(&[(4, a), (4, a)]).unwrap();
        assert_eq!(same, alloc::vec![a]);

        let mixed = average_overlapping(&[(2, a), (2, b)]).unwrap();
        for v in mixed[0].to_array() {
            assert!((v - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn averaging_orders_by_index() {
        let a = MotionVector::new([1.0; 3], [1.0; 3]);
        let b = MotionVector::new([2.0; 3], [2.0; 3]);
        let out = average_overlapping(&[(5, b), (1, a)]).unwrap();
        assert_eq!(out, alloc::vec![a, b]);
    }

    #[test]
    fn kitti_layout_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = euler_to_matrix(&random_motion(&mut rng, 1.0));
        let q = Pose::from_row_major_3x4(&p.to_row_major_3x4()).unwrap();
        assert_eq!(p, q);
        let h = p.to_homogeneous();
        assert_eq!(
            h.row(3).iter().copied().collect::<Vec<_>>(),
            [0.0, 0.0, 0.0, 1.0]
        );
    }
}
