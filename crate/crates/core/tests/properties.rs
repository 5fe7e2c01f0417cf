use std::f64::consts::PI;

use proptest::prelude::*;
use stvo_core::data::{split_train_val, NormStats};
use stvo_core::evaluation::{align_7dof, ate, evaluate, rpe};
use stvo_core::geometry::{
    accumulate, average_overlapping, euler_to_matrix, matrix_to_euler, relative_motion,
    MotionVector, Pose, Trajectory,
};
use stvo_core::model::{attention_rollout, Clip, ModelConfig, ParameterSet};

fn motion() -> impl Strategy<Value = MotionVector> {
    (
        -PI + 1e-6..PI,
        -1.5f64..1.5,
        -PI + 1e-6..PI,
        prop::array::uniform3(-20.0f64..20.0),
    )
        .prop_map(|(ax, ay, az, t)| MotionVector::new([ax, ay, az], t))
}

fn small_motion() -> impl Strategy<Value = MotionVector> {
    (
        prop::array::uniform3(-0.2f64..0.2),
        prop::array::uniform3(-2.0f64..2.0),
    )
        .prop_map(|(a, t)| MotionVector::new(a, t))
}

fn trajectory(min: usize, max: usize) -> impl Strategy<Value = Trajectory> {
    (
        motion(),
        prop::collection::vec(small_motion(), min - 1..max),
    )
        .prop_map(|(start, ms)| {
            let rel: Vec<Pose> = ms.iter().map(euler_to_matrix).collect();
            accumulate(&euler_to_matrix(&start), &rel)
        })
}

fn max_pose_diff(a: &Trajectory, b: &Trajectory) -> f64 {
    a.poses()
        .iter()
        .zip(b.poses())
        .map(|(p, q)| (p.to_homogeneous() - q.to_homogeneous()).abs().max())
        .fold(0.0, f64::max)
}

proptest! {
    #[test]
    fn euler_round_trip(m in motion()) {
        let back = matrix_to_euler(&euler_to_matrix(&m)).motion;
        for (a, b) in m.to_array().iter().zip(back.to_array()) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn rotation_stays_orthonormal(m in motion()) {
        prop_assert!(euler_to_matrix(&m).orthonormality_error() < 1e-12);
    }

    #[test]
    fn relative_then_accumulate_is_identity(t in trajectory(2, 40)) {
        let rebuilt = accumulate(&t.poses()[0], &t.relative_motions());
        prop_assert!(max_pose_diff(&rebuilt, &t) < 1e-9);
    }

    #[test]
    fn relative_motion_inverts_composition(a in motion(), b in motion()) {
        let (pa, pb) = (euler_to_matrix(&a), euler_to_matrix(&b));
        let back = pa.compose(&relative_motion(&pa, &pb));
        prop_assert!((back.to_homogeneous() - pb.to_homogeneous()).abs().max() < 1e-9);
    }

    #[test]
    fn averaging_is_permutation_invariant(
        ms in prop::collection::vec((0usize..5, small_motion()), 1..30),
        seed in any::<u64>(),
    ) {
        let mut shuffled = ms.clone();
        let n = shuffled.len();
        let mut s = seed;
        for i in (1..n).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            shuffled.swap(i, (s >> 33) as usize % (i + 1));
        }
        let a = average_overlapping(&ms).unwrap();
        let b = average_overlapping(&shuffled).unwrap();
        for (x, y) in a.iter().zip(&b) {
            for (u, v) in x.to_array().iter().zip(y.to_array()) {
                prop_assert!((u - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn metrics_are_nonnegative_and_zero_on_self(t in trajectory(3, 30)) {
        let r = evaluate(&t, &t, false).unwrap();
        prop_assert!(r.ate == 0.0 && r.rpe_trans < 1e-9 && r.rpe_rot < 1e-9);
    }

    #[test]
    fn alignment_never_increases_ate(
        gt in trajectory(4, 30),
        noise in prop::collection::vec(prop::array::uniform3(-1.0f64..1.0), 30),
        scale in 0.3f64..3.0,
    ) {
        let poses = gt
            .poses()
            .iter()
            .zip(&noise)
            .map(|(p, n)| {
                Pose::new_unchecked(*p.rotation(), p.translation() * scale + nalgebra::Vector3::from(*n))
            })
            .collect();
        let pred = Trajectory::from_poses(poses).unwrap();
        if let Ok((sim, aligned)) = align_7dof(&pred, &gt) {
            prop_assert!(sim.scale > 0.0);
            prop_assert!(ate(&aligned, &gt).unwrap() <= ate(&pred, &gt).unwrap() + 1e-9);
        }
    }

    #[test]
    fn metrics_invariant_to_common_rigid_motion(
        gt in trajectory(4, 25),
        pred in trajectory(4, 25),
        g in motion(),
    ) {
        let n = gt.len().min(pred.len());
        let gt = Trajectory::from_poses(gt.poses()[..n].to_vec()).unwrap();
        let pred = Trajectory::from_poses(pred.poses()[..n].to_vec()).unwrap();
        let g = euler_to_matrix(&g);
        let a = evaluate(&pred, &gt, false).unwrap();
        let b = evaluate(&pred.transformed(&g), &gt.transformed(&g), false).unwrap();
        prop_assert!((a.ate - b.ate).abs() < 1e-8);
        prop_assert!((a.rpe_trans - b.rpe_trans).abs() < 1e-8);
        prop_assert!((a.rpe_rot - b.rpe_rot).abs() < 1e-6);
    }

    #[test]
    fn split_partitions_all_samples(n in 0usize..300, seed in any::<u64>()) {
        let (train, val) = split_train_val((0..n).collect::<Vec<_>>(), 0.1, seed);
        prop_assert_eq!(val.len(), (0.1 * n as f64).round() as usize);
        let mut all: Vec<_> = train.into_iter().chain(val).collect();
        all.sort();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn target_normalization_round_trips(m in motion(), mean in prop::array::uniform6(-1.0f64..1.0), std in prop::array::uniform6(0.01f64..5.0)) {
        let stats = NormStats { image_mean: vec![0.0; 3], image_std: vec![1.0; 3], target_mean: mean, target_std: std };
        let back = stats.denormalize_target(&stats.normalize_target(&m));
        for (a, b) in m.to_array().iter().zip(back.to_array()) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn rollout_maps_are_distributions(seed in any::<u64>(), depth in 1usize..3, nf in 2usize..4) {
        let config = ModelConfig { num_frames: nf, depth, height: 32, width: 48, ..ModelConfig::tiny() };
        let params = ParameterSet::<f64>::init(&config, seed).unwrap();
        let data: Vec<f64> = (0..nf * config.frame_len())
            .map(|i| ((i as u64 ^ seed) % 97) as f64 / 97.0 - 0.5)
            .collect();
        let clip = Clip::from_dense(&data, nf, 3, 32, 48).unwrap();
        let map = attention_rollout(&clip, &params, &config).unwrap();
        for t in 0..nf {
            let f = map.frame(t);
            prop_assert!(f.iter().all(|&v| v >= 0.0));
            prop_assert!((f.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}

#[test]
fn rpe_perturbing_one_pair_changes_one_term() {
    let ms: Vec<Pose> = (0..10)
        .map(|k| {
            euler_to_matrix(&MotionVector::new(
                [0.0, 0.02 * k as f64, 0.0],
                [0.0, 0.0, 1.0],
            ))
        })
        .collect();
    let gt = accumulate(&Pose::identity(), &ms);
    let mut bent = ms.clone();
    bent[4] = bent[4].compose(&euler_to_matrix(&MotionVector::new(
        [0.0, 0.0, 0.1],
        [0.0; 3],
    )));
    let pred = accumulate(&Pose::identity(), &bent);
    let (_, rot) = rpe(&pred, &gt).unwrap();
    assert!((rot - 0.1f64.to_degrees() / 10.0).abs() < 1e-9);
}
