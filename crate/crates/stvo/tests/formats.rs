use proptest::prelude::*;
use stvo::checkpoint;
use stvo::kitti::{format_poses, parse_poses};
use stvo_core::geometry::{accumulate, euler_to_matrix, MotionVector, Pose};

fn motion() -> impl Strategy<Value = MotionVector> {
    (
        prop::array::uniform3(-1.0f64..1.0),
        prop::array::uniform3(-5.0f64..5.0),
    )
        .prop_map(|(a, t)| MotionVector::new(a, t))
}

proptest! {
    #[test]
    fn pose_text_round_trips_exactly(motions in prop::collection::vec(motion(), 1..20)) {
        let steps: Vec<Pose> = motions.iter().map(euler_to_matrix).collect();
        let traj = accumulate(&Pose::identity(), &steps);
        let back = parse_poses(&format_poses(&traj), "mem").unwrap();
        prop_assert_eq!(back.len(), traj.len());
        for (a, b) in traj.poses().iter().zip(back.poses()) {
            prop_assert_eq!(a.to_row_major_3x4(), b.to_row_major_3x4());
        }
    }

    #[test]
    fn checkpoint_decode_never_panics(bytes in prop::collection::vec(any::<u8>(), 0..256)) {
        let _ = checkpoint::decode::<f32>(&bytes);
    }
}
