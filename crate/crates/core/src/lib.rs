//! Monocular visual odometry with a divided space-time attention transformer.
//!
//! This crate holds the allocation-only algorithmic core: SE(3) pose
//! arithmetic, the network with hand-written backpropagation, clip sampling
//! and normalization, the training loop, trajectory reconstruction and the
//! KITTI odometry metrics. File formats, dataset IO and the command line live
//! in the `stvo` companion crate.

#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod data;
pub mod evaluation;
pub mod geometry;
pub mod inference;
pub mod model;
pub mod real;
pub mod synthetic;
pub mod training;

pub use geometry::{MotionVector, Pose, Trajectory};
pub use model::{Clip, ModelConfig, ParameterSet};
pub use nalgebra;
pub use real::Real;
