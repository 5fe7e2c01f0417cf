//! Dataset IO, checkpoints, reports and the `stvo` command line on top of
//! `stvo-core`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod cli;
pub mod commands;
pub mod config;
pub mod engine;
pub mod error;
pub mod kitti;
pub mod report;

pub use error::{CliError, ErrorKind};
