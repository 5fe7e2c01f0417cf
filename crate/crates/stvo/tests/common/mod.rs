#![allow(dead_code)]

use std::path::{Path, PathBuf};

use stvo::checkpoint::{self, Checkpoint};
use stvo::commands::{self, Context};
use stvo::config::RunConfig;
use stvo::kitti;
use stvo_core::data::NormStats;
use stvo_core::model::{ModelConfig, ParameterSet};
use stvo_core::synthetic::MotionKind;
use stvo_core::Trajectory;
use tempfile::TempDir;

pub struct Fixture {
    pub dir: TempDir,
    pub ctx: Context,
}

impl Fixture {
    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    pub fn gt_path(&self, id: &str) -> PathBuf {
        kitti::DatasetLayout::new(self.ctx.config.data.root.clone()).poses_path(id)
    }

    pub fn gt(&self, id: &str) -> Trajectory {
        kitti::read_poses(&self.gt_path(id)).unwrap()
    }

    pub fn save_checkpoint(
        &self,
        name: &str,
        params: ParameterSet<f32>,
        stats: NormStats,
    ) -> PathBuf {
        let path = self.path(name);
        let ckpt = Checkpoint {
            config: self.ctx.config.model_config(),
            stats,
            params,
            epoch: None,
        };
        checkpoint::save(&path, &ckpt).unwrap();
        path
    }
}

pub fn model(num_frames: usize) -> ModelConfig {
    ModelConfig {
        num_frames,
        ..ModelConfig::tiny()
    }
}

/// Synthetic dataset at the model's input size with a quiet, deterministic
/// context pointing at it.
pub fn fixture(kind: MotionKind, frames: usize, ids: &[&str], config: &ModelConfig) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::default();
    cfg.data.root = dir.path().join("data");
    cfg.data.train_sequences = ids.iter().map(|s| s.to_string()).collect();
    cfg.data.test_sequences = cfg.data.train_sequences.clone();
    cfg.model = config.into();
    cfg.training.epochs = 3;
    cfg.output.dir = dir.path().join("out");
    let ctx = Context {
        config: cfg,
        config_given: true,
        deterministic: true,
        quiet: true,
    };
    commands::synth::run(
        &ctx,
        &commands::synth::SynthArgs {
            root: ctx.config.data.root.clone(),
            kind,
            frames,
            height: config.height,
            width: config.width,
            ids: cfg_ids(ids),
            seed: 7,
            jitter: 0.0,
            config_out: None,
        },
    )
    .unwrap();
    Fixture { dir, ctx }
}

fn cfg_ids(ids: &[&str]) -> Vec<String> {
    ids.iter().map(|s| s.to_string()).collect()
}

pub fn read_text(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap()
}

pub fn parse_grid(text: &str) -> Vec<f64> {
    text.split_whitespace()
        .map(|v| v.parse().unwrap())
        .collect()
}

pub fn max_position_gap(a: &Trajectory, b: &Trajectory) -> f64 {
    a.positions()
        .zip(b.positions())
        .map(|(p, q)| (p - q).norm())
        .fold(0.0, f64::max)
}
