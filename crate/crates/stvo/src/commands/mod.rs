//! Subcommand implementations. Each takes a [`Context`] and typed
//! arguments so they can be driven from tests as well as the CLI.

pub mod bench;
pub mod eval;
pub mod infer;
pub mod plot;
pub mod rollout;
pub mod synth;
pub mod train;

use std::path::{Path, PathBuf};
use std::time::Instant;

use stvo_core::data::SequenceRecord;
use stvo_core::model::ModelConfig;

use crate::checkpoint::{self, Checkpoint};
use crate::config::RunConfig;
use crate::error::CliError;
use crate::kitti::DatasetLayout;

/// Resolved configuration shared by every command.
#[derive(Debug, Clone, Default)]
pub struct Context {
    pub config: RunConfig,
    /// Set when the configuration came from a file rather than defaults.
    pub config_given: bool,
    /// Single worker and fixed reduction order.
    pub deterministic: bool,
    /// Suppresses progress output.
    pub quiet: bool,
}

impl Context {
    pub fn new(config: RunConfig) -> Self {
        Self {
            config,
            config_given: true,
            ..Self::default()
        }
    }

    pub fn threads(&self) -> usize {
        if self.deterministic {
            1
        } else {
            self.config.threads()
        }
    }

    pub fn progress(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }

    pub fn layout(&self) -> Result<DatasetLayout, CliError> {
        let root = &self.config.data.root;
        if !root.is_dir() {
            return Err(CliError::data(format!(
                "dataset root {} does not exist",
                root.display()
            )));
        }
        Ok(DatasetLayout::new(root.clone()))
    }

    pub fn output_dir(&self) -> &Path {
        &self.config.output.dir
    }

    /// Loads a checkpoint and, when a configuration file was given, checks
    /// that it describes the same model.
    pub fn load_checkpoint(&self, path: &Path) -> Result<Checkpoint<f32>, CliError> {
        let ckpt = checkpoint::load::<f32>(path)?;
        if self.config_given {
            checkpoint::ensure_same_model(&self.config.model_config(), &ckpt.config)?;
        }
        Ok(ckpt)
    }

    pub fn load_sequence(&self, id: &str, model: &ModelConfig) -> Result<SequenceRecord, CliError> {
        let seq = self
            .layout()?
            .load_sequence(id, model.height, model.width)?;
        if seq.is_empty() {
            return Err(CliError::data(format!("sequence {id} has no images")));
        }
        Ok(seq)
    }
}

/// Wall clock for epoch timing.
#[derive(Debug)]
pub struct WallClock(Instant);

impl Default for WallClock {
    fn default() -> Self {
        Self(Instant::now())
    }
}

impl stvo_core::training::Clock for WallClock {
    fn seconds(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

pub(crate) fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

pub(crate) fn file_label(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

pub(crate) fn or_default(path: &Option<PathBuf>, default: impl FnOnce() -> PathBuf) -> PathBuf {
    path.clone().unwrap_or_else(default)
}
