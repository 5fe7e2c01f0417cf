//! TOML run configuration. Every key is optional; the defaults are the
//! full-scale protocol (two-frame clips at 192x640, twelve blocks, Adam at
//! 1e-5, batch 4, 100 epochs, training on sequences 00, 02, 08 and 09).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use stvo_core::model::ModelConfig;
use stvo_core::training::TrainConfig;
use thiserror::Error;

use crate::checkpoint::ModelSection;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {reason}")]
    Parse { path: String, reason: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub root: PathBuf,
    pub train_sequences: Vec<String>,
    pub test_sequences: Vec<String>,
    pub val_fraction: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        let ids = |v: &[&str]| v.iter().map(|s| s.to_string()).collect();
        Self {
            root: PathBuf::from("data/kitti"),
            train_sequences: ids(&["00", "02", "08", "09"]),
            test_sequences: ids(&["01", "03", "04", "05", "06", "07", "10"]),
            val_fraction: stvo_core::data::DEFAULT_VAL_FRACTION,
        }
    }
}

impl Default for ModelSection {
    fn default() -> Self {
        (&ModelConfig::standard(2)).into()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Worker threads for gradients and inference; 0 uses every core.
    pub threads: usize,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            epochs: t.epochs,
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            seed: t.seed,
            threads: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("runs/default"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSection,
    #[serde(default)]
    pub model: ModelSection,
    pub training: TrainingSection,
    pub output: OutputSection,
}

impl RunConfig {
    pub fn from_toml(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.to_string(),
            reason: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a file; relative dataset and output paths resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut cfg = Self::from_toml(&text, &path.display().to_string())?;
        if let Some(base) = path.parent() {
            if cfg.data.root.is_relative() {
                cfg.data.root = base.join(&cfg.data.root);
            }
            if cfg.output.dir.is_relative() {
                cfg.output.dir = base.join(&cfg.output.dir);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("configuration serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.into()));
        self.model_config()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.training.epochs == 0 {
            return bad("training.epochs must be at least 1");
        }
        if !(self.training.learning_rate > 0.0) || !self.training.learning_rate.is_finite() {
            return bad("training.learning_rate must be positive");
        }
        if self.training.batch_size == 0 {
            return bad("training.batch_size must be at least 1");
        }
        if !(0.0..1.0).contains(&self.data.val_fraction) {
            return bad("data.val_fraction must be in [0, 1)");
        }
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        (&self.model).into()
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.training.epochs,
            learning_rate: self.training.learning_rate,
            batch_size: self.training.batch_size,
            seed: self.training.seed,
        }
    }

    /// Worker count after resolving 0 to the machine's parallelism.
    pub fn threads(&self) -> usize {
        match self.training.threads {
            0 => std::thread::available_parallelism().map_or(1, |n| n.get()),
            n => n,
        }
    }
}
