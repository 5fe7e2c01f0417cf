use std::fmt;
use std::path::Path;

use stvo_core::data::DataError;
use stvo_core::evaluation::EvalError;
use stvo_core::geometry::GeometryError;
use stvo_core::inference::InferenceError;
use stvo_core::model::ModelError;
use stvo_core::synthetic::SynthError;
use stvo_core::training::TrainingError;

use crate::checkpoint::CheckpointError;
use crate::config::ConfigError;
use crate::kitti::KittiError;

/// Failure class, mapped to the process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numeric,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Usage => 1,
            ErrorKind::Data => 2,
            ErrorKind::Numeric => 3,
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
}

impl CliError {
    pub fn new(kind: ErrorKind, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Usage, message)
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Data, message)
    }

    pub fn io(path: &Path, err: std::io::Error) -> Self {
        Self::data(format!("{}: {err}", path.display()))
    }

    pub fn exit_code(&self) -> i32 {
        self.kind.exit_code()
    }

    /// Prefixes the message with context.
    pub fn context(mut self, what: impl fmt::Display) -> Self {
        self.message = format!("{what}: {}", self.message);
        self
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

fn model_kind(e: &ModelError) -> ErrorKind {
    match e {
        ModelError::NonFiniteActivation { .. } => ErrorKind::Numeric,
        ModelError::InvalidConfig(_) => ErrorKind::Usage,
        _ => ErrorKind::Data,
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        Self::new(model_kind(&e), e.to_string())
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        let kind = match &e {
            DataError::DegenerateStd { .. } => ErrorKind::Numeric,
            DataError::Model(m) => model_kind(m),
            _ => ErrorKind::Data,
        };
        Self::new(kind, e.to_string())
    }
}

impl From<TrainingError> for CliError {
    fn from(e: TrainingError) -> Self {
        let kind = match &e {
            TrainingError::NonFiniteLoss { .. } => ErrorKind::Numeric,
            TrainingError::InvalidConfig(_) => ErrorKind::Usage,
            TrainingError::Model(m) => model_kind(m),
            _ => ErrorKind::Data,
        };
        Self::new(kind, e.to_string())
    }
}

impl From<InferenceError> for CliError {
    fn from(e: InferenceError) -> Self {
        match e {
            InferenceError::Data(d) => d.into(),
            InferenceError::Model(m) => m.into(),
            other => Self::new(ErrorKind::Numeric, other.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        let kind = match e {
            EvalError::DegenerateGeometry => ErrorKind::Numeric,
            _ => ErrorKind::Data,
        };
        Self::new(kind, e.to_string())
    }
}

impl From<GeometryError> for CliError {
    fn from(e: GeometryError) -> Self {
        Self::data(e.to_string())
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        Self::usage(e.to_string())
    }
}

impl From<KittiError> for CliError {
    fn from(e: KittiError) -> Self {
        Self::data(e.to_string())
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        let kind = match e {
            CheckpointError::ConfigMismatch(_) => ErrorKind::Usage,
            _ => ErrorKind::Data,
        };
        Self::new(kind, e.to_string())
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        Self::usage(e.to_string())
    }
}
