use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Pipeline step in which an error occurred.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Config,
    Load,
    Crop,
    Normalize,
    Extract,
    Denormalize,
    Induce,
    Rescale,
    Project,
    Noise,
    Reconstruct,
    Write,
    Compare,
    Report,
    Evaluate,
    Augment,
    Manifest,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Config => "config",
            Stage::Load => "load",
            Stage::Crop => "crop",
            Stage::Normalize => "normalize",
            Stage::Extract => "extract",
            Stage::Denormalize => "denormalize",
            Stage::Induce => "induce",
            Stage::Rescale => "rescale",
            Stage::Project => "project",
            Stage::Noise => "noise",
            Stage::Reconstruct => "reconstruct",
            Stage::Write => "write",
            Stage::Compare => "compare",
            Stage::Report => "report",
            Stage::Evaluate => "evaluate",
            Stage::Augment => "augment",
            Stage::Manifest => "manifest",
        }
    }
}

/// An error tagged with the stage, and preset when applicable.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageError {
    pub stage: Stage,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<usize>,
    pub message: String,
}

impl StageError {
    pub fn new(stage: Stage, err: &Error) -> Self {
        StageError {
            stage,
            preset: None,
            message: err.to_string(),
        }
    }

    pub fn with_preset(mut self, preset: usize) -> Self {
        self.preset = Some(preset);
        self
    }
}

impl std::fmt::Display for StageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.preset {
            Some(p) => write!(f, "[{}] preset {p}: {}", self.stage.name(), self.message),
            None => write!(f, "[{}] {}", self.stage.name(), self.message),
        }
    }
}

impl std::error::Error for StageError {}

pub trait Staged<T> {
    fn stage(self, stage: Stage) -> std::result::Result<T, StageError>;
}

impl<T> Staged<T> for crate::error::Result<T> {
    fn stage(self, stage: Stage) -> std::result::Result<T, StageError> {
        self.map_err(|e| StageError::new(stage, &e))
    }
}
