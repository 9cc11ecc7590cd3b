use std::path::Path;

use serde::{Deserialize, Serialize};

use seqrec_core::model::ModelConfig;
use seqrec_core::train::TrainConfig;

use crate::failure::{CmdResult, Context, Failure};

/// Config file contents: model and training settings. Command-line flags
/// override individual fields.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl ExperimentConfig {
    pub fn load(path: Option<&Path>) -> CmdResult<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(Failure::usage)
            .context(format!("reading config {}", path.display()))?;
        serde_json::from_str(&text)
            .map_err(Failure::usage)
            .context(format!("parsing config {}", path.display()))
    }
}
