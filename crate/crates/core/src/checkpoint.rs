//! JSON checkpoints holding everything needed to predict on new data.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{TrainConfig, TOOLKIT_VERSION};
use crate::error::{Error, Result};
use crate::model::PeGnnModel;
use crate::pipeline::TransformRecord;

pub const FORMAT: &str = "pegnn-checkpoint";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub format_version: u32,
    pub toolkit_version: String,
    pub config_hash: String,
    pub config: TrainConfig,
    pub best_epoch: usize,
    pub transform: TransformRecord,
    pub model: PeGnnModel,
}

impl Checkpoint {
    pub fn new(config: &TrainConfig, best_epoch: usize, transform: TransformRecord, model: PeGnnModel) -> Self {
        Self {
            format: FORMAT.into(),
            format_version: FORMAT_VERSION,
            toolkit_version: TOOLKIT_VERSION.into(),
            config_hash: config.hash(),
            config: config.clone(),
            best_epoch,
            transform,
            model,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text).map_err(|e| Error::Format {
            path: path.to_owned(),
            msg: e.to_string(),
        })?;
        if ck.format != FORMAT || ck.format_version != FORMAT_VERSION {
            return Err(Error::Format {
                path: path.to_owned(),
                msg: format!(
                    "unsupported checkpoint format {} v{} (expected {FORMAT} v{FORMAT_VERSION})",
                    ck.format, ck.format_version
                ),
            });
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, path)
    }
}
