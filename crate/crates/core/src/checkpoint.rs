//! Versioned JSON checkpoints. Floats are written in shortest round-trip
//! form, so save followed by load reproduces every `f64` bit for bit.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Vocabulary;
use crate::optim::OptimState;
use crate::tagger::{ModelParams, ParamSet, TaggerConfig, TaggerError};
use crate::tagging::TagScheme;

pub const FORMAT: &str = "fmim-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed checkpoint: {0}")]
    Json(#[from] serde_json::Error),
    #[error("not a checkpoint (format {found:?})")]
    Format { found: String },
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("vocabulary has {vocab} entries but the model expects {model}")]
    VocabSize { vocab: usize, model: usize },
    #[error("scheme has {scheme} tags but the model expects {model}")]
    TagCount { scheme: usize, model: usize },
    #[error(transparent)]
    Tagger(#[from] TaggerError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: TaggerConfig,
    pub scheme: TagScheme,
    pub vocab: Vocabulary,
    pub params: ParamSet,
    pub optim: Option<OptimState>,
}

/// A trained tagger with everything needed to decode new text.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub params: ModelParams,
    pub vocab: Vocabulary,
    pub scheme: TagScheme,
}

impl Checkpoint {
    pub fn new(model: &TrainedModel, optim: Option<OptimState>) -> Self {
        Self {
            format: FORMAT.to_string(),
            version: VERSION,
            config: model.params.config().clone(),
            scheme: model.scheme.clone(),
            vocab: model.vocab.clone(),
            params: model.params.values.clone(),
            optim,
        }
    }

    pub fn to_json(&self) -> Result<String, CheckpointError> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, CheckpointError> {
        // peek at the header first so foreign JSON gets a clear error
        #[derive(Deserialize)]
        struct Header {
            format: String,
            version: u32,
        }
        let header: Header = serde_json::from_str(text)?;
        if header.format != FORMAT {
            return Err(CheckpointError::Format {
                found: header.format,
            });
        }
        if header.version != VERSION {
            return Err(CheckpointError::Version(header.version));
        }
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn into_model(self) -> Result<TrainedModel, CheckpointError> {
        if self.vocab.len() != self.config.vocab_size {
            return Err(CheckpointError::VocabSize {
                vocab: self.vocab.len(),
                model: self.config.vocab_size,
            });
        }
        if self.scheme.num_tags() != self.config.num_tags {
            return Err(CheckpointError::TagCount {
                scheme: self.scheme.num_tags(),
                model: self.config.num_tags,
            });
        }
        Ok(TrainedModel {
            params: ModelParams::from_values(self.config, self.params)?,
            vocab: self.vocab,
            scheme: self.scheme,
        })
    }
}
