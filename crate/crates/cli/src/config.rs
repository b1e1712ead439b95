use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use pairedseg::dataset::DataConfig;
use pairedseg::experiments::GradExpExperiment;
use pairedseg::segmodel::ModelConfig;
use pairedseg::trainer::{EmbeddingConfig, TrainConfig};

use crate::{CliError, Result};

pub const CONFIG_VERSION: u32 = 1;

/// Evaluation options.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Leave class 0 (background) out of the mIoU mean.
    pub exclude_background: bool,
}

/// Everything a command needs, read from one JSON file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub format_version: u32,
    /// Default output directory when `--out` is not given.
    pub out: Option<PathBuf>,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub embedding: EmbeddingConfig,
    pub gradexp: GradExpExperiment,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            format_version: CONFIG_VERSION,
            out: None,
            data: DataConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            embedding: EmbeddingConfig::default(),
            gradexp: GradExpExperiment::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| CliError::Config {
            path: origin.to_path_buf(),
            msg: e.to_string(),
        })?;
        if cfg.format_version != CONFIG_VERSION {
            return Err(CliError::Config {
                path: origin.to_path_buf(),
                msg: format!(
                    "format_version {} is not supported (expected {CONFIG_VERSION})",
                    cfg.format_version
                ),
            });
        }
        Ok(cfg)
    }

    /// Reads `path`, or returns the defaults when no file is given.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| CliError::Io {
                    path: p.to_path_buf(),
                    source: e,
                })?;
                Self::parse(&text, p)
            }
        }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config always serializes");
        hex::encode(Sha256::digest(bytes))
    }
}
