use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::embedding::{Embedder, PromptSet, Registry};
use crate::error::{invalid, Result};
use crate::losses::{LossSchedule, OclTarget, ScheduleKind, TrainMode};
use crate::segmodel::{InjectionMode, ModelConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Injection variant; unset means `clip` for `paired_full`, `off` otherwise.
    pub injection: Option<InjectionMode>,
    /// Feature-consistency schedule; unset means sigmoid with default shape.
    pub fcl: Option<LossSchedule>,
    /// Output-consistency schedule; unset means step with default shape.
    pub ocl: Option<LossSchedule>,
    pub lambda_f: f64,
    pub lambda_o: f64,
    pub ocl_target: OclTarget,
    /// Weight of the embedding-alignment loss on the composition weights.
    pub align_weight: f64,
    /// Write a checkpoint every this many epochs (0 disables).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: TrainMode::PairedFull,
            epochs: 40,
            batch_size: 2,
            lr: 1e-3,
            seed: 0,
            injection: None,
            fcl: None,
            ocl: None,
            lambda_f: 0.5,
            lambda_o: 0.5,
            ocl_target: OclTarget::Soft,
            align_weight: 1.0,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn injection(&self) -> InjectionMode {
        self.injection.unwrap_or(match self.mode {
            TrainMode::PairedFull => InjectionMode::Clip,
            _ => InjectionMode::Off,
        })
    }

    pub fn fcl_schedule(&self) -> LossSchedule {
        self.fcl
            .unwrap_or_else(|| LossSchedule::for_epochs(ScheduleKind::Sigmoid, self.lambda_f, self.epochs))
    }

    pub fn ocl_schedule(&self) -> LossSchedule {
        self.ocl
            .unwrap_or_else(|| LossSchedule::for_epochs(ScheduleKind::Step, self.lambda_o, self.epochs))
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(invalid!("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(invalid!("batch size must be at least 1"));
        }
        if !(self.lr > 0.0) {
            return Err(invalid!("learning rate must be positive, got {}", self.lr));
        }
        if !(self.align_weight >= 0.0) || !(self.lambda_f >= 0.0) || !(self.lambda_o >= 0.0) {
            return Err(invalid!("loss weights must be non-negative"));
        }
        self.fcl_schedule().validate()?;
        self.ocl_schedule().validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provider {
    /// Embeds the true composition (isolates the injection math).
    Oracle,
    /// Embeds image pixels.
    Pixels,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptChoice {
    Default13,
    Default4,
    /// JSON registry file.
    File(PathBuf),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingConfig {
    pub dim: usize,
    pub seed: u64,
    pub provider: Provider,
    /// Oracle noise level.
    pub noise: f64,
    pub prompts: PromptChoice,
    /// Optional precomputed prompt vectors (checkpoint container).
    pub vectors: Option<PathBuf>,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            dim: crate::embedding::DEFAULT_DIM,
            seed: 0,
            provider: Provider::Oracle,
            noise: 0.02,
            prompts: PromptChoice::Default13,
            vectors: None,
        }
    }
}

impl EmbeddingConfig {
    pub fn registry(&self) -> Result<Registry> {
        match &self.prompts {
            PromptChoice::Default13 => Ok(Registry::default_13()),
            PromptChoice::Default4 => Ok(Registry::default_4()),
            PromptChoice::File(p) => Registry::from_json_file(p),
        }
    }
}

/// Everything a training run needs besides data, fully resolved.
#[derive(Clone, Debug)]
pub struct Setup {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub embedding: EmbeddingConfig,
    pub embedder: Embedder,
    pub prompts: PromptSet,
}

impl Setup {
    /// Resolves the injection variant and prompt count into the model config.
    pub fn new(mut model: ModelConfig, train: TrainConfig, embedding: EmbeddingConfig) -> Result<Self> {
        train.validate()?;
        if !(embedding.noise >= 0.0) {
            return Err(invalid!("embedding noise must be non-negative"));
        }
        let embedder = Embedder::new(embedding.dim, embedding.seed)?;
        let mut prompts = embedder.prompt_set(&embedding.registry()?);
        if let Some(path) = &embedding.vectors {
            prompts.load_vectors(path)?;
        }
        model.injection = train.injection();
        model.embed_dim = embedding.dim;
        model.prompt_count = prompts.len();
        model.validate()?;
        Ok(Self {
            model,
            train,
            embedding,
            embedder,
            prompts,
        })
    }
}
