//! Backbone pretraining, category-specific prompt initialization, topology
//! guided refinement, the shared-prompt baseline, and checkpoints.

mod checkpoint;
pub mod optim;
mod stages;

pub use checkpoint::{read_checkpoint_manifest, CheckpointManifest, CHECKPOINT_FORMAT_VERSION};
pub use optim::{adam_step, AdamConfig, AdamState, SlicedAdam};
pub use stages::{
    epoch_batches, patch_tokens, pretrain, run_cspi, run_shared, run_tgpr, stage_loss, train,
    train_baseline, train_from, StepLoss, TrainOutcome, TrainState,
};

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::counting_head::HeadConfig;
use crate::encoder::{MiniViTConfig, PretrainConfig};
use crate::error::{Error, Result};
use crate::losses::{LossWeights, ReconMetric};
use crate::prompts::FusionOptions;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Frozen backbone, fresh prompts and head.
    Pretrained,
    Cspi,
    Tgpr,
    /// Shared single-prompt baseline.
    SharedVpt,
}

impl Stage {
    pub fn code(self) -> u8 {
        match self {
            Stage::Pretrained => 0,
            Stage::Cspi => 1,
            Stage::Tgpr => 2,
            Stage::SharedVpt => 3,
        }
    }

    pub fn from_code(c: u8) -> Result<Self> {
        match c {
            0 => Ok(Stage::Pretrained),
            1 => Ok(Stage::Cspi),
            2 => Ok(Stage::Tgpr),
            3 => Ok(Stage::SharedVpt),
            other => Err(Error::Format(format!("unknown stage code {other}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Stage::Pretrained => "pretrained",
            Stage::Cspi => "cspi",
            Stage::Tgpr => "tgpr",
            Stage::SharedVpt => "shared_vpt",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub model: MiniViTConfig,
    pub head: HeadConfig,
    /// Prompt tokens per prompted layer.
    pub prompt_tokens: usize,
    pub stage0_steps: usize,
    pub stage0_batch_size: usize,
    pub stage0_learning_rate: f64,
    /// Last CSPI epoch.
    pub e1: usize,
    /// Last TGPR epoch (total epochs).
    pub e2: usize,
    pub k: usize,
    pub loss_weights: LossWeights,
    pub learning_rate: f64,
    /// Learning rate for the prompt set; falls back to `learning_rate`.
    pub prompt_learning_rate: Option<f64>,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub normalize_fusion_weights: bool,
    pub nonnegative_weights: bool,
    pub recon_metric: ReconMetric,
    /// Validate every intermediate value for NaN/Inf.
    pub checked: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: MiniViTConfig::default(),
            head: HeadConfig::default(),
            prompt_tokens: 4,
            stage0_steps: 2000,
            stage0_batch_size: 8,
            stage0_learning_rate: 1e-3,
            e1: 10,
            e2: 20,
            k: 4,
            loss_weights: LossWeights::default(),
            learning_rate: 1e-3,
            prompt_learning_rate: None,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 8,
            seed: 0,
            normalize_fusion_weights: false,
            nonnegative_weights: false,
            recon_metric: ReconMetric::L2,
            checked: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.head.validate()?;
        self.loss_weights.validate()?;
        self.adam().validate()?;
        self.prompt_adam().validate()?;
        self.pretrain_config().validate()?;
        if !(0 < self.e1 && self.e1 < self.e2) {
            return Err(Error::Validation(format!(
                "epochs must satisfy 0 < e1 < e2, got e1 = {}, e2 = {}",
                self.e1, self.e2
            )));
        }
        if self.k == 0 {
            return Err(Error::Validation("K must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Validation("batch_size must be positive".into()));
        }
        if self.prompt_tokens == 0 {
            return Err(Error::Validation("prompt_tokens must be positive".into()));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }

    pub fn prompt_adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.prompt_learning_rate.unwrap_or(self.learning_rate),
            ..self.adam()
        }
    }

    pub fn pretrain_config(&self) -> PretrainConfig {
        PretrainConfig {
            steps: self.stage0_steps,
            batch_size: self.stage0_batch_size,
            adam: AdamConfig {
                learning_rate: self.stage0_learning_rate,
                ..self.adam()
            },
            tau: self.loss_weights.tau,
            prompt_tokens: self.prompt_tokens,
        }
    }

    pub fn fusion(&self) -> FusionOptions {
        FusionOptions {
            normalize_weights: self.normalize_fusion_weights,
            nonnegative_weights: self.nonnegative_weights,
        }
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text)
            .map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?;
        Ok(cfg)
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub epoch: usize,
    pub stage: Stage,
    pub step: usize,
    pub l_mse: f64,
    pub l_con: f64,
    pub l_recon: Option<f64>,
    pub total: f64,
}

pub fn write_log(path: &Path, records: &[LogRecord]) -> Result<()> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

pub fn read_log(path: &Path) -> Result<Vec<LogRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}
