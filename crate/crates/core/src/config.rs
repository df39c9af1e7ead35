//! The JSON document accepted by every command-line subcommand.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::counting_head::HeadConfig;
use crate::data::{CatalogConfig, DatasetConfig, RenderConfig, Split};
use crate::encoder::MiniViTConfig;
use crate::error::{Error, Result};
use crate::eval::EvalMode;
use crate::training::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub split: Split,
    pub mode: EvalMode,
    /// K at inference; falls back to the training K.
    pub k: Option<usize>,
    pub k_values: Vec<usize>,
    pub bench_images: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            split: Split::Test,
            mode: EvalMode::Sdvpt,
            k: None,
            k_values: vec![1, 2, 4, 8, 16],
            bench_images: 32,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub data: DatasetConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl ExperimentConfig {
    /// 8 seen and 4 unseen categories on 32x32 images. Trains in seconds and
    /// is meant for trying the pipeline, not for comparing methods.
    pub fn small() -> Self {
        let data = DatasetConfig {
            catalog: CatalogConfig {
                n_seen: 8,
                n_unseen: 4,
                text_dim: 16,
                ..Default::default()
            },
            render: RenderConfig {
                image_size: 32,
                density_grid: 8,
                min_radius: 1.5,
                max_radius: 2.5,
                ..Default::default()
            },
            train_per_category: 8,
            val_per_category: 2,
            test_per_category: 4,
            count_min: 1,
            count_max: 12,
            distractors_max: 0,
        };
        let train = TrainConfig {
            model: MiniViTConfig {
                image_size: 32,
                patch_size: 8,
                joint_dim: 16,
                ..Default::default()
            },
            head: HeadConfig {
                init_count: 4.0,
                ..Default::default()
            },
            stage0_steps: 300,
            e1: 3,
            e2: 6,
            k: 2,
            ..Default::default()
        };
        Self {
            data,
            train,
            eval: EvalConfig {
                k_values: vec![1, 2, 4],
                bench_images: 8,
                ..Default::default()
            },
        }
    }

    /// Reads a config file; missing fields take their defaults.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text)
            .map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.train.validate()?;
        if self.eval.k == Some(0) || self.eval.k_values.contains(&0) {
            return Err(Error::Validation("K must be at least 1".into()));
        }
        let (m, d) = (&self.train.model, &self.data);
        if m.image_size != d.render.image_size {
            return Err(Error::Validation(format!(
                "model image_size {} differs from rendered image_size {}",
                m.image_size, d.render.image_size
            )));
        }
        if m.joint_dim != d.catalog.text_dim {
            return Err(Error::Validation(format!(
                "joint_dim {} differs from text_dim {}",
                m.joint_dim, d.catalog.text_dim
            )));
        }
        if d.render.density_grid != 2 * m.grid() {
            return Err(Error::Validation(format!(
                "density_grid must be {} (twice the patch grid), got {}",
                2 * m.grid(),
                d.render.density_grid
            )));
        }
        Ok(())
    }

    /// Seeds training with `seed`; the dataset is generated from the same value.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.train.seed = seed;
        self
    }

    pub fn eval_k(&self) -> usize {
        self.eval.k.unwrap_or(self.train.k)
    }
}
