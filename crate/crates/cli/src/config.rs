//! JSON experiment configuration.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ric_core::optim::{OptimizerKind, TrainConfig};
use serde::{Deserialize, Serialize};

/// Element type used for training and inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

/// Training hyperparameters plus data and output locations. Every key is
/// optional; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub lr_decay: f64,
    pub decay_every: usize,
    pub seed: u64,
    pub subset_size: Option<usize>,
    pub optimizer: String,
    /// Training images held out for per-epoch validation.
    pub val_size: usize,
    pub precision: Precision,
    pub data_dir: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr0: t.lr0,
            lr_decay: t.lr_decay,
            decay_every: t.decay_every,
            seed: t.seed,
            subset_size: t.subset_size,
            optimizer: t.optimizer.to_string(),
            val_size: 10_000,
            precision: Precision::F64,
            data_dir: None,
            output_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::from_json(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let optimizer: OptimizerKind = self.optimizer.parse()?;
        let config = TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr0: self.lr0,
            lr_decay: self.lr_decay,
            decay_every: self.decay_every,
            seed: self.seed,
            subset_size: self.subset_size,
            optimizer,
        };
        config.validate()?;
        Ok(config)
    }

    /// Checks hyperparameters and that configured directories exist.
    pub fn validate(&self) -> Result<()> {
        self.train_config()?;
        for dir in [&self.data_dir, &self.output_dir].into_iter().flatten() {
            if !dir.is_dir() {
                bail!("directory {} does not exist", dir.display());
            }
        }
        Ok(())
    }
}
