//! Architecture and training hyperparameters, as read from JSON run files.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::text::SyntheticSpec;
use crate::{Error, Result};

/// Every architectural hyperparameter of the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub hidden: usize,
    pub encoder_layers: usize,
    pub encoder_heads: usize,
    pub ff_width: usize,
    pub max_len: usize,
    /// One block's weights reused at every encoder depth.
    pub share_layers: bool,
    pub duma_heads: usize,
    pub duma_head_dim: usize,
    pub duma_layers: usize,
    /// Both co-attention directions use one projection set.
    pub share_directions: bool,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 30_000,
            hidden: 128,
            encoder_layers: 4,
            encoder_heads: 4,
            ff_width: 512,
            max_len: 128,
            share_layers: true,
            duma_heads: 4,
            duma_head_dim: 32,
            duma_layers: 1,
            share_directions: false,
            dropout: 0.0,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Albert-xxlarge sized encoder with 64 co-attention heads of width 64.
    pub fn reference_scale() -> Self {
        Self {
            vocab_size: 30_000,
            hidden: 4096,
            encoder_layers: 12,
            encoder_heads: 64,
            ff_width: 16_384,
            max_len: 512,
            share_layers: true,
            duma_heads: 64,
            duma_head_dim: 64,
            duma_layers: 1,
            share_directions: false,
            dropout: 0.0,
            seed: 0,
        }
    }

    /// Tiny configuration used by gradient checks.
    pub fn micro() -> Self {
        Self {
            vocab_size: 32,
            hidden: 16,
            encoder_layers: 2,
            encoder_heads: 2,
            ff_width: 16,
            max_len: 16,
            share_layers: false,
            duma_heads: 2,
            duma_head_dim: 8,
            duma_layers: 1,
            share_directions: false,
            dropout: 0.0,
            seed: 0,
        }
    }

    pub fn encoder_head_dim(&self) -> usize {
        self.hidden / self.encoder_heads
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("hidden", self.hidden),
            ("encoder_layers", self.encoder_layers),
            ("encoder_heads", self.encoder_heads),
            ("ff_width", self.ff_width),
            ("max_len", self.max_len),
            ("duma_heads", self.duma_heads),
            ("duma_head_dim", self.duma_head_dim),
            ("duma_layers", self.duma_layers),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("model.{name} must be positive")));
        }
        if !self.hidden.is_multiple_of(self.encoder_heads) {
            return Err(Error::Config(format!(
                "model.hidden {} is not divisible by model.encoder_heads {}",
                self.hidden, self.encoder_heads
            )));
        }
        if self.vocab_size < 5 {
            return Err(Error::Config("model.vocab_size must be at least 5".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("model.dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// Where a split's examples come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DataSource {
    /// One DREAM JSON file.
    Dream { path: PathBuf },
    /// A RACE split directory.
    Race { path: PathBuf },
    Synthetic(SyntheticSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub name: String,
    pub train: DataSource,
    pub dev: DataSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub peak_lr: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub epochs: usize,
    pub warmup_fraction: f64,
    /// Steps between dev evaluations; `None` picks 1000 for multi-task
    /// runs and 100 for single-task runs.
    pub eval_every: Option<usize>,
    pub seed: u64,
    pub tasks: Vec<TaskSpec>,
    /// Task whose dev accuracy selects the best checkpoint. Defaults to
    /// `dream` when present, otherwise the first task.
    pub primary_task: Option<String>,
    /// Writes elapsed seconds into metrics records (breaks byte-identical
    /// logs across runs).
    pub log_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 24,
            peak_lr: 1e-5,
            weight_decay: 0.01,
            clip_norm: 1.0,
            epochs: 5,
            warmup_fraction: 0.10,
            eval_every: None,
            seed: 0,
            tasks: Vec::new(),
            primary_task: None,
            log_wall_time: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be at least 1".into()));
        }
        if self.peak_lr.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
            return Err(Error::Config(format!("train.peak_lr must be positive, got {}", self.peak_lr)));
        }
        if !(self.warmup_fraction > 0.0 && self.warmup_fraction < 1.0) {
            return Err(Error::Config(format!(
                "train.warmup_fraction must lie in (0, 1), got {}",
                self.warmup_fraction
            )));
        }
        if self.clip_norm.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
            return Err(Error::Config("train.clip_norm must be positive".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("train.epochs must be at least 1".into()));
        }
        if self.eval_every == Some(0) {
            return Err(Error::Config("train.eval_every must be at least 1".into()));
        }
        if let Some(p) = &self.primary_task {
            if !self.tasks.iter().any(|t| &t.name == p) {
                return Err(Error::Config(format!("primary task {p:?} is not among the tasks")));
            }
        }
        Ok(())
    }

    pub fn resolved_eval_every(&self, task_count: usize) -> usize {
        self.eval_every.unwrap_or(if task_count > 1 { 1000 } else { 100 })
    }

    pub fn resolved_primary(&self) -> Option<String> {
        self.primary_task.clone().or_else(|| {
            self.tasks
                .iter()
                .find(|t| t.name == "dream")
                .or(self.tasks.first())
                .map(|t| t.name.clone())
        })
    }
}

/// Contents of a run configuration file.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}
