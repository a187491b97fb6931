//! The JSON experiment configuration and its cross-field validation.

use std::path::{Path, PathBuf};

use dpfedsim_core::data::PartitionScheme;
use dpfedsim_core::dp::DpConfig;
use dpfedsim_core::federation::TrainConfig;
use dpfedsim_core::nn::{Activation, LossKind, ModelSpec};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub data: DataConfig,
    pub train: TrainSection,
    pub privacy: PrivacySection,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub layer_sizes: Vec<usize>,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    #[serde(default = "default_loss")]
    pub loss: LossKind,
}

fn default_activation() -> Activation {
    Activation::Relu
}

fn default_loss() -> LossKind {
    LossKind::SoftmaxCrossEntropy
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub source: SourceConfig,
    pub partition: PartitionScheme,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SourceConfig {
    /// Gaussian class blobs generated from the experiment seed.
    Synthetic {
        classes: usize,
        dim: usize,
        per_class_train: usize,
        #[serde(default)]
        per_class_eval: usize,
        separation: f64,
    },
    /// Comma-separated values, label in the last column. Relative paths are
    /// resolved against the config file's directory.
    Csv {
        path: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        eval_path: Option<PathBuf>,
    },
}

/// Training knobs; defaults mirror the reference experiment setup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub local_lr: f64,
    #[serde(default = "default_server_lr")]
    pub server_lr: f64,
    #[serde(default = "default_local_steps")]
    pub local_steps: u32,
    pub rounds: u32,
    pub batch_size: usize,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_sparsity")]
    pub sparsity: f64,
    pub agents: usize,
}

fn default_server_lr() -> f64 {
    1.0
}

fn default_local_steps() -> u32 {
    30
}

fn default_lambda() -> f64 {
    0.4
}

fn default_sparsity() -> f64 {
    0.7
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrivacySection {
    pub clip_threshold: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_multiplier: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_epsilon: Option<f64>,
    pub sample_prob: f64,
    /// Defaults to 1 / agents when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::validation(format!("cannot read config {}: {e}", path.display()))
        })?;
        let config: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::validation(format!("invalid config {}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    /// Cross-field checks, reported with the offending field's path.
    pub fn validate(&self) -> Result<()> {
        self.model_spec().validate().map_err(CliError::from)?;
        self.train_config().validate().map_err(CliError::from)?;
        self.dp_config().validate().map_err(CliError::from)?;
        match &self.data.source {
            SourceConfig::Synthetic {
                classes,
                dim,
                per_class_train,
                separation,
                ..
            } => {
                if *classes < 2 {
                    return Err(CliError::validation(
                        "data.source.classes must be at least 2",
                    ));
                }
                if *dim == 0 {
                    return Err(CliError::validation("data.source.dim must be positive"));
                }
                if *per_class_train == 0 {
                    return Err(CliError::validation(
                        "data.source.per_class_train must be positive",
                    ));
                }
                if separation.is_nan() || *separation < 0.0 {
                    return Err(CliError::validation(
                        "data.source.separation must be non-negative",
                    ));
                }
                if *dim != self.model.layer_sizes[0] {
                    return Err(CliError::validation(format!(
                        "data.source.dim is {} but model.layer_sizes starts with {}",
                        dim, self.model.layer_sizes[0]
                    )));
                }
                if *classes != *self.model.layer_sizes.last().unwrap() {
                    return Err(CliError::validation(format!(
                        "data.source.classes is {} but model.layer_sizes ends with {}",
                        classes,
                        self.model.layer_sizes.last().unwrap()
                    )));
                }
            }
            SourceConfig::Csv { .. } => {}
        }
        if let PartitionScheme::Dirichlet { alpha } = self.data.partition {
            if alpha.is_nan() || alpha <= 0.0 {
                return Err(CliError::validation(
                    "data.partition.alpha must be positive",
                ));
            }
        }
        Ok(())
    }

    pub fn model_spec(&self) -> ModelSpec {
        ModelSpec {
            layer_sizes: self.model.layer_sizes.clone(),
            activation: self.model.activation,
            loss: self.model.loss,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            local_lr: self.train.local_lr,
            server_lr: self.train.server_lr,
            local_steps: self.train.local_steps,
            rounds: self.train.rounds,
            batch_size: self.train.batch_size,
            lambda: self.train.lambda,
            sparsity: self.train.sparsity,
            num_agents: self.train.agents,
            seed: self.seed,
        }
    }

    pub fn dp_config(&self) -> DpConfig {
        DpConfig {
            clip_threshold: self.privacy.clip_threshold,
            noise_multiplier: self.privacy.noise_multiplier,
            target_epsilon: self.privacy.target_epsilon,
            sample_prob: self.privacy.sample_prob,
            delta: self.privacy.delta.unwrap_or(1.0 / self.train.agents as f64),
        }
    }

    /// FNV-1a hash of the canonical JSON form; identifies a resolved cell in
    /// sweep resume checks.
    pub fn content_hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        for byte in text.as_bytes() {
            hash ^= u64::from(*byte);
            hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
        }
        format!("{hash:016x}")
    }
}
