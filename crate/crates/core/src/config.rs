//! Experiment configuration: one TOML file, every field defaulted.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::data::{DataError, ToyDatasetSpec, ToySkeletonSpec};
use crate::guidance::MaskMode;
use crate::models::{Architecture, ModelSpec};
use crate::train::{SynthesisMode, TrainConfig, TrainError};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config: `{field}` {constraint}")]
    Invalid { field: String, constraint: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Used for the image synthesis paths.
    pub architecture: Architecture,
    /// Per-skeleton embedding width for `skeleton_mix`.
    pub skeleton_embed: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            architecture: Architecture::Linear,
            skeleton_embed: 4,
        }
    }
}

/// Grids of the ablation suite. Empty lists disable a sub-suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub alphas: Vec<f64>,
    pub mask_modes: Vec<MaskMode>,
    /// Signed relative area changes; positive dilates, negative erodes, 0 is
    /// the unperturbed reference.
    pub perturbations: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            alphas: vec![0.0, 0.01, 0.03, 0.05, 0.07, 0.09],
            mask_modes: vec![MaskMode::Provenance, MaskMode::Random, MaskMode::Unmasked],
            perturbations: vec![0.0, 0.1, 0.3, -0.1, -0.3],
            seeds: vec![0, 1, 2, 3, 4],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Root seed; copied into every section by [`ExperimentConfig::resolve`].
    pub seed: u64,
    pub data: ToyDatasetSpec,
    pub skeleton: ToySkeletonSpec,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub ablation: AblationConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data: ToyDatasetSpec::default(),
            skeleton: ToySkeletonSpec::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            ablation: AblationConfig::default(),
        }
    }
}

fn invalid(field: impl Into<String>, constraint: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.into(),
        constraint: constraint.into(),
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Propagates the root seed and validates every section.
    pub fn resolve(mut self) -> Result<Self, ConfigError> {
        self.data.seed = self.seed;
        self.skeleton.seed = self.seed;
        self.train.seed = self.seed;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let data_err = |section: &str, e: DataError| match e {
            DataError::InvalidSpec { field, constraint } => invalid(format!("{section}.{field}"), constraint),
            other => invalid(section, other.to_string()),
        };
        match self.train.synthesis {
            SynthesisMode::SkeletonMix => {
                self.skeleton.validate().map_err(|e| data_err("skeleton", e))?;
                if self.model.skeleton_embed == 0 {
                    return Err(invalid("model.skeleton_embed", "must be at least 1"));
                }
                if self.train.skeleton_t != 0 && self.skeleton.skeletons % self.train.skeleton_t != 0 {
                    return Err(invalid("train.skeleton_t", "must divide skeleton.skeletons"));
                }
            }
            _ => self.data.validate().map_err(|e| data_err("data", e))?,
        }
        match &self.model.architecture {
            Architecture::Skeleton { .. } => return Err(invalid("model.architecture", "skeleton models are selected by train.synthesis = \"skeleton_mix\"")),
            Architecture::Mlp { hidden } if hidden.is_empty() || hidden.contains(&0) => {
                return Err(invalid("model.architecture.hidden", "needs 1 or more non-zero widths"))
            }
            Architecture::TinyConv { channels } if channels.is_empty() || channels.contains(&0) => {
                return Err(invalid("model.architecture.channels", "needs 1 or more non-zero widths"))
            }
            _ => {}
        }
        self.train.validate().map_err(|e| match e {
            TrainError::InvalidConfig { field, constraint } => invalid(format!("train.{field}"), constraint),
            other => invalid("train", other.to_string()),
        })?;
        for (i, &a) in self.ablation.alphas.iter().enumerate() {
            if !(a >= 0.0 && a.is_finite()) {
                return Err(invalid(format!("ablation.alphas[{i}]"), "must be finite and >= 0"));
            }
        }
        for (i, &d) in self.ablation.perturbations.iter().enumerate() {
            if !(d.is_finite() && d.abs() < 10.0) {
                return Err(invalid(format!("ablation.perturbations[{i}]"), "must be finite with magnitude < 10"));
            }
        }
        Ok(())
    }

    pub fn model_spec(&self) -> ModelSpec {
        match self.train.synthesis {
            SynthesisMode::SkeletonMix => ModelSpec {
                architecture: Architecture::Skeleton {
                    embed: self.model.skeleton_embed,
                },
                input_shape: vec![self.skeleton.skeletons, self.skeleton.frames, self.skeleton.joints, self.skeleton.dims],
                num_classes: self.skeleton.num_classes,
            },
            _ => ModelSpec {
                architecture: self.model.architecture.clone(),
                input_shape: vec![self.data.image_size[0], self.data.image_size[1], self.data.channels],
                num_classes: self.data.num_classes,
            },
        }
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn content_hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}
