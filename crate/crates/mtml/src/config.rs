//! Run configuration files.
//!
//! One TOML file drives the whole pipeline. Sections map onto the module
//! configs; the model's input width and head sizes are not listed because
//! they always come from the dataset at hand.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::SynthConfig;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub synth: SynthSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub eval: EvalSection,
    pub paths: PathsSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub num_global_identities: usize,
    pub num_cameras: usize,
    pub feature_dim: usize,
    pub images_per_identity_per_camera: usize,
    pub camera_presence_probability: f64,
    pub cluster_spread: f64,
    pub camera_shift_scale: f64,
    pub seed: u64,
}

impl Default for SynthSection {
    fn default() -> Self {
        let c = SynthConfig::default();
        Self {
            num_global_identities: c.num_global_identities,
            num_cameras: c.num_cameras,
            feature_dim: c.feature_dim,
            images_per_identity_per_camera: c.images_per_identity_per_camera,
            camera_presence_probability: c.camera_presence_probability,
            cluster_spread: c.cluster_spread,
            camera_shift_scale: c.camera_shift_scale,
            seed: c.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub hidden_dims: Vec<usize>,
    pub feature_dim: usize,
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            hidden_dims: vec![64],
            feature_dim: 64,
            init_scale: 1.0,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub lambda_ml: f64,
    pub initial_lr: f64,
    pub pretrain_epochs: usize,
    pub pretrain_decay_every: usize,
    pub decay_factor: f64,
    pub ml_iterations: usize,
    pub epochs_per_iteration: usize,
    pub ml_decay_after_epoch: usize,
    pub ml_base_lr: f64,
    pub persons_per_camera: usize,
    pub images_per_person: usize,
    pub associate_after_pretrain: bool,
    pub mt_only: bool,
    pub seed: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let c = TrainConfig::default();
        Self {
            lambda_ml: c.lambda_ml,
            initial_lr: c.initial_lr,
            pretrain_epochs: c.pretrain_epochs,
            pretrain_decay_every: c.pretrain_decay_every,
            decay_factor: c.decay_factor,
            ml_iterations: c.ml_iterations,
            epochs_per_iteration: c.epochs_per_iteration,
            ml_decay_after_epoch: c.ml_decay_after_epoch,
            ml_base_lr: c.ml_base_lr,
            persons_per_camera: c.persons_per_camera,
            images_per_person: c.images_per_person,
            associate_after_pretrain: c.associate_after_pretrain,
            mt_only: c.mt_only,
            seed: c.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub probe_fraction: f64,
    pub split_seed: u64,
    pub ranks: Vec<usize>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            probe_fraction: 0.25,
            split_seed: 99,
            ranks: vec![1, 5, 10, 20],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    pub dataset: PathBuf,
    pub run_dir: PathBuf,
}

impl Default for PathsSection {
    fn default() -> Self {
        Self {
            dataset: PathBuf::from("out/dataset.icsd"),
            run_dir: PathBuf::from("out/run"),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self)
            .map_err(|e| Error::InvalidConfig(format!("serialize: {e}")))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            num_global_identities: self.synth.num_global_identities,
            num_cameras: self.synth.num_cameras,
            feature_dim: self.synth.feature_dim,
            images_per_identity_per_camera: self.synth.images_per_identity_per_camera,
            camera_presence_probability: self.synth.camera_presence_probability,
            cluster_spread: self.synth.cluster_spread,
            camera_shift_scale: self.synth.camera_shift_scale,
            seed: self.synth.seed,
        }
    }

    /// Model settings bound to a concrete dataset's width and label spaces.
    pub fn model_config(&self, input_dim: usize, heads: Vec<usize>) -> ModelConfig {
        ModelConfig {
            input_dim,
            hidden_dims: self.model.hidden_dims.clone(),
            feature_dim: self.model.feature_dim,
            heads,
            init_scale: self.model.init_scale,
            seed: self.model.seed,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lambda_ml: self.train.lambda_ml,
            initial_lr: self.train.initial_lr,
            pretrain_epochs: self.train.pretrain_epochs,
            pretrain_decay_every: self.train.pretrain_decay_every,
            decay_factor: self.train.decay_factor,
            ml_iterations: self.train.ml_iterations,
            epochs_per_iteration: self.train.epochs_per_iteration,
            ml_decay_after_epoch: self.train.ml_decay_after_epoch,
            ml_base_lr: self.train.ml_base_lr,
            persons_per_camera: self.train.persons_per_camera,
            images_per_person: self.train.images_per_person,
            associate_after_pretrain: self.train.associate_after_pretrain,
            mt_only: self.train.mt_only,
            seed: self.train.seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_is_lossless() {
        let mut config = RunConfig::default();
        config.synth.camera_presence_probability = 0.7;
        config.train.lambda_ml = 0.25;
        config.model.hidden_dims = vec![32, 16];
        let text = toml::to_string_pretty(&config).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(config, back);
        let text2 = toml::to_string_pretty(&back).unwrap();
        assert_eq!(text, text2);
    }

    #[test]
    fn missing_fields_take_defaults() {
        let config: RunConfig = toml::from_str("[train]\nlambda_ml = 0.75\n").unwrap();
        assert_eq!(config.train.lambda_ml, 0.75);
        assert_eq!(config.train.initial_lr, 0.05);
        assert_eq!(config.synth.num_cameras, 3);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let parsed: std::result::Result<RunConfig, _> = toml::from_str("[train]\nlearning = 1\n");
        assert!(parsed.is_err());
    }

    #[test]
    fn defaults_follow_module_defaults() {
        let config = RunConfig::default();
        assert_eq!(config.train_config(), TrainConfig::default());
        assert_eq!(config.synth_config(), SynthConfig::default());
    }
}
