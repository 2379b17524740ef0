//! Pipeline configuration: one JSON document with a section per stage.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataio::PhantomSpec;
use crate::discovery::{AeConfig, DiscoveryConfig};
use crate::error::{Error, Result};
use crate::finetune::{FinetuneConfig, ToyTargetConfig};
use crate::network::model::hex;
use crate::network::ModelConfig;
use crate::pretrain::PretrainOptions;
use crate::transforms::TransformConfig;
use crate::types::{LossWeights, PretrainConfig, Shape3};

/// U-Net shape; the input shape and class count come from the pretraining section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchConfig {
    pub depth: usize,
    pub base_width: usize,
    /// Hidden widths of the classification head; `C` is appended.
    pub fc_hidden: Vec<usize>,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig { depth: 4, base_width: 16, fc_hidden: vec![1024] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct SemgenConfig {
    pub phantom: PhantomSpec,
    pub discovery: DiscoveryConfig,
    pub pretrain: PretrainConfig,
    pub model: ArchConfig,
    pub options: PretrainOptions,
    pub targets: ToyTargetConfig,
    pub finetune: FinetuneConfig,
}

impl SemgenConfig {
    /// The small recipe that trains on one CPU core in a few minutes.
    pub fn desk() -> Self {
        let canonical = Shape3::new(32, 32, 16);
        SemgenConfig {
            phantom: PhantomSpec::default(),
            discovery: DiscoveryConfig {
                autoencoder: AeConfig {
                    input_shape: canonical,
                    channels: vec![4, 8, 16, 32],
                    latent_width: 64,
                    epochs: 20,
                    batch_size: 2,
                    learning_rate: 5e-3,
                },
                ..DiscoveryConfig::default()
            },
            pretrain: PretrainConfig {
                k: 5,
                c: 6,
                canonical_crop_shape: canonical,
                scale_factors: vec![1.0],
                loss_weights: LossWeights { lambda_cls: 1.0, lambda_rec: 1.0 },
                warmup_epochs: 20,
                joint_epochs: 30,
                batch_size: 8,
                ..PretrainConfig::default()
            },
            model: ArchConfig { base_width: 8, ..ArchConfig::default() },
            options: PretrainOptions {
                transforms: TransformConfig {
                    p_nonlinear: 0.45,
                    p_shuffle: 0.25,
                    p_paint: 0.45,
                    ..TransformConfig::default()
                },
                ..PretrainOptions::default()
            },
            targets: ToyTargetConfig::default(),
            finetune: FinetuneConfig::default(),
        }
    }

    /// Sets the root seed of every stage.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.phantom.seed = seed;
        self.pretrain.seed = seed;
        self.finetune.seed = seed;
        self
    }

    pub fn model_config(&self) -> ModelConfig {
        let c = self.pretrain.c;
        let mut fc_widths = self.model.fc_hidden.clone();
        fc_widths.push(c);
        ModelConfig {
            depth: self.model.depth,
            base_width: self.model.base_width,
            fc_widths,
            ..ModelConfig::new(self.pretrain.canonical_crop_shape, c)
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.phantom.validate()?;
        self.discovery.validate()?;
        let n_train = self.phantom.n_patients - self.phantom.heldout_indices().len();
        crate::types::validate_config(self.pretrain.clone(), n_train)?;
        self.options.transforms.validate()?;
        self.model_config().validate()?;
        self.targets.validate()?;
        self.finetune.validate()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let cfg: SemgenConfig =
            serde_json::from_slice(&bytes).map_err(|e| Error::config("config", format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        hex(&Sha256::digest(serde_json::to_string(self).expect("config serializes").as_bytes()))
    }
}
