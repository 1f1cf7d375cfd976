//! Training configuration: presets, TOML I/O, validation and hashing.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::afe::AfeConfig;
use crate::attribute::AttributeHeadConfig;
use crate::backbone::BackboneConfig;
use crate::fixation::FixationDecoderConfig;
use crate::mask::MaskDecoderConfig;
use crate::nn::AdamConfig;
use crate::objective::{LossWeights, ObjectiveConfig};
use crate::{Error, Result};

/// Everything that shapes the network, as opposed to how it is trained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub fixation: FixationDecoderConfig,
    pub attribute: AttributeHeadConfig,
    pub afe: AfeConfig,
    pub mask: MaskDecoderConfig,
    pub objective: ObjectiveConfig,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        self.fixation.validate()?;
        self.afe.validate()?;
        if self.mask.blocks == 0 {
            return Err(Error::Config("mask decoder needs at least one block".into()));
        }
        if !(0.0..1.0).contains(&self.attribute.dropout) {
            return Err(Error::Config(format!("dropout {} must lie in [0, 1)", self.attribute.dropout)));
        }
        if self.objective.shared_dim == 0 || self.objective.hidden == 0 {
            return Err(Error::Config("projector widths must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Factor applied to `lr` after `lr_decay_epoch`.
    pub lr_decay: f64,
    pub lr_decay_epoch: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Stops training early after this many optimiser steps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<u64>,
    /// Random horizontal flips of image, mask and fixation.
    pub hflip: bool,
    /// Write an intermediate checkpoint every this many epochs; 0 disables.
    pub checkpoint_every: usize,
    pub loss_weights: LossWeights,
    pub adam: AdamConfig,
    pub backbone: BackboneConfig,
    pub fixation: FixationDecoderConfig,
    pub attribute: AttributeHeadConfig,
    pub afe: AfeConfig,
    pub mask: MaskDecoderConfig,
    pub objective: ObjectiveConfig,
}

impl TrainConfig {
    /// The full-scale settings: 336 px input, taps 8/16/24 of a 24-layer
    /// encoder, three fixation blocks, one mask decoder iteration, Adam at
    /// 1e-4 decayed by 0.2 after epoch 150 of 200.
    pub fn full_scale() -> Self {
        Self {
            epochs: 200,
            lr: 1e-4,
            lr_decay: 0.2,
            lr_decay_epoch: 150,
            batch_size: 8,
            seed: 0,
            max_steps: None,
            hflip: true,
            checkpoint_every: 10,
            loss_weights: LossWeights::default(),
            adam: AdamConfig::default(),
            backbone: BackboneConfig::full_scale(),
            fixation: FixationDecoderConfig::default(),
            attribute: AttributeHeadConfig::default(),
            afe: AfeConfig::default(),
            mask: MaskDecoderConfig::default(),
            objective: ObjectiveConfig::default(),
        }
    }

    /// A 64 px, 64-channel, depth-6 model that trains on one CPU core.
    pub fn toy() -> Self {
        Self {
            epochs: 1000,
            lr: 1e-3,
            lr_decay: 0.2,
            lr_decay_epoch: 750,
            batch_size: 8,
            seed: 0,
            max_steps: None,
            hflip: false,
            checkpoint_every: 0,
            loss_weights: LossWeights::default(),
            adam: AdamConfig::default(),
            backbone: BackboneConfig::toy(),
            fixation: FixationDecoderConfig::default(),
            attribute: AttributeHeadConfig { hidden: 64, dropout: 0.1 },
            afe: AfeConfig::default(),
            mask: MaskDecoderConfig {
                conv_channels: 32,
                ..MaskDecoderConfig::default()
            },
            objective: ObjectiveConfig { shared_dim: 32, hidden: 64 },
        }
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            backbone: self.backbone.clone(),
            fixation: self.fixation.clone(),
            attribute: self.attribute.clone(),
            afe: self.afe.clone(),
            mask: self.mask.clone(),
            objective: self.objective.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.lr)));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay.is_finite()) {
            return Err(Error::Config(format!("lr decay factor {} must be positive", self.lr_decay)));
        }
        if self.lr_decay_epoch >= self.epochs {
            return Err(Error::Config(format!(
                "lr decay epoch {} must come before the last epoch {}",
                self.lr_decay_epoch, self.epochs
            )));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch size must be at least 2 for batch normalisation".into()));
        }
        self.loss_weights.validate()?;
        self.model().validate()
    }

    /// Learning rate during 1-based `epoch`: `lr` up to and including
    /// `lr_decay_epoch`, `lr * lr_decay` afterwards.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if epoch <= self.lr_decay_epoch {
            self.lr
        } else {
            self.lr * self.lr_decay
        }
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serialises");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}
