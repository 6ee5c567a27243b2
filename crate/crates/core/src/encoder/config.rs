use serde::{Deserialize, Serialize};

use crate::image::AugmentationRanges;
use crate::{Error, Result};

/// Architecture of the embedding network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    /// Side of the square network input.
    pub input_size: usize,
    /// Output channels of each conv block.
    pub widths: Vec<usize>,
    pub embedding_dim: usize,
    /// Leading conv blocks excluded from optimization.
    pub frozen_block_count: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            input_size: 64,
            widths: vec![16, 32, 64],
            embedding_dim: 64,
            frozen_block_count: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 {
            return Err(Error::validation(format!(
                "encoder needs at least 2 conv blocks, got {}",
                self.widths.len()
            )));
        }
        if self.widths.contains(&0) {
            return Err(Error::validation("conv block widths must be positive"));
        }
        if self.embedding_dim < 8 {
            return Err(Error::validation(format!(
                "embedding_dim must be at least 8, got {}",
                self.embedding_dim
            )));
        }
        let pool = 1usize << self.widths.len();
        if self.input_size < 16 || self.input_size % pool != 0 {
            return Err(Error::validation(format!(
                "input_size {} must be >= 16 and divisible by {pool}",
                self.input_size
            )));
        }
        if self.frozen_block_count > self.widths.len() {
            return Err(Error::validation(format!(
                "cannot freeze {} of {} blocks",
                self.frozen_block_count,
                self.widths.len()
            )));
        }
        Ok(())
    }

    /// Names of fields whose values differ from `other`.
    pub fn diff(&self, other: &EncoderConfig) -> Vec<String> {
        let mut out = Vec::new();
        if self.input_size != other.input_size {
            out.push("input_size".to_string());
        }
        if self.widths != other.widths {
            out.push("widths".to_string());
        }
        if self.embedding_dim != other.embedding_dim {
            out.push("embedding_dim".to_string());
        }
        if self.frozen_block_count != other.frozen_block_count {
            out.push("frozen_block_count".to_string());
        }
        out
    }
}

/// Optimization and sampling settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub weight_decay: f32,
    pub seed: u64,
    /// Size of the sampled training pair set; each epoch visits it once.
    pub pairs_per_epoch: usize,
    pub ssim_stratification_bins: usize,
    /// Size of the fixed validation pair set.
    pub val_pairs: usize,
    /// Candidate pairs scored per selected pair before stratification.
    pub candidate_pool_factor: f64,
    pub augmentation: AugmentationRanges,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            batch_size: 32,
            lr: 1e-3,
            weight_decay: 1e-3,
            seed: 0,
            pairs_per_epoch: 4096,
            ssim_stratification_bins: 5,
            val_pairs: 512,
            candidate_pool_factor: 1.5,
            augmentation: AugmentationRanges::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.ssim_stratification_bins == 0 {
            return Err(Error::validation("batch_size and ssim_stratification_bins must be >= 1"));
        }
        if self.pairs_per_epoch < self.ssim_stratification_bins || self.val_pairs == 0 {
            return Err(Error::validation(format!(
                "pairs_per_epoch ({}) must be >= bins ({}) and val_pairs positive",
                self.pairs_per_epoch, self.ssim_stratification_bins
            )));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite())
            || !(self.weight_decay >= 0.0 && self.weight_decay.is_finite())
            || !(self.candidate_pool_factor >= 1.0 && self.candidate_pool_factor.is_finite())
        {
            return Err(Error::validation(format!(
                "invalid lr / weight_decay / candidate_pool_factor: {} / {} / {}",
                self.lr, self.weight_decay, self.candidate_pool_factor
            )));
        }
        self.augmentation.validate()
    }
}
