use std::path::Path;

use serde::{Deserialize, Serialize};

use memaudit_core::audit::Thresholds;
use memaudit_core::encoder::{EncoderConfig, TrainConfig};
use memaudit_core::eval::{BenchOptions, Misalignment};
use memaudit_core::metrics::SsimConfig;
use memaudit_core::rng::child_seed;
use memaudit_core::synth::{CorpusConfig, CurationConfig};
use memaudit_core::{Error, Result};

/// Every tunable of a run. Loaded from `--config`, adjusted by flags, and
/// written back as `config.json` next to the outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub corpus: CorpusConfig,
    /// Fraction of image families held out for validation by `gen-data`.
    pub val_fraction: f64,
    pub curation: CurationConfig,
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    pub thresholds: Thresholds,
    pub ssim: SsimConfig,
    pub misalignment: Misalignment,
    pub bench: BenchOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut c = Self {
            seed: 0,
            corpus: CorpusConfig::default(),
            val_fraction: 0.2,
            curation: CurationConfig::default(),
            encoder: EncoderConfig::default(),
            train: TrainConfig::default(),
            thresholds: Thresholds::default(),
            ssim: SsimConfig::default(),
            misalignment: Misalignment::default(),
            bench: BenchOptions::default(),
        };
        c.apply_seed(0);
        c
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Validation(format!("config {}: {e}", path.display())))
    }

    /// Derives every component seed from the master seed.
    pub fn apply_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.corpus.seed = child_seed(seed, 1);
        self.curation.seed = child_seed(seed, 2);
        self.train.seed = child_seed(seed, 3);
        self.misalignment.seed = child_seed(seed, 4);
        self.bench.seed = child_seed(seed, 5);
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.train.validate()?;
        self.thresholds.validate()?;
        self.ssim.validate()?;
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Validation(format!(
                "val_fraction {} must be in [0, 1)",
                self.val_fraction
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }
}
