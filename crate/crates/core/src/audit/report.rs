use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{best_matches, build_index, classify, EmbeddingIndex, PairLabel, SearchBackend, SkippedImage, Thresholds};
use crate::encoder::{file_sha256, load_checkpoint};
use crate::manifest::Manifest;
use crate::{Error, Result};

pub const REPORT_VERSION: u32 = 1;

/// Best synthetic match of one real image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Match {
    pub real_id: String,
    pub synth_id: String,
    pub score: f64,
    pub label: PairLabel,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub embed: f64,
    pub search: f64,
    pub classify: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub version: u32,
    pub thresholds: Thresholds,
    pub encoder_sha256: String,
    pub n_real: usize,
    pub n_synth: usize,
    /// Percentage of real images whose best match is a duplicate.
    pub memorization_pct: f64,
    pub matches: Vec<Match>,
    pub timings_ms: Timings,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub skipped: Vec<SkippedImage>,
}

impl AuditReport {
    pub fn duplicates(&self) -> impl Iterator<Item = &Match> {
        self.matches.iter().filter(|m| m.label == PairLabel::Duplicate)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Audits prebuilt indexes: best match per real image, its label, and the
/// memorization percentage. `timings_ms.embed` is left at 0.
pub fn audit_indexes(
    real: &EmbeddingIndex,
    synth: &EmbeddingIndex,
    thresholds: &Thresholds,
    backend: &dyn SearchBackend,
) -> Result<AuditReport> {
    thresholds.validate()?;
    if real.is_empty() {
        return Err(Error::validation("audit needs at least one real image"));
    }
    if synth.is_empty() {
        return Err(Error::validation("audit needs at least one synthetic image"));
    }
    let t0 = Instant::now();
    let best = best_matches(backend, real, synth)?;
    let search = t0.elapsed().as_secs_f64() * 1e3;

    let t1 = Instant::now();
    let mut matches = Vec::with_capacity(best.len());
    for (i, &(j, s)) in best.iter().enumerate() {
        let score = s as f64;
        matches.push(Match {
            real_id: real.ids()[i].clone(),
            synth_id: synth.ids()[j].clone(),
            score,
            label: classify(score, thresholds)?,
        });
    }
    let dup = matches.iter().filter(|m| m.label == PairLabel::Duplicate).count();
    let classify_ms = t1.elapsed().as_secs_f64() * 1e3;

    Ok(AuditReport {
        version: REPORT_VERSION,
        thresholds: *thresholds,
        encoder_sha256: String::new(),
        n_real: real.len(),
        n_synth: synth.len(),
        memorization_pct: 100.0 * dup as f64 / real.len() as f64,
        matches,
        timings_ms: Timings {
            embed: 0.0,
            search,
            classify: classify_ms,
        },
        skipped: Vec::new(),
    })
}

/// Embeds both manifests with the checkpointed encoder and audits them.
pub fn memorization_score(
    real: &Manifest,
    synth: &Manifest,
    thresholds: &Thresholds,
    checkpoint: impl AsRef<Path>,
    backend: &dyn SearchBackend,
    skip_bad: bool,
) -> Result<AuditReport> {
    thresholds.validate()?;
    let path = checkpoint.as_ref();
    let ckpt = load_checkpoint(path)?;
    let sha = file_sha256(path)?;
    let t0 = Instant::now();
    let (ri, mut skipped) = build_index(real, &ckpt.encoder, skip_bad)?;
    let (si, s2) = build_index(synth, &ckpt.encoder, skip_bad)?;
    let embed = t0.elapsed().as_secs_f64() * 1e3;
    skipped.extend(s2);
    let mut report = audit_indexes(&ri, &si, thresholds, backend)?;
    report.encoder_sha256 = sha;
    report.timings_ms.embed = embed;
    report.skipped = skipped;
    Ok(report)
}
