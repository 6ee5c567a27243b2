//! Scores for labeled real/synthetic pairs under the learned metric or an
//! SSIM baseline, optionally after misaligning the synthetic side.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audit::dot;
use crate::encoder::Encoder;
use crate::image::{apply_rigid, Image, RigidTransform};
use crate::manifest::Manifest;
use crate::metrics::{registered_ssim, ssim, SsimConfig};
use crate::rng;
use crate::synth::PairRecord;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreMethod {
    /// Cosine similarity of encoder embeddings.
    Embedding,
    /// SSIM of the pair as given.
    Ssim,
    /// SSIM after rigid registration.
    RegisteredSsim,
}

impl fmt::Display for ScoreMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScoreMethod::Embedding => "embedding",
            ScoreMethod::Ssim => "ssim",
            ScoreMethod::RegisteredSsim => "registered-ssim",
        })
    }
}

impl FromStr for ScoreMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "embedding" => Ok(ScoreMethod::Embedding),
            "ssim" => Ok(ScoreMethod::Ssim),
            "registered-ssim" => Ok(ScoreMethod::RegisteredSsim),
            other => Err(Error::validation(format!(
                "unknown score method '{other}' (embedding, ssim, registered-ssim)"
            ))),
        }
    }
}

/// Random rigid transforms applied to the synthetic side of each pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Misalignment {
    pub max_rotation_deg: f64,
    pub max_shift_px: f64,
    pub seed: u64,
}

impl Default for Misalignment {
    fn default() -> Self {
        Self {
            max_rotation_deg: 8.0,
            max_shift_px: 6.0,
            seed: 0,
        }
    }
}

impl Misalignment {
    /// Uniform rotation and shifts for pair `k`, independent of every other pair.
    pub fn transform_for(&self, k: usize) -> RigidTransform {
        let mut r = rng::stream(self.seed, k as u64);
        let mut u = |m: f64| if m > 0.0 { r.random_range(-m..=m) } else { 0.0 };
        let rot = u(self.max_rotation_deg);
        let tx = u(self.max_shift_px);
        let ty = u(self.max_shift_px);
        RigidTransform::new(rot, tx, ty)
    }
}

/// Images of one or more manifests, addressed by id.
#[derive(Clone, Debug, Default)]
pub struct ImageStore {
    images: HashMap<String, Image>,
}

impl ImageStore {
    pub fn load(manifests: &[&Manifest]) -> Result<Self> {
        let mut images = HashMap::new();
        for m in manifests {
            let loaded: Vec<(String, Image)> = m
                .entries
                .par_iter()
                .map(|e| Ok((e.id.clone(), m.load_entry(e)?)))
                .collect::<Result<_>>()?;
            for (id, img) in loaded {
                if images.insert(id.clone(), img).is_some() {
                    return Err(Error::validation(format!("id '{id}' appears in more than one manifest")));
                }
            }
        }
        Ok(Self { images })
    }

    pub fn insert(&mut self, id: impl Into<String>, img: Image) {
        self.images.insert(id.into(), img);
    }

    pub fn get(&self, id: &str) -> Result<&Image> {
        self.images
            .get(id)
            .ok_or_else(|| Error::validation(format!("image '{id}' is not in any loaded manifest")))
    }
}

/// One score per record, in record order.
pub fn score_records(
    records: &[PairRecord],
    store: &ImageStore,
    method: ScoreMethod,
    encoder: Option<&Encoder>,
    ssim_cfg: &SsimConfig,
    misalign: Option<&Misalignment>,
) -> Result<Vec<f64>> {
    let encoder = match (method, encoder) {
        (ScoreMethod::Embedding, None) => {
            return Err(Error::validation("embedding scores need an encoder checkpoint"))
        }
        (_, e) => e,
    };
    // real images are shared across pairs; embed each once
    let mut real_emb: HashMap<&str, Vec<f32>> = HashMap::new();
    if let Some(enc) = encoder.filter(|_| method == ScoreMethod::Embedding) {
        let mut ids: Vec<&str> = records.iter().map(|r| r.real_id.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        let embs: Vec<(&str, Vec<f32>)> = ids
            .par_iter()
            .map(|&id| Ok((id, enc.embed(store.get(id)?)?)))
            .collect::<Result<_>>()?;
        real_emb.extend(embs);
    }
    records
        .par_iter()
        .enumerate()
        .map(|(k, rec)| {
            let real = store.get(&rec.real_id)?;
            let raw = store.get(&rec.synth_id)?;
            let moved;
            let synth = match misalign {
                Some(m) => {
                    moved = apply_rigid(raw, &m.transform_for(k))?;
                    &moved
                }
                None => raw,
            };
            match method {
                ScoreMethod::Embedding => {
                    let enc = encoder.expect("checked above");
                    Ok(dot(&real_emb[rec.real_id.as_str()], &enc.embed(synth)?) as f64)
                }
                ScoreMethod::Ssim => ssim(real, synth, ssim_cfg),
                ScoreMethod::RegisteredSsim => Ok(registered_ssim(real, synth, ssim_cfg)?.0),
            }
        })
        .collect()
}
