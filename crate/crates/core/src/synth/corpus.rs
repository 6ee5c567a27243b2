//! Labeled real/synthetic corpora and FSIM-based test-set curation.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::phantom::{PhantomParams, PhantomSpec};
use crate::audit::PairLabel;
use crate::image::{save_image, Image, RigidTransform};
use crate::manifest::{write_jsonl, LabelRecord, Manifest, ManifestEntry, Role};
use crate::metrics::{fsim_features, fsim_from_features, FsimConfig, FsimFeatures};
use crate::rng;
use crate::{Error, Result};

/// Appearance changes that leave anatomy untouched.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Nuisance {
    pub noise_sigma: f64,
    pub noise_seed: u64,
    /// Multiplicative bias `1 + bias_x·x̂ + bias_y·ŷ`, with `x̂, ŷ ∈ [−½, ½]`.
    pub bias_x: f64,
    pub bias_y: f64,
    pub view: RigidTransform,
}

impl Nuisance {
    pub const NONE: Nuisance = Nuisance {
        noise_sigma: 0.0,
        noise_seed: 0,
        bias_x: 0.0,
        bias_y: 0.0,
        view: RigidTransform::IDENTITY,
    };
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PerturbationSpec {
    Duplicate {
        nuisance: Nuisance,
    },
    Similar {
        /// Per-structure `(semi_a, semi_b)` multipliers.
        axis_scale: Vec<(f64, f64)>,
        /// Per-structure center offsets in pixels.
        center_shift: Vec<(f64, f64)>,
        nuisance: Nuisance,
    },
    Different {
        phantom: PhantomSpec,
        nuisance: Nuisance,
    },
}

impl PerturbationSpec {
    pub fn label(&self) -> PairLabel {
        match self {
            PerturbationSpec::Duplicate { .. } => PairLabel::Duplicate,
            PerturbationSpec::Similar { .. } => PairLabel::Similar,
            PerturbationSpec::Different { .. } => PairLabel::Different,
        }
    }

    pub fn nuisance(&self) -> &Nuisance {
        match self {
            PerturbationSpec::Duplicate { nuisance }
            | PerturbationSpec::Similar { nuisance, .. }
            | PerturbationSpec::Different { nuisance, .. } => nuisance,
        }
    }
}

/// Parameter bounds for perturbations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PerturbationRanges {
    pub max_noise_sigma: f64,
    pub max_bias: f64,
    pub max_rotation_deg: f64,
    pub max_shift_px: f64,
    pub axis_jitter: f64,
    pub center_jitter_px: f64,
}

impl Default for PerturbationRanges {
    fn default() -> Self {
        Self {
            max_noise_sigma: 0.02,
            max_bias: 0.1,
            max_rotation_deg: 4.0,
            max_shift_px: 3.0,
            axis_jitter: 0.1,
            center_jitter_px: 3.0,
        }
    }
}

impl PerturbationRanges {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64, hi: f64| v.is_finite() && (0.0..=hi).contains(&v);
        if !ok(self.max_noise_sigma, 0.5)
            || !ok(self.max_bias, 0.5)
            || !ok(self.max_rotation_deg, 45.0)
            || !ok(self.max_shift_px, 64.0)
            || !ok(self.axis_jitter, 0.5)
            || !ok(self.center_jitter_px, 64.0)
        {
            return Err(Error::validation(format!("invalid perturbation ranges {self:?}")));
        }
        Ok(())
    }

    fn sym<R: Rng>(r: &mut R, m: f64) -> f64 {
        if m > 0.0 {
            r.random_range(-m..=m)
        } else {
            0.0
        }
    }

    pub fn sample_nuisance<R: Rng>(&self, r: &mut R) -> Nuisance {
        Nuisance {
            noise_sigma: if self.max_noise_sigma > 0.0 {
                r.random_range(0.0..=self.max_noise_sigma)
            } else {
                0.0
            },
            noise_seed: r.random(),
            bias_x: Self::sym(r, self.max_bias),
            bias_y: Self::sym(r, self.max_bias),
            view: RigidTransform::new(
                Self::sym(r, self.max_rotation_deg),
                Self::sym(r, self.max_shift_px),
                Self::sym(r, self.max_shift_px),
            ),
        }
    }

    /// Draws a perturbation of `base` of the requested class.
    pub fn sample<R: Rng>(
        &self,
        r: &mut R,
        label: PairLabel,
        base: &PhantomSpec,
        phantom_params: &PhantomParams,
    ) -> Result<PerturbationSpec> {
        Ok(match label {
            PairLabel::Duplicate => PerturbationSpec::Duplicate {
                nuisance: self.sample_nuisance(r),
            },
            PairLabel::Similar => {
                let n = base.structures.len();
                let j = self.axis_jitter;
                let axis_scale = (0..n)
                    .map(|_| (1.0 + Self::sym(r, j), 1.0 + Self::sym(r, j)))
                    .collect();
                let center_shift = (0..n)
                    .map(|_| (Self::sym(r, self.center_jitter_px), Self::sym(r, self.center_jitter_px)))
                    .collect();
                PerturbationSpec::Similar {
                    axis_scale,
                    center_shift,
                    nuisance: self.sample_nuisance(r),
                }
            }
            PairLabel::Different => PerturbationSpec::Different {
                phantom: PhantomSpec::random(r.random(), base.size, phantom_params)?,
                nuisance: self.sample_nuisance(r),
            },
        })
    }
}

/// Renders `base` under perturbation `p`.
pub fn render_perturbed(base: &PhantomSpec, p: &PerturbationSpec) -> Result<Image> {
    base.validate()?;
    let spec = match p {
        PerturbationSpec::Duplicate { .. } => base.clone(),
        PerturbationSpec::Similar {
            axis_scale,
            center_shift,
            ..
        } => {
            if axis_scale.len() != base.structures.len() || center_shift.len() != base.structures.len() {
                return Err(Error::validation(
                    "similar perturbation must list one jitter per structure",
                ));
            }
            let mut s = base.clone();
            for ((e, &(ka, kb)), &(dx, dy)) in s.structures.iter_mut().zip(axis_scale).zip(center_shift) {
                e.semi_a *= ka;
                e.semi_b *= kb;
                e.cx += dx;
                e.cy += dy;
                *e = e.pushed_inside(base.size);
            }
            s
        }
        PerturbationSpec::Different { phantom, .. } => phantom.clone(),
    };
    spec.validate()?;
    let n = p.nuisance();
    let size = spec.size as f64;
    let c = (size - 1.0) / 2.0;
    let img = spec.render_view(&n.view, |x, y| {
        1.0 + n.bias_x * (x - c) / size + n.bias_y * (y - c) / size
    });
    if n.noise_sigma <= 0.0 {
        return Ok(img);
    }
    let normal = Normal::new(0.0, n.noise_sigma).map_err(|e| Error::validation(e.to_string()))?;
    let mut r = rng::stream(n.noise_seed, 0x4e4f_4953);
    let px = img
        .pixels()
        .iter()
        .map(|&v| (v as f64 + normal.sample(&mut r)).clamp(0.0, 1.0) as f32)
        .collect();
    Image::new(img.height(), img.width(), px)
}

/// Synthetic variants generated per real image.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerRealCounts {
    pub duplicate: usize,
    pub similar: usize,
    pub different: usize,
}

impl PerRealCounts {
    pub fn total(&self) -> usize {
        self.duplicate + self.similar + self.different
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    pub n_real: usize,
    pub counts: PerRealCounts,
    pub size: usize,
    pub seed: u64,
    pub phantom: PhantomParams,
    pub perturbation: PerturbationRanges,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            n_real: 200,
            counts: PerRealCounts {
                duplicate: 3,
                similar: 3,
                different: 4,
            },
            size: 64,
            seed: 0,
            phantom: PhantomParams::default(),
            perturbation: PerturbationRanges::default(),
        }
    }
}

/// One generated image with its manifest record.
#[derive(Clone, Debug)]
pub struct GeneratedImage {
    pub entry: ManifestEntry,
    pub image: Image,
}

/// In-memory corpus; [`Corpus::write`] persists it.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub real: Vec<GeneratedImage>,
    pub synthetic: Vec<GeneratedImage>,
    pub labels: Vec<LabelRecord>,
}

/// Paths written by [`Corpus::write`].
#[derive(Clone, Debug, PartialEq)]
pub struct CorpusFiles {
    pub real_manifest: PathBuf,
    pub synth_manifest: PathBuf,
    pub labels: PathBuf,
}

pub fn real_id(i: usize) -> String {
    format!("r{i:05}")
}

pub fn synth_id(i: usize, j: usize) -> String {
    format!("s{i:05}_{j:02}")
}

/// Generates the corpus in memory; a pure function of `cfg`.
pub fn generate_corpus(cfg: &CorpusConfig) -> Result<Corpus> {
    cfg.phantom.validate()?;
    cfg.perturbation.validate()?;
    let per_real: Vec<(GeneratedImage, Vec<(GeneratedImage, LabelRecord)>)> = (0..cfg.n_real)
        .into_par_iter()
        .map(|i| -> Result<_> {
            let seed = rng::child_seed(cfg.seed, i as u64);
            let base = PhantomSpec::random(seed, cfg.size, &cfg.phantom)?;
            let rid = real_id(i);
            let real = GeneratedImage {
                entry: ManifestEntry {
                    id: rid.clone(),
                    path: format!("real/{rid}.dst").into(),
                    role: Role::Real,
                    source_base_id: None,
                },
                image: super::generate_phantom(&base)?,
            };

            let c = cfg.counts;
            let mut kinds: Vec<PairLabel> = std::iter::repeat_n(PairLabel::Duplicate, c.duplicate)
                .chain(std::iter::repeat_n(PairLabel::Similar, c.similar))
                .chain(std::iter::repeat_n(PairLabel::Different, c.different))
                .collect();
            let mut r = rng::stream(seed, 1);
            kinds.shuffle(&mut r);
            let mut synths = Vec::with_capacity(kinds.len());
            for (j, label) in kinds.into_iter().enumerate() {
                let p = cfg.perturbation.sample(&mut r, label, &base, &cfg.phantom)?;
                let sid = synth_id(i, j);
                synths.push((
                    GeneratedImage {
                        entry: ManifestEntry {
                            id: sid.clone(),
                            path: format!("synthetic/{sid}.dst").into(),
                            role: Role::Synthetic,
                            source_base_id: Some(rid.clone()),
                        },
                        image: render_perturbed(&base, &p)?,
                    },
                    LabelRecord {
                        real_id: rid.clone(),
                        synth_id: sid,
                        label,
                    },
                ));
            }
            Ok((real, synths))
        })
        .collect::<Result<_>>()?;

    let mut corpus = Corpus {
        real: Vec::with_capacity(cfg.n_real),
        synthetic: Vec::new(),
        labels: Vec::new(),
    };
    for (real, synths) in per_real {
        corpus.real.push(real);
        for (img, label) in synths {
            corpus.synthetic.push(img);
            corpus.labels.push(label);
        }
    }
    Ok(corpus)
}

impl Corpus {
    pub fn real_manifest(&self, base_dir: impl Into<PathBuf>) -> Manifest {
        Manifest {
            entries: self.real.iter().map(|g| g.entry.clone()).collect(),
            base_dir: base_dir.into(),
        }
    }

    pub fn synth_manifest(&self, base_dir: impl Into<PathBuf>) -> Manifest {
        Manifest {
            entries: self.synthetic.iter().map(|g| g.entry.clone()).collect(),
            base_dir: base_dir.into(),
        }
    }

    /// Writes images, `real.json`, `synthetic.json` and `labels.jsonl` under `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<CorpusFiles> {
        let dir = dir.as_ref();
        for sub in ["real", "synthetic"] {
            let p = dir.join(sub);
            fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        }
        self.real
            .par_iter()
            .chain(self.synthetic.par_iter())
            .try_for_each(|g| save_image(&g.image, dir.join(&g.entry.path)))?;
        let files = CorpusFiles {
            real_manifest: dir.join("real.json"),
            synth_manifest: dir.join("synthetic.json"),
            labels: dir.join("labels.jsonl"),
        };
        self.real_manifest(dir).save(&files.real_manifest)?;
        self.synth_manifest(dir).save(&files.synth_manifest)?;
        write_jsonl(&files.labels, &self.labels)?;
        Ok(files)
    }
}

/// Generates and writes a corpus under `dir`.
pub fn synthesize_corpus(cfg: &CorpusConfig, dir: impl AsRef<Path>) -> Result<(Corpus, CorpusFiles)> {
    let corpus = generate_corpus(cfg)?;
    let files = corpus.write(dir)?;
    Ok((corpus, files))
}

/// One evaluated real/synthetic pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub real_id: String,
    pub synth_id: String,
    pub label: PairLabel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ssim: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fsim: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted: Option<PairLabel>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CurationConfig {
    pub k_top: usize,
    pub k_rand: usize,
    pub seed: u64,
    pub fsim: FsimConfig,
}

impl Default for CurationConfig {
    fn default() -> Self {
        Self {
            k_top: 3,
            k_rand: 3,
            seed: 0,
            fsim: FsimConfig::default(),
        }
    }
}

/// Picks, per real image, the `k_top` synthetic candidates with the highest
/// FSIM (ties to the smaller synthetic id) plus `k_rand` uniform draws from
/// the rest. Candidates are the synthetic images whose `source_base_id` is
/// the real image's id.
pub fn curate_test_set(
    real: &[(ManifestEntry, Image)],
    synth: &[(ManifestEntry, Image)],
    labels: &[LabelRecord],
    cfg: &CurationConfig,
) -> Result<Vec<PairRecord>> {
    let label_of: HashMap<(&str, &str), PairLabel> = labels
        .iter()
        .map(|l| ((l.real_id.as_str(), l.synth_id.as_str()), l.label))
        .collect();
    let mut candidates: HashMap<&str, Vec<usize>> = HashMap::new();
    for (j, (e, _)) in synth.iter().enumerate() {
        if let Some(src) = &e.source_base_id {
            candidates.entry(src.as_str()).or_default().push(j);
        }
    }
    let need = cfg.k_top + cfg.k_rand;
    for (e, _) in real {
        let have = candidates.get(e.id.as_str()).map_or(0, Vec::len);
        if have < need {
            return Err(Error::validation(format!(
                "real image '{}' has {have} synthetic candidates, needs {need}",
                e.id
            )));
        }
    }

    let features = |set: &[(ManifestEntry, Image)]| -> Result<Vec<FsimFeatures>> {
        set.par_iter().map(|(_, img)| fsim_features(img, &cfg.fsim)).collect()
    };
    let (real_f, synth_f) = if cfg.k_top > 0 {
        (features(real)?, features(synth)?)
    } else {
        (Vec::new(), Vec::new())
    };

    let per_real: Vec<Vec<PairRecord>> = real
        .par_iter()
        .enumerate()
        .map(|(i, (re, _))| -> Result<Vec<PairRecord>> {
            let mut pool: Vec<(usize, Option<f64>)> = candidates[re.id.as_str()]
                .iter()
                .map(|&j| -> Result<_> {
                    let f = if cfg.k_top > 0 {
                        Some(fsim_from_features(&real_f[i], &synth_f[j], &cfg.fsim)?)
                    } else {
                        None
                    };
                    Ok((j, f))
                })
                .collect::<Result<_>>()?;
            pool.sort_by(|a, b| {
                b.1.unwrap_or(0.0)
                    .total_cmp(&a.1.unwrap_or(0.0))
                    .then_with(|| synth[a.0].0.id.cmp(&synth[b.0].0.id))
            });
            let rest = pool.split_off(cfg.k_top);
            let mut r = rng::stream(cfg.seed, i as u64);
            let picks = rand::seq::index::sample(&mut r, rest.len(), cfg.k_rand);
            let chosen = pool.into_iter().chain(picks.into_iter().map(|k| rest[k]));
            chosen
                .map(|(j, f)| {
                    let se = &synth[j].0;
                    let label = *label_of.get(&(re.id.as_str(), se.id.as_str())).ok_or_else(|| {
                        Error::validation(format!("no label for pair ({}, {})", re.id, se.id))
                    })?;
                    Ok(PairRecord {
                        real_id: re.id.clone(),
                        synth_id: se.id.clone(),
                        label,
                        ssim: None,
                        fsim: f,
                        score: None,
                        predicted: None,
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(per_real.into_iter().flatten().collect())
}
