//! Training pairs with cached ground-truth similarity, sampled so the
//! ground-truth histogram is as flat as the corpus allows.

use std::collections::{HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::image::{Image, RigidTransform};
use crate::manifest::{Manifest, ManifestEntry, PairCacheRecord, Role};
use crate::metrics::{registered_ssim, SsimConfig};
use crate::rng;
use crate::{Error, Result};

/// Images held in memory alongside their manifest records.
#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub entries: Vec<ManifestEntry>,
    pub images: Vec<Image>,
}

impl Dataset {
    pub fn new(entries: Vec<ManifestEntry>, images: Vec<Image>) -> Result<Self> {
        if entries.len() != images.len() {
            return Err(Error::validation(format!(
                "{} manifest entries but {} images",
                entries.len(),
                images.len()
            )));
        }
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert(e.id.as_str()) {
                return Err(Error::validation(format!("duplicate id '{}'", e.id)));
            }
        }
        Ok(Self { entries, images })
    }

    /// Loads every image of `manifest` (in parallel).
    pub fn load(manifest: &Manifest) -> Result<Self> {
        manifest.check_unique_ids()?;
        let images = manifest
            .entries
            .par_iter()
            .map(|e| manifest.load_entry(e))
            .collect::<Result<Vec<_>>>()?;
        Self::new(manifest.entries.clone(), images)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// A pair `(a, b)` with its registered ground-truth similarity. `a` is the
/// fixed image of the registration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingPair {
    pub a: usize,
    pub b: usize,
    pub a_id: String,
    pub b_id: String,
    pub ssim: f64,
    pub transform: RigidTransform,
}

impl TrainingPair {
    pub fn to_cache_record(&self) -> PairCacheRecord {
        PairCacheRecord {
            real_id: self.a_id.clone(),
            synth_id: self.b_id.clone(),
            ssim: self.ssim,
            rot_deg: self.transform.rotation_deg,
            tx: self.transform.tx,
            ty: self.transform.ty,
        }
    }
}

/// Previously computed ground truth keyed by `(fixed id, moving id)`.
#[derive(Clone, Debug, Default)]
pub struct PairCache {
    map: HashMap<(String, String), PairCacheRecord>,
}

impl PairCache {
    pub fn from_records(records: Vec<PairCacheRecord>) -> Self {
        Self {
            map: records
                .into_iter()
                .map(|r| ((r.real_id.clone(), r.synth_id.clone()), r))
                .collect(),
        }
    }

    pub fn get(&self, a: &str, b: &str) -> Option<&PairCacheRecord> {
        self.map.get(&(a.to_string(), b.to_string()))
    }

    pub fn insert(&mut self, r: PairCacheRecord) {
        self.map.insert((r.real_id.clone(), r.synth_id.clone()), r);
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Records sorted by key, for stable files.
    pub fn records(&self) -> Vec<PairCacheRecord> {
        let mut v: Vec<_> = self.map.values().cloned().collect();
        v.sort_by(|x, y| (&x.real_id, &x.synth_id).cmp(&(&y.real_id, &y.synth_id)));
        v
    }
}

/// Orients a pair so a real image, when present, is the fixed one.
fn orient(ds: &Dataset, i: usize, j: usize) -> (usize, usize) {
    let (ri, rj) = (ds.entries[i].role == Role::Real, ds.entries[j].role == Role::Real);
    match (ri, rj) {
        (false, true) => (j, i),
        (true, false) => (i, j),
        _ => (i.min(j), i.max(j)),
    }
}

/// Scores pairs with registered brightness-normalized SSIM, consulting and
/// extending `cache`.
pub fn score_pairs(ds: &Dataset, pairs: &[(usize, usize)], cache: &mut PairCache) -> Result<Vec<TrainingPair>> {
    let cfg = SsimConfig::brightness_normalized();
    let out: Vec<TrainingPair> = pairs
        .par_iter()
        .map(|&(a, b)| -> Result<TrainingPair> {
            let (a_id, b_id) = (&ds.entries[a].id, &ds.entries[b].id);
            let (ssim, transform) = match cache.get(a_id, b_id) {
                Some(r) => (r.ssim, RigidTransform::new(r.rot_deg, r.tx, r.ty)),
                None => registered_ssim(&ds.images[a], &ds.images[b], &cfg)?,
            };
            Ok(TrainingPair {
                a,
                b,
                a_id: a_id.clone(),
                b_id: b_id.clone(),
                ssim,
                transform,
            })
        })
        .collect::<Result<_>>()?;
    for p in &out {
        if cache.get(&p.a_id, &p.b_id).is_none() {
            cache.insert(p.to_cache_record());
        }
    }
    Ok(out)
}

/// Equal-width bin of `s` over `[0, 1]`; values outside land in the end bins.
pub fn ssim_bin(s: f64, bins: usize) -> usize {
    ((s.max(0.0) * bins as f64) as usize).min(bins - 1)
}

/// Per-bin quotas summing to `min(size, Σ available)` that are as equal
/// as availability allows. Leftover units go to bins in `order`.
pub fn water_fill(available: &[usize], size: usize, order: &[usize]) -> Vec<usize> {
    let mut quota = vec![0usize; available.len()];
    let mut remaining = size.min(available.iter().sum());
    while remaining > 0 {
        let open: Vec<usize> = order.iter().copied().filter(|&b| quota[b] < available[b]).collect();
        let share = remaining / open.len();
        if share == 0 {
            for &b in open.iter().take(remaining) {
                quota[b] += 1;
            }
            break;
        }
        for &b in &open {
            let add = share.min(available[b] - quota[b]);
            quota[b] += add;
            remaining -= add;
        }
    }
    quota
}

fn sample_random_pairs<R: Rng>(r: &mut R, n: usize, want: usize, taken: &mut HashSet<(usize, usize)>) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(want);
    while out.len() < want {
        let i = r.random_range(0..n);
        let j = r.random_range(0..n);
        if i == j {
            continue;
        }
        let key = (i.min(j), i.max(j));
        if taken.insert(key) {
            out.push(key);
        }
    }
    out
}

/// Samples `size` pairs from the dataset with ground-truth stratification.
///
/// A candidate pool of about `size · pool_factor` pairs is scored: every
/// pair when the dataset is small enough, otherwise real/derived-synthetic
/// pairs (up to half the pool) topped up with uniformly drawn pairs. With a
/// single bin the pool is purely uniform. Candidates are then grouped into
/// `bins` equal-width ground-truth bins and drawn with per-bin quotas that
/// are as equal as the pool allows.
pub fn build_pair_set(
    ds: &Dataset,
    seed: u64,
    size: usize,
    bins: usize,
    pool_factor: f64,
    cache: &mut PairCache,
) -> Result<Vec<TrainingPair>> {
    if ds.len() < 2 {
        return Err(Error::validation(format!(
            "pair sampling needs at least 2 images, manifest has {}",
            ds.len()
        )));
    }
    if bins == 0 || size < bins {
        return Err(Error::validation(format!("size ({size}) must be >= bins ({bins}) >= 1")));
    }
    let n = ds.len();
    let mut r = rng::stream(seed, 0x5041_4952);
    let total = n * (n - 1) / 2;
    let budget = ((size as f64 * pool_factor.max(1.0)).ceil() as usize).max(size);

    let mut candidates: Vec<(usize, usize)> = if total <= budget {
        (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect()
    } else {
        let mut taken = HashSet::new();
        let mut pool = Vec::with_capacity(budget);
        if bins > 1 {
            let index: HashMap<&str, usize> =
                ds.entries.iter().enumerate().map(|(i, e)| (e.id.as_str(), i)).collect();
            let mut anchored: Vec<(usize, usize)> = ds
                .entries
                .iter()
                .enumerate()
                .filter_map(|(j, e)| {
                    let src = e.source_base_id.as_deref()?;
                    let &i = index.get(src)?;
                    (i != j).then_some((i.min(j), i.max(j)))
                })
                .collect();
            anchored.sort_unstable();
            anchored.dedup();
            anchored.shuffle(&mut r);
            anchored.truncate(budget / 2);
            for p in anchored {
                taken.insert(p);
                pool.push(p);
            }
        }
        let more = budget - pool.len();
        pool.extend(sample_random_pairs(&mut r, n, more, &mut taken));
        pool
    };
    candidates.sort_unstable();
    let oriented: Vec<(usize, usize)> = candidates.iter().map(|&(i, j)| orient(ds, i, j)).collect();
    let scored = score_pairs(ds, &oriented, cache)?;

    let mut groups: Vec<Vec<TrainingPair>> = vec![Vec::new(); bins];
    for p in scored {
        groups[ssim_bin(p.ssim, bins)].push(p);
    }
    for g in groups.iter_mut() {
        g.shuffle(&mut r);
    }
    let mut order: Vec<usize> = (0..bins).collect();
    order.shuffle(&mut r);
    let available: Vec<usize> = groups.iter().map(Vec::len).collect();
    let quota = water_fill(&available, size, &order);
    if quota.iter().sum::<usize>() < size {
        log::warn!(
            "only {} candidate pairs available for a requested pair set of {size}",
            quota.iter().sum::<usize>()
        );
    }
    let mut out: Vec<TrainingPair> = groups
        .into_iter()
        .zip(&quota)
        .flat_map(|(g, &q)| g.into_iter().take(q))
        .collect();
    out.shuffle(&mut r);
    Ok(out)
}
