//! Corpus manifests, ground-truth label files and the pair cache.
//!
//! A manifest is a JSON array of `{id, path, role, source_base_id}` records.
//! Relative paths are resolved against the manifest's own directory. Label
//! files and pair caches are JSON lines.

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::audit::PairLabel;
use crate::image::{load_image, Image};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Real,
    Synthetic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub path: PathBuf,
    pub role: Role,
    /// For synthetic images, the real image they were derived from.
    #[serde(default)]
    pub source_base_id: Option<String>,
}

/// Manifest records plus the directory their relative paths hang off.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
    pub base_dir: PathBuf,
}

impl Manifest {
    pub fn new(entries: Vec<ManifestEntry>, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let m = Self {
            entries,
            base_dir: base_dir.into(),
        };
        m.check_unique_ids()?;
        Ok(m)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let entries: Vec<ManifestEntry> = serde_json::from_str(&text)
            .map_err(|e| Error::validation(format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::new(entries, base)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(&self.entries)?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn check_unique_ids(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.id.as_str()) {
                return Err(Error::validation(format!("duplicate id '{}' in manifest", e.id)));
            }
        }
        Ok(())
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        if entry.path.is_absolute() {
            entry.path.clone()
        } else {
            self.base_dir.join(&entry.path)
        }
    }

    /// Loads one image; errors name the entry id.
    pub fn load_entry(&self, entry: &ManifestEntry) -> Result<Image> {
        load_image(self.resolve(entry)).map_err(|e| match e {
            Error::Io { path, source } => Error::Validation(format!(
                "image '{}' ({}): {source}",
                entry.id,
                path.display()
            )),
            other => Error::Validation(format!("image '{}': {other}", entry.id)),
        })
    }

    pub fn with_role(&self, role: Role) -> Manifest {
        Manifest {
            entries: self.entries.iter().filter(|e| e.role == role).cloned().collect(),
            base_dir: self.base_dir.clone(),
        }
    }

    /// Concatenation; ids must stay unique. Paths are made absolute first
    /// when the two manifests live in different directories.
    pub fn merged(&self, other: &Manifest) -> Result<Manifest> {
        let mut entries = Vec::with_capacity(self.len() + other.len());
        for (m, list) in [(self, &self.entries), (other, &other.entries)] {
            for e in list {
                let mut e = e.clone();
                if m.base_dir != self.base_dir {
                    e.path = m.resolve(&e);
                }
                entries.push(e);
            }
        }
        Manifest::new(entries, self.base_dir.clone())
    }

    /// Family of an entry: its `source_base_id`, or its own id for images
    /// without one.
    pub fn family(entry: &ManifestEntry) -> &str {
        entry.source_base_id.as_deref().unwrap_or(&entry.id)
    }

    /// Splits whole families into `(train, val)`, with about `val_fraction`
    /// of the families (at least one when there are two or more) going to
    /// validation. Entry order is preserved within each part.
    pub fn split_by_family(&self, val_fraction: f64, seed: u64) -> Result<(Manifest, Manifest)> {
        if !(0.0..1.0).contains(&val_fraction) {
            return Err(Error::validation(format!("val_fraction {val_fraction} must be in [0, 1)")));
        }
        let mut families: Vec<&str> = self.entries.iter().map(Self::family).collect();
        families.sort_unstable();
        families.dedup();
        let mut n_val = (families.len() as f64 * val_fraction).round() as usize;
        if val_fraction > 0.0 && families.len() >= 2 {
            n_val = n_val.clamp(1, families.len() - 1);
        }
        families.shuffle(&mut crate::rng::stream(seed, 0x5350_4c54));
        let val: HashSet<&str> = families[..n_val].iter().copied().collect();
        let (v, t): (Vec<ManifestEntry>, Vec<ManifestEntry>) =
            self.entries.iter().cloned().partition(|e| val.contains(Self::family(e)));
        Ok((
            Manifest::new(t, self.base_dir.clone())?,
            Manifest::new(v, self.base_dir.clone())?,
        ))
    }
}

/// Ground-truth class of one real/synthetic pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelRecord {
    pub real_id: String,
    pub synth_id: String,
    pub label: PairLabel,
}

/// Cached registered SSIM of one pair and the transform that produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairCacheRecord {
    pub real_id: String,
    pub synth_id: String,
    pub ssim: f64,
    pub rot_deg: f64,
    pub tx: f64,
    pub ty: f64,
}

pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| {
            Error::validation(format!("{} line {}: {e}", path.display(), i + 1))
        })?);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, rows: &[T]) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for row in rows {
        serde_json::to_writer(&mut w, row)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
