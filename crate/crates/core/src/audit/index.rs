//! Embedding indexes and exhaustive cosine search.

use std::collections::HashSet;
use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::{Embedding, Encoder};
use crate::manifest::Manifest;
use crate::{Error, Result};

/// Allowed deviation of a row norm from 1.
pub const NORM_TOLERANCE: f32 = 1e-5;

/// Row-major matrix of unit-norm embeddings with their image ids.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingIndex {
    ids: Vec<String>,
    dim: usize,
    data: Vec<f32>,
}

impl EmbeddingIndex {
    pub fn empty(dim: usize) -> Self {
        Self {
            ids: Vec::new(),
            dim,
            data: Vec::new(),
        }
    }

    /// Checks row lengths, unit norms and id uniqueness.
    pub fn new(ids: Vec<String>, rows: Vec<Embedding>, dim: usize) -> Result<Self> {
        if ids.len() != rows.len() {
            return Err(Error::validation(format!("{} ids but {} embeddings", ids.len(), rows.len())));
        }
        let mut seen = HashSet::new();
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::validation(format!("duplicate id '{id}' in index")));
            }
        }
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (id, row) in ids.iter().zip(&rows) {
            if row.len() != dim {
                return Err(Error::validation(format!(
                    "embedding of '{id}' has length {}, index dim is {dim}",
                    row.len()
                )));
            }
            let norm = row.iter().map(|v| v * v).sum::<f32>().sqrt();
            if !((norm - 1.0).abs() <= NORM_TOLERANCE) {
                return Err(Error::Numerical(format!("embedding of '{id}' has norm {norm}, expected 1")));
            }
            data.extend_from_slice(row);
        }
        Ok(Self { ids, dim, data })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

/// An image that was left out of an index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkippedImage {
    pub id: String,
    pub reason: String,
}

/// Embeds every manifest image, in manifest order.
///
/// A failing image aborts with an error naming it unless `skip_bad` is set,
/// in which case it is left out and reported.
pub fn build_index(manifest: &Manifest, encoder: &Encoder, skip_bad: bool) -> Result<(EmbeddingIndex, Vec<SkippedImage>)> {
    manifest.check_unique_ids()?;
    let results: Vec<Result<Embedding>> = manifest
        .entries
        .par_iter()
        .map(|e| manifest.load_entry(e).and_then(|img| encoder.embed(&img)))
        .collect();
    let mut ids = Vec::new();
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for (e, r) in manifest.entries.iter().zip(results) {
        match r {
            Ok(v) => {
                ids.push(e.id.clone());
                rows.push(v);
            }
            Err(err @ Error::State(_)) => return Err(err),
            Err(err) if skip_bad => {
                log::warn!("skipping '{}': {err}", e.id);
                skipped.push(SkippedImage {
                    id: e.id.clone(),
                    reason: err.to_string(),
                });
            }
            Err(err) => return Err(Error::validation(format!("image '{}': {err}", e.id))),
        }
    }
    let index = EmbeddingIndex::new(ids, rows, encoder.config().embedding_dim)?;
    Ok((index, skipped))
}

/// Dot product accumulated left to right in `f32`. Every backend uses this
/// so scores are bit-identical to a plain scalar loop.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = 0.0f32;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// A search backend producing full cosine-score rows. Exact search ships;
/// approximate backends can implement the same trait.
pub trait SearchBackend: Sync {
    fn name(&self) -> &'static str;

    /// Scores of query rows `rows` against every corpus row, row-major.
    fn score_rows(&self, query: &EmbeddingIndex, corpus: &EmbeddingIndex, rows: Range<usize>) -> Result<Vec<f32>>;
}

/// Exhaustive search over cache-sized tiles.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ExactSearch {
    /// Corpus rows per tile.
    pub block_size: usize,
}

impl Default for ExactSearch {
    fn default() -> Self {
        Self { block_size: 256 }
    }
}

fn check_dims(a: &EmbeddingIndex, b: &EmbeddingIndex) -> Result<()> {
    if a.dim != b.dim {
        return Err(Error::validation(format!(
            "embedding dims differ: {} vs {}",
            a.dim, b.dim
        )));
    }
    Ok(())
}

impl SearchBackend for ExactSearch {
    fn name(&self) -> &'static str {
        "exact"
    }

    fn score_rows(&self, query: &EmbeddingIndex, corpus: &EmbeddingIndex, rows: Range<usize>) -> Result<Vec<f32>> {
        check_dims(query, corpus)?;
        let m = corpus.len();
        let bs = self.block_size.max(1);
        let mut out = vec![0.0f32; rows.len() * m];
        for c0 in (0..m).step_by(bs) {
            let c1 = (c0 + bs).min(m);
            for (ri, r) in rows.clone().enumerate() {
                let q = query.row(r);
                let dst = &mut out[ri * m..(ri + 1) * m];
                for c in c0..c1 {
                    dst[c] = dot(q, corpus.row(c));
                }
            }
        }
        Ok(out)
    }
}

/// A block of consecutive query rows of the score matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreBlock {
    pub first_row: usize,
    pub n_cols: usize,
    /// `rows × n_cols`, row-major.
    pub scores: Vec<f32>,
}

impl ScoreBlock {
    pub fn n_rows(&self) -> usize {
        self.scores.len().checked_div(self.n_cols).unwrap_or(0)
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.scores[i * self.n_cols..(i + 1) * self.n_cols]
    }
}

/// Streams all `|real| × |synth|` cosine scores in real-major order, one
/// block of `block_size` real rows at a time.
pub fn pairwise_scores<'a>(
    real: &'a EmbeddingIndex,
    synth: &'a EmbeddingIndex,
    block_size: usize,
) -> Result<impl Iterator<Item = ScoreBlock> + 'a> {
    check_dims(real, synth)?;
    let bs = block_size.max(1);
    let backend = ExactSearch { block_size: bs };
    Ok((0..real.len()).step_by(bs).map(move |r0| {
        let r1 = (r0 + bs).min(real.len());
        ScoreBlock {
            first_row: r0,
            n_cols: synth.len(),
            scores: backend.score_rows(real, synth, r0..r1).expect("dims checked"),
        }
    }))
}

/// Highest-scoring corpus row for every query row, ties to the lowest index.
pub fn best_matches(
    backend: &dyn SearchBackend,
    query: &EmbeddingIndex,
    corpus: &EmbeddingIndex,
) -> Result<Vec<(usize, f32)>> {
    check_dims(query, corpus)?;
    if corpus.is_empty() {
        return Err(Error::validation("cannot search an empty corpus"));
    }
    const ROWS: usize = 16;
    let starts: Vec<usize> = (0..query.len()).step_by(ROWS).collect();
    let blocks: Vec<Vec<(usize, f32)>> = starts
        .par_iter()
        .map(|&r0| {
            let r1 = (r0 + ROWS).min(query.len());
            let s = backend.score_rows(query, corpus, r0..r1)?;
            Ok(s.chunks(corpus.len())
                .map(|row| {
                    row.iter()
                        .enumerate()
                        .fold((0, row[0]), |best, (j, &v)| if v > best.1 { (j, v) } else { best })
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(blocks.into_iter().flatten().collect())
}
