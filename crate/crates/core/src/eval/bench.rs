use std::time::Instant;

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audit::{best_matches, EmbeddingIndex, ExactSearch};
use crate::encoder::Encoder;
use crate::image::Image;
use crate::metrics::{registered_ssim, SsimConfig};
use crate::rng;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchOptions {
    /// Repetitions per phase; medians are reported.
    pub runs: usize,
    /// Time registered SSIM on this many sampled pairs and scale up to the
    /// full pair count. `None` scores every pair.
    pub ssim_sample_pairs: Option<usize>,
    pub block_size: usize,
    pub seed: u64,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            runs: 3,
            ssim_sample_pairs: Some(64),
            block_size: 256,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkResult {
    pub n_real: usize,
    pub n_synth: usize,
    /// Registered SSIM over all `n_real × n_synth` pairs.
    pub ssim_ms: f64,
    pub ssim_pairs_timed: usize,
    pub ssim_extrapolated: bool,
    /// Embedding every real and synthetic image.
    pub embed_ms: f64,
    /// Exact cosine search for every real image's best match.
    pub search_ms: f64,
    /// `ssim_ms / (embed_ms + search_ms)`.
    pub speedup: f64,
    pub runs: usize,
    pub workers: usize,
    pub hardware: String,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn timed<T>(f: impl FnOnce() -> Result<T>) -> Result<(f64, T)> {
    let t = Instant::now();
    let out = f()?;
    Ok(((t.elapsed().as_secs_f64() * 1e3).max(1e-6), out))
}

/// Times pairwise registered SSIM against embedding plus exact search on
/// images already in memory.
pub fn runtime_benchmark(real: &[Image], synth: &[Image], encoder: &Encoder, opts: &BenchOptions) -> Result<BenchmarkResult> {
    if real.is_empty() || synth.is_empty() {
        return Err(Error::validation("benchmark needs non-empty real and synthetic sets"));
    }
    if opts.runs == 0 {
        return Err(Error::validation("benchmark needs at least one run"));
    }
    let total = real.len() * synth.len();
    let pairs: Vec<(usize, usize)> = match opts.ssim_sample_pairs {
        Some(k) if k < total => {
            let mut r = rng::stream(opts.seed, 0x4245_4e43);
            let mut idx = sample(&mut r, total, k.max(1)).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|p| (p / synth.len(), p % synth.len())).collect()
        }
        _ => (0..total).map(|p| (p / synth.len(), p % synth.len())).collect(),
    };
    let cfg = SsimConfig::brightness_normalized();

    let mut ssim_runs = Vec::new();
    let mut embed_runs = Vec::new();
    let mut search_runs = Vec::new();
    for run in 0..opts.runs {
        let (ms, _) = timed(|| {
            pairs
                .par_iter()
                .map(|&(i, j)| registered_ssim(&real[i], &synth[j], &cfg).map(|r| r.0))
                .collect::<Result<Vec<f64>>>()
        })?;
        ssim_runs.push(ms * total as f64 / pairs.len() as f64);

        let (ms, (ri, si)) = timed(|| {
            let dim = encoder.config().embedding_dim;
            let re = encoder.embed_all(real)?;
            let se = encoder.embed_all(synth)?;
            let ri = EmbeddingIndex::new((0..re.len()).map(|i| format!("r{i}")).collect(), re, dim)?;
            let si = EmbeddingIndex::new((0..se.len()).map(|i| format!("s{i}")).collect(), se, dim)?;
            Ok((ri, si))
        })?;
        embed_runs.push(ms);

        let backend = ExactSearch {
            block_size: opts.block_size,
        };
        let (ms, _) = timed(|| best_matches(&backend, &ri, &si))?;
        search_runs.push(ms);
        log::info!("benchmark run {}/{} done", run + 1, opts.runs);
    }
    let (ssim_ms, embed_ms, search_ms) = (median(ssim_runs), median(embed_runs), median(search_runs));
    let cores = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    Ok(BenchmarkResult {
        n_real: real.len(),
        n_synth: synth.len(),
        ssim_ms,
        ssim_pairs_timed: pairs.len(),
        ssim_extrapolated: pairs.len() < total,
        embed_ms,
        search_ms,
        speedup: ssim_ms / (embed_ms + search_ms),
        runs: opts.runs,
        workers: rayon::current_num_threads(),
        hardware: format!("{} {}, {cores} logical cores", std::env::consts::OS, std::env::consts::ARCH),
    })
}
