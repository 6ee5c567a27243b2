//! Threshold selection by grid search, and robustness to threshold noise.

use std::fmt::Write as _;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{PairLabel, Thresholds};
use crate::eval::{precision_recall_f1, ConfusionTable};
use crate::rng;
use crate::{Error, Result};

fn check_inputs(labels: &[PairLabel], scores: &[f64]) -> Result<()> {
    if labels.is_empty() {
        return Err(Error::validation("no labeled pairs"));
    }
    if labels.len() != scores.len() {
        return Err(Error::validation(format!(
            "{} labels but {} scores",
            labels.len(),
            scores.len()
        )));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::validation(format!("score {i} is not finite")));
    }
    Ok(())
}

/// Macro F1 of classifying `scores` with `t` against `labels`.
pub fn macro_f1_at(labels: &[PairLabel], scores: &[f64], t: &Thresholds) -> f64 {
    let mut table = ConfusionTable::default();
    for (&l, &s) in labels.iter().zip(scores) {
        table.add(l, t.label(s));
    }
    precision_recall_f1(&table).macro_f1
}

/// Inclusive range of candidate threshold values.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridRange {
    pub lo: f64,
    pub hi: f64,
}

impl Default for GridRange {
    fn default() -> Self {
        Self { lo: 0.0, hi: 1.0 }
    }
}

/// Grid values `lo + k·step` up to `hi` (with a small tolerance so `hi`
/// itself is included when it lies on the grid).
pub fn grid_values(range: GridRange, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && step.is_finite()) || !(range.lo <= range.hi) || range.lo < 0.0 || range.hi > 1.0 {
        return Err(Error::validation(format!(
            "invalid grid [{}, {}] with step {step}",
            range.lo, range.hi
        )));
    }
    let n = ((range.hi - range.lo) / step + 1e-9).floor() as usize;
    // rounding keeps grid values such as 0.6 free of representation noise
    Ok((0..=n).map(|k| ((range.lo + k as f64 * step) * 1e12).round() / 1e12).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSearchResult {
    pub thresholds: Thresholds,
    pub macro_f1: f64,
    pub evaluated: usize,
}

/// Exhaustive search over grid points with `alpha < beta`, maximizing macro
/// F1. Ties go to the larger `beta`, then the larger `alpha`.
pub fn grid_search_thresholds(
    labels: &[PairLabel],
    scores: &[f64],
    alpha_range: GridRange,
    beta_range: GridRange,
    step: f64,
) -> Result<GridSearchResult> {
    check_inputs(labels, scores)?;
    let alphas = grid_values(alpha_range, step)?;
    let betas = grid_values(beta_range, step)?;
    let mut best: Option<GridSearchResult> = None;
    let mut evaluated = 0;
    for &beta in &betas {
        for &alpha in &alphas {
            if alpha >= beta {
                continue;
            }
            let t = Thresholds { alpha, beta };
            let f1 = macro_f1_at(labels, scores, &t);
            evaluated += 1;
            let better = match &best {
                None => true,
                Some(b) => {
                    f1 > b.macro_f1
                        || (f1 == b.macro_f1
                            && (beta > b.thresholds.beta || (beta == b.thresholds.beta && alpha > b.thresholds.alpha)))
                }
            };
            if better {
                best = Some(GridSearchResult {
                    thresholds: t,
                    macro_f1: f1,
                    evaluated: 0,
                });
            }
        }
    }
    let mut best = best.ok_or_else(|| Error::validation("threshold grid has no point with alpha < beta"))?;
    best.evaluated = evaluated;
    Ok(best)
}

/// Standard deviations swept by default: 0.03 to 0.15 in steps of 0.03.
pub fn default_sigmas() -> Vec<f64> {
    vec![0.03, 0.06, 0.09, 0.12, 0.15]
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub sigma_alpha: f64,
    pub sigma_beta: f64,
    pub mean_f1: f64,
    pub std_f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityGrid {
    pub base: Thresholds,
    pub base_f1: f64,
    pub sigmas: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    /// Row-major over `(sigma_alpha, sigma_beta)`.
    pub cells: Vec<SweepCell>,
}

impl SensitivityGrid {
    pub fn cell(&self, sigma_alpha_idx: usize, sigma_beta_idx: usize) -> &SweepCell {
        &self.cells[sigma_alpha_idx * self.sigmas.len() + sigma_beta_idx]
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("sigma_alpha,sigma_beta,mean_f1,std_f1\n");
        for c in &self.cells {
            let _ = writeln!(out, "{},{},{},{}", c.sigma_alpha, c.sigma_beta, c.mean_f1, c.std_f1);
        }
        out
    }
}

const MAX_REDRAWS: usize = 10_000;

/// Mean and standard deviation of macro F1 when both thresholds receive
/// independent zero-mean Gaussian noise.
///
/// Perturbed values are clamped to `[0, 1]`; draws with `alpha >= beta` are
/// discarded and redrawn. Every cell reuses the same seeded normal stream, so
/// cells differ only through their sigmas.
pub fn sensitivity_sweep(
    labels: &[PairLabel],
    scores: &[f64],
    base: &Thresholds,
    sigmas: &[f64],
    trials: usize,
    seed: u64,
) -> Result<SensitivityGrid> {
    check_inputs(labels, scores)?;
    base.validate()?;
    if trials == 0 {
        return Err(Error::validation("sensitivity sweep needs at least one trial"));
    }
    if sigmas.is_empty() || sigmas.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
        return Err(Error::validation(format!("invalid sigmas {sigmas:?}")));
    }
    let base_f1 = macro_f1_at(labels, scores, base);
    let mut cells = Vec::with_capacity(sigmas.len() * sigmas.len());
    for &sa in sigmas {
        for &sb in sigmas {
            if sa == 0.0 && sb == 0.0 {
                // every draw is the base pair; a summed mean could be off by an ulp
                cells.push(SweepCell {
                    sigma_alpha: sa,
                    sigma_beta: sb,
                    mean_f1: base_f1,
                    std_f1: 0.0,
                });
                continue;
            }
            let mut r = rng::stream(seed, 0x5357_4545);
            let mut f1s = Vec::with_capacity(trials);
            for _ in 0..trials {
                let mut attempts = 0;
                let t = loop {
                    let za: f64 = StandardNormal.sample(&mut r);
                    let zb: f64 = StandardNormal.sample(&mut r);
                    let a = (base.alpha + sa * za).clamp(0.0, 1.0);
                    let b = (base.beta + sb * zb).clamp(0.0, 1.0);
                    if a < b {
                        break Thresholds { alpha: a, beta: b };
                    }
                    attempts += 1;
                    if attempts >= MAX_REDRAWS {
                        return Err(Error::Numerical(format!(
                            "no valid threshold draw in {MAX_REDRAWS} attempts at sigmas ({sa}, {sb})"
                        )));
                    }
                };
                f1s.push(macro_f1_at(labels, scores, &t));
            }
            let n = f1s.len() as f64;
            let mean = f1s.iter().sum::<f64>() / n;
            let std = (f1s.iter().map(|f| (f - mean).powi(2)).sum::<f64>() / n).sqrt();
            cells.push(SweepCell {
                sigma_alpha: sa,
                sigma_beta: sb,
                mean_f1: mean,
                std_f1: std,
            });
        }
    }
    Ok(SensitivityGrid {
        base: *base,
        base_f1,
        sigmas: sigmas.to_vec(),
        trials,
        seed,
        cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use PairLabel::*;

    fn separable() -> (Vec<PairLabel>, Vec<f64>) {
        let labels = vec![Different, Different, Similar, Similar, Duplicate, Duplicate];
        let scores = vec![0.1, 0.3, 0.62, 0.7, 0.9, 0.97];
        (labels, scores)
    }

    #[test]
    fn separable_reaches_one_with_conservative_ties() {
        let (l, s) = separable();
        let r = grid_search_thresholds(&l, &s, GridRange::default(), GridRange::default(), 0.05).unwrap();
        assert_eq!(r.macro_f1, 1.0);
        // any alpha in (0.3, 0.62] and beta in (0.7, 0.9] is perfect; the
        // largest grid values win
        assert!((r.thresholds.beta - 0.9).abs() < 1e-12);
        assert!((r.thresholds.alpha - 0.6).abs() < 1e-12);
        assert_eq!(r.evaluated, 21 * 20 / 2);
    }

    #[test]
    fn single_class_still_valid() {
        let r = grid_search_thresholds(&[Similar; 4], &[0.5, 0.6, 0.7, 0.8], GridRange::default(), GridRange::default(), 0.05).unwrap();
        r.thresholds.validate().unwrap();
        assert!((r.macro_f1 - 1.0 / 3.0).abs() < 1e-12);
        assert!(grid_search_thresholds(&[], &[], GridRange::default(), GridRange::default(), 0.05).is_err());
    }

    #[test]
    fn zero_noise_and_determinism() {
        let (l, s) = separable();
        let base = Thresholds::new(0.5, 0.8).unwrap();
        let g = sensitivity_sweep(&l, &s, &base, &[0.0, 0.1], 20, 4).unwrap();
        assert_eq!(g.cell(0, 0).mean_f1, macro_f1_at(&l, &s, &base));
        assert_eq!(g.cell(0, 0).std_f1, 0.0);
        assert_eq!(g, sensitivity_sweep(&l, &s, &base, &[0.0, 0.1], 20, 4).unwrap());
        assert_eq!(g.to_csv().lines().count(), 5);
    }
}
