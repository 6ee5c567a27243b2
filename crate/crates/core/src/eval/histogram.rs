use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::audit::{PairLabel, Thresholds};
use crate::{Error, Result};

/// Per-class score statistics shipped alongside the histogram.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassSummary {
    pub count: usize,
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassHistogram {
    pub label: PairLabel,
    pub counts: Vec<u64>,
    pub summary: ClassSummary,
}

/// Per-class score histograms over `[lo, hi]` with threshold positions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub bins: usize,
    pub thresholds: Option<Thresholds>,
    /// Only classes with at least one score.
    pub classes: Vec<ClassHistogram>,
}

impl Histogram {
    pub fn bin_edges(&self, k: usize) -> (f64, f64) {
        let w = (self.hi - self.lo) / self.bins as f64;
        (self.lo + w * k as f64, self.lo + w * (k + 1) as f64)
    }

    /// `class,bin_lo,bin_hi,count`, one row per class and bin.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("class,bin_lo,bin_hi,count\n");
        for c in &self.classes {
            for (k, n) in c.counts.iter().enumerate() {
                let (a, b) = self.bin_edges(k);
                let _ = writeln!(out, "{},{a},{b},{n}", c.label);
            }
        }
        out
    }

    /// Smallest gap between class means divided by the largest class std.
    /// Values above 1 mean the modes are visibly separated.
    pub fn separation(&self) -> f64 {
        let s: Vec<&ClassSummary> = self.classes.iter().map(|c| &c.summary).collect();
        let mut gap = f64::INFINITY;
        for i in 0..s.len() {
            for j in i + 1..s.len() {
                gap = gap.min((s[i].mean - s[j].mean).abs());
            }
        }
        let spread = s.iter().map(|c| c.std).fold(0.0, f64::max);
        gap / spread
    }
}

/// Bins scores per class over `[-1, 1]`. Out-of-range scores land in the
/// end bins.
pub fn export_histograms(
    scores: &[f64],
    labels: &[PairLabel],
    bins: usize,
    thresholds: Option<Thresholds>,
) -> Result<Histogram> {
    if scores.len() != labels.len() {
        return Err(Error::validation(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if bins == 0 {
        return Err(Error::validation("histogram needs at least one bin"));
    }
    if scores.is_empty() {
        return Err(Error::validation("histogram needs at least one labeled score"));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::validation(format!("score {i} is not finite")));
    }
    let (lo, hi) = (-1.0, 1.0);
    let mut classes = Vec::new();
    for label in PairLabel::ALL {
        let vals: Vec<f64> = scores
            .iter()
            .zip(labels)
            .filter(|(_, &l)| l == label)
            .map(|(&s, _)| s)
            .collect();
        if vals.is_empty() {
            continue;
        }
        let mut counts = vec![0u64; bins];
        for &s in &vals {
            let k = ((s - lo) / (hi - lo) * bins as f64).floor().clamp(0.0, (bins - 1) as f64);
            counts[k as usize] += 1;
        }
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let std = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        classes.push(ClassHistogram {
            label,
            counts,
            summary: ClassSummary {
                count: vals.len(),
                mean,
                std,
            },
        });
    }
    Ok(Histogram {
        lo,
        hi,
        bins,
        thresholds,
        classes,
    })
}
