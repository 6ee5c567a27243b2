//! Classification metrics, silhouette, score histograms and the runtime
//! benchmark.

mod bench;
mod histogram;
mod metrics;
mod scoring;
mod silhouette;

use serde::{Deserialize, Serialize};

pub use bench::{runtime_benchmark, BenchOptions, BenchmarkResult};
pub use histogram::{export_histograms, ClassHistogram, ClassSummary, Histogram};
pub use metrics::{macro_f1, precision_recall_f1, ClassScores, ClassificationMetrics, ConfusionTable, PerClass};
pub use scoring::{score_records, ImageStore, Misalignment, ScoreMethod};
pub use silhouette::silhouette;

use crate::audit::{PairLabel, Thresholds};
use crate::Result;

/// Contents of a metrics JSON file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub per_class: PerClass,
    pub macro_f1: f64,
    /// `None` when fewer than two classes are present.
    pub silhouette: Option<f64>,
    pub thresholds: Thresholds,
    pub n_pairs: usize,
    pub confusion: ConfusionTable,
}

/// Classifies `scores` with `thresholds` and scores the result against
/// `labels`.
pub fn evaluate(labels: &[PairLabel], scores: &[f64], thresholds: &Thresholds) -> Result<EvalMetrics> {
    thresholds.validate()?;
    let predicted = scores
        .iter()
        .map(|&s| crate::audit::classify(s, thresholds))
        .collect::<Result<Vec<_>>>()?;
    let confusion = ConfusionTable::from_labels(labels, &predicted)?;
    let m = precision_recall_f1(&confusion);
    let classes = PairLabel::ALL.iter().filter(|l| labels.contains(l)).count();
    let silhouette = if classes >= 2 { Some(silhouette(scores, labels)?) } else { None };
    Ok(EvalMetrics {
        per_class: m.per_class,
        macro_f1: m.macro_f1,
        silhouette,
        thresholds: *thresholds,
        n_pairs: labels.len(),
        confusion,
    })
}
