use serde::{Deserialize, Serialize};

use crate::audit::PairLabel;
use crate::{Error, Result};

/// Counts indexed by `[true label][predicted label]`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionTable {
    pub counts: [[u64; 3]; 3],
}

impl ConfusionTable {
    pub fn new(counts: [[u64; 3]; 3]) -> Self {
        Self { counts }
    }

    pub fn from_labels(truth: &[PairLabel], predicted: &[PairLabel]) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::validation(format!(
                "{} true labels but {} predictions",
                truth.len(),
                predicted.len()
            )));
        }
        let mut t = Self::default();
        for (&a, &p) in truth.iter().zip(predicted) {
            t.add(a, p);
        }
        Ok(t)
    }

    pub fn add(&mut self, truth: PairLabel, predicted: PairLabel) {
        self.counts[truth.index()][predicted.index()] += 1;
    }

    pub fn get(&self, truth: PairLabel, predicted: PairLabel) -> u64 {
        self.counts[truth.index()][predicted.index()]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PerClass {
    pub different: ClassScores,
    pub similar: ClassScores,
    pub duplicate: ClassScores,
}

impl PerClass {
    pub fn get(&self, l: PairLabel) -> &ClassScores {
        match l {
            PairLabel::Different => &self.different,
            PairLabel::Similar => &self.similar,
            PairLabel::Duplicate => &self.duplicate,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub per_class: PerClass,
    pub macro_f1: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-class precision, recall and F1, plus their unweighted macro F1.
/// Zero denominators give 0.
pub fn precision_recall_f1(table: &ConfusionTable) -> ClassificationMetrics {
    let c = &table.counts;
    let scores = |k: usize| {
        let tp = c[k][k];
        let predicted: u64 = (0..3).map(|t| c[t][k]).sum();
        let actual: u64 = c[k].iter().sum();
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, actual);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        ClassScores { precision, recall, f1 }
    };
    let per_class = PerClass {
        different: scores(0),
        similar: scores(1),
        duplicate: scores(2),
    };
    let macro_f1 = (per_class.different.f1 + per_class.similar.f1 + per_class.duplicate.f1) / 3.0;
    ClassificationMetrics { per_class, macro_f1 }
}

/// Macro F1 of `predicted` against `truth`.
pub fn macro_f1(truth: &[PairLabel], predicted: &[PairLabel]) -> Result<f64> {
    Ok(precision_recall_f1(&ConfusionTable::from_labels(truth, predicted)?).macro_f1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_is_perfect() {
        let m = precision_recall_f1(&ConfusionTable::new([[5, 0, 0], [0, 3, 0], [0, 0, 7]]));
        assert_eq!(m.macro_f1, 1.0);
        assert_eq!(m.per_class.similar, ClassScores { precision: 1.0, recall: 1.0, f1: 1.0 });
    }

    #[test]
    fn never_predicted_class_scores_zero() {
        let m = precision_recall_f1(&ConfusionTable::new([[5, 1, 0], [0, 3, 0], [2, 2, 0]]));
        assert_eq!(m.per_class.duplicate, ClassScores::default());
    }

    #[test]
    fn hand_computed_table() {
        // rows: different 8/10, similar 6/10, duplicate 9/10
        let t = ConfusionTable::new([[8, 2, 0], [3, 6, 1], [0, 1, 9]]);
        let m = precision_recall_f1(&t);
        let f = |p: f64, r: f64| 2.0 * p * r / (p + r);
        let expect = (f(8.0 / 11.0, 0.8) + f(6.0 / 9.0, 0.6) + f(0.9, 0.9)) / 3.0;
        assert!((m.macro_f1 - expect).abs() < 1e-15);
        assert!((m.macro_f1 - 0.764494570).abs() < 1e-9);
        assert_eq!(t.total(), 30);
    }

    #[test]
    fn scale_and_permutation_invariant() {
        let t = ConfusionTable::new([[8, 2, 0], [3, 6, 1], [0, 1, 9]]);
        let scaled = ConfusionTable::new(t.counts.map(|r| r.map(|v| v * 7)));
        assert_eq!(precision_recall_f1(&t), precision_recall_f1(&scaled));
        let perm = [2usize, 0, 1];
        let mut p = [[0u64; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                p[perm[i]][perm[j]] = t.counts[i][j];
            }
        }
        let a = precision_recall_f1(&t).macro_f1;
        let b = precision_recall_f1(&ConfusionTable::new(p)).macro_f1;
        assert!((a - b).abs() < 1e-15);
    }
}
