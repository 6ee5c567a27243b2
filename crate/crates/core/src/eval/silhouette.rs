use crate::audit::PairLabel;
use crate::{Error, Result};

/// Sorted class members with prefix sums, for O(log n) mean distances.
struct Class {
    sorted: Vec<f64>,
    prefix: Vec<f64>,
}

impl Class {
    fn new(mut v: Vec<f64>) -> Self {
        v.sort_by(f64::total_cmp);
        let mut prefix = Vec::with_capacity(v.len() + 1);
        prefix.push(0.0);
        let mut acc = 0.0;
        for &x in &v {
            acc += x;
            prefix.push(acc);
        }
        Self { sorted: v, prefix }
    }

    /// Σ |x − y| over members y.
    fn total_distance(&self, x: f64) -> f64 {
        let k = self.sorted.partition_point(|&y| y < x);
        let n = self.sorted.len();
        let below = self.prefix[k];
        let above = self.prefix[n] - below;
        (x * k as f64 - below) + (above - x * (n - k) as f64)
    }
}

/// Mean silhouette of 1-D scores grouped by label, with distance `|x − y|`.
///
/// Points in singleton classes contribute 0. Runs in O(n log n).
pub fn silhouette(scores: &[f64], labels: &[PairLabel]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::validation(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::validation(format!("score {i} is not finite")));
    }
    let mut members: [Vec<f64>; 3] = Default::default();
    for (&s, &l) in scores.iter().zip(labels) {
        members[l.index()].push(s);
    }
    let present = members.iter().filter(|m| !m.is_empty()).count();
    if present < 2 {
        return Err(Error::validation(format!(
            "silhouette needs at least 2 classes, found {present}"
        )));
    }
    let classes: Vec<Option<Class>> = members
        .into_iter()
        .map(|m| (!m.is_empty()).then(|| Class::new(m)))
        .collect();

    let mut total = 0.0;
    for (&x, &l) in scores.iter().zip(labels) {
        let own = classes[l.index()].as_ref().expect("own class present");
        let n_own = own.sorted.len();
        if n_own == 1 {
            continue;
        }
        let a = own.total_distance(x) / (n_own - 1) as f64;
        let b = classes
            .iter()
            .enumerate()
            .filter(|(k, _)| *k != l.index())
            .filter_map(|(_, c)| c.as_ref())
            .map(|c| c.total_distance(x) / c.sorted.len() as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    Ok(total / scores.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use PairLabel::*;

    #[test]
    fn separated_and_interleaved() {
        let s = silhouette(&[0.0, 0.0, 0.0, 1.0, 1.0, 1.0], &[Different, Different, Different, Duplicate, Duplicate, Duplicate]).unwrap();
        assert!((s - 1.0).abs() < 1e-12);
        let z = silhouette(&[0.5, 0.5, 0.5, 0.5], &[Similar, Duplicate, Similar, Duplicate]).unwrap();
        assert_eq!(z, 0.0);
    }

    #[test]
    fn single_class_rejected() {
        assert!(silhouette(&[0.1, 0.2], &[Similar, Similar]).is_err());
    }

    #[test]
    fn singleton_contributes_zero() {
        // the singleton duplicate adds 0, the two different points score 1 each
        let s = silhouette(&[0.0, 0.0, 1.0], &[Different, Different, Duplicate]).unwrap();
        assert!((s - 2.0 / 3.0).abs() < 1e-12);
    }
}
