//! The three-way thresholding function.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairLabel {
    Different,
    Similar,
    Duplicate,
}

impl PairLabel {
    pub const ALL: [PairLabel; 3] = [PairLabel::Different, PairLabel::Similar, PairLabel::Duplicate];

    /// Row/column position in confusion tables.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PairLabel::Different => "different",
            PairLabel::Similar => "similar",
            PairLabel::Duplicate => "duplicate",
        }
    }
}

impl fmt::Display for PairLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PairLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PairLabel::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| Error::validation(format!("unknown label '{s}'")))
    }
}

/// `different` below `alpha`, `similar` in `[alpha, beta)`, `duplicate` from `beta` up.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thresholds {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            alpha: 0.6,
            beta: 0.85,
        }
    }
}

impl Thresholds {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        let t = Self { alpha, beta };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.alpha && self.alpha < self.beta && self.beta <= 1.0) {
            return Err(Error::validation(format!(
                "thresholds must satisfy 0 <= alpha < beta <= 1, got alpha={} beta={}",
                self.alpha, self.beta
            )));
        }
        Ok(())
    }

    /// Label for a finite score; no validation of the thresholds themselves.
    #[inline]
    pub fn label(&self, score: f64) -> PairLabel {
        if score >= self.beta {
            PairLabel::Duplicate
        } else if score >= self.alpha {
            PairLabel::Similar
        } else {
            PairLabel::Different
        }
    }
}

pub fn classify(score: f64, t: &Thresholds) -> Result<PairLabel> {
    if score.is_nan() {
        return Err(Error::validation("cannot classify a NaN score"));
    }
    Ok(t.label(score))
}
