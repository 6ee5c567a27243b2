//! Embedding-based memorization audit: indexes, exact search, the
//! three-way thresholding function and threshold calibration.

mod calibrate;
mod index;
mod report;
mod threshold;

pub use calibrate::{
    default_sigmas, grid_search_thresholds, grid_values, macro_f1_at, sensitivity_sweep, GridRange,
    GridSearchResult, SensitivityGrid, SweepCell,
};
pub use index::{
    best_matches, build_index, dot, pairwise_scores, EmbeddingIndex, ExactSearch, ScoreBlock, SearchBackend,
    SkippedImage, NORM_TOLERANCE,
};
pub use report::{audit_indexes, memorization_score, AuditReport, Match, Timings, REPORT_VERSION};
pub use threshold::{classify, PairLabel, Thresholds};
