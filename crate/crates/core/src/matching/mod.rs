//! Probabilistic record linkage: field comparators, log-likelihood scoring
//! and the blocked duplicate scan.

mod blocking;
mod config;
mod score;
mod strings;

use thiserror::Error;

use crate::identity::Phn;

pub use blocking::{blocking_keys, dedup_scan, find_candidates, shares_blocking_key, BlockingIndex, BlockingKey, RegistryView};
pub use config::{ComparatorConfig, ComparedField, ComparisonMethod, LinkageConfig, Thresholds};
pub use score::{
    compare_field, dates_agree, field_weight, score_pair, score_views, Agreement, Decision, FieldOutcome,
    FieldValue, LinkageView, MatchResult,
};
pub use strings::{jaro, jaro_winkler, soundex};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MatchError {
    #[error("INVALID_CONFIG: {0}")]
    InvalidConfig(String),
    #[error("INVALID_CONFIG line {line}: {reason}")]
    ConfigLine { line: usize, reason: String },
    #[error("SELF_COMPARISON: {0}")]
    SelfComparison(Phn),
}
