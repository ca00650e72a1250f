use thiserror::Error;

use crate::model::ValidationIssue;

#[derive(Debug, Error)]
pub enum McsError {
    #[error("instance failed validation: {}", format_issues(.0))]
    Invalid(Vec<ValidationIssue>),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("user {0} is not a winner of the greedy schedule")]
    NotAWinner(usize),
    #[error("expected {expected} bids, got {got}")]
    BidCount { expected: usize, got: usize },
    #[error("arrival order is not a permutation of 0..{0}")]
    BadOrder(usize),
    #[error("sample size {xi} exceeds user count {n}")]
    BadSampleSize { xi: usize, n: usize },
    #[error("search space of {slots} (user, slot) pairs exceeds the limit of {limit}")]
    SearchSpaceTooLarge { slots: usize, limit: usize },
    #[error("payment oracle found a non-constant step on ({from}, {to}]")]
    OracleStep { from: String, to: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn format_issues(issues: &[ValidationIssue]) -> String {
    issues
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

pub type Result<T, E = McsError> = std::result::Result<T, E>;
