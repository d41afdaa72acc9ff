//! Agreement, correlation and significance statistics.

mod correlation;
mod kappa;
mod permutation;
mod vote;

use thiserror::Error;

pub use correlation::{average_ranks, pearson, spearman};
pub use kappa::{avg_kappa_against, avg_pairwise_kappa, cohen_kappa, AveragedKappa};
pub use permutation::{paired_permutation_test, PermutationTest, DEFAULT_PERMUTATION_ITERATIONS};
pub use vote::{majority_vote, DEFAULT_REDUNDANCY};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StatsError {
    #[error("series lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} items, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("kappa undefined: both raters constant on the same label yet disagreeing")]
    DegenerateMarginals,
    #[error("correlation undefined for a constant vector")]
    ConstantVector,
    #[error("no judgments to aggregate")]
    EmptyInput,
    #[error("{got} judgments exceed redundancy {redundancy}")]
    TooManyJudgments { got: usize, redundancy: usize },
    #[error("no usable rater pairs")]
    NoPairs,
}
