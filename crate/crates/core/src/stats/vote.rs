use std::collections::BTreeMap;

use super::StatsError;
use crate::domain::SimulationJudgment;

/// Annotators per simulation task.
pub const DEFAULT_REDUNDANCY: usize = 3;

/// Strict-majority aggregation over the available judgments. Without a
/// strict majority the result is `Unsimulatable`.
pub fn majority_vote(judgments: &[SimulationJudgment], redundancy: usize) -> Result<SimulationJudgment, StatsError> {
    if judgments.is_empty() {
        return Err(StatsError::EmptyInput);
    }
    if judgments.len() > redundancy {
        return Err(StatsError::TooManyJudgments {
            got: judgments.len(),
            redundancy,
        });
    }
    let mut counts: BTreeMap<SimulationJudgment, usize> = BTreeMap::new();
    for j in judgments {
        *counts.entry(*j).or_default() += 1;
    }
    Ok(counts
        .into_iter()
        .find(|&(_, c)| 2 * c > judgments.len())
        .map(|(j, _)| j)
        .unwrap_or(SimulationJudgment::Unsimulatable))
}
