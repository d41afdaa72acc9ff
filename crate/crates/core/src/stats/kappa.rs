use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::StatsError;

/// Cohen's kappa between two aligned label series.
///
/// Returns 1.0 when both raters use a single, shared label throughout.
pub fn cohen_kappa<T: Ord>(a: &[T], b: &[T]) -> Result<f64, StatsError> {
    if a.len() != b.len() {
        return Err(StatsError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(StatsError::TooShort { needed: 1, got: 0 });
    }
    let n = a.len() as f64;
    let agree = a.iter().zip(b).filter(|(x, y)| x == y).count() as f64;
    let observed = agree / n;

    let mut marginals: BTreeMap<&T, (usize, usize)> = BTreeMap::new();
    for x in a {
        marginals.entry(x).or_default().0 += 1;
    }
    for y in b {
        marginals.entry(y).or_default().1 += 1;
    }
    let expected: f64 = marginals
        .values()
        .map(|&(ca, cb)| (ca as f64 / n) * (cb as f64 / n))
        .sum();

    if (1.0 - expected).abs() < 1e-15 {
        return if observed == 1.0 {
            Ok(1.0)
        } else {
            Err(StatsError::DegenerateMarginals)
        };
    }
    Ok((observed - expected) / (1.0 - expected))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AveragedKappa {
    pub mean: f64,
    pub pairs_used: usize,
    pub degenerate_pairs: usize,
}

fn average(kappas: impl Iterator<Item = Result<f64, StatsError>>) -> Result<AveragedKappa, StatsError> {
    let mut sum = 0.0;
    let mut used = 0;
    let mut degenerate = 0;
    for k in kappas {
        match k {
            Ok(v) => {
                sum += v;
                used += 1;
            }
            Err(StatsError::DegenerateMarginals) => degenerate += 1,
            Err(e) => return Err(e),
        }
    }
    if used == 0 {
        return Err(StatsError::NoPairs);
    }
    Ok(AveragedKappa {
        mean: sum / used as f64,
        pairs_used: used,
        degenerate_pairs: degenerate,
    })
}

/// Mean kappa over all unordered pairs of series. Degenerate pairs are
/// skipped and counted.
pub fn avg_pairwise_kappa<T: Ord>(series: &[&[T]]) -> Result<AveragedKappa, StatsError> {
    if series.len() < 2 {
        return Err(StatsError::TooShort {
            needed: 2,
            got: series.len(),
        });
    }
    let pairs = (0..series.len())
        .flat_map(|i| (i + 1..series.len()).map(move |j| (i, j)))
        .map(|(i, j)| cohen_kappa(series[i], series[j]));
    average(pairs)
}

/// Mean kappa of one series (e.g. an LLM simulator) against each of `others`.
pub fn avg_kappa_against<T: Ord>(target: &[T], others: &[&[T]]) -> Result<AveragedKappa, StatsError> {
    if others.is_empty() {
        return Err(StatsError::TooShort { needed: 1, got: 0 });
    }
    average(others.iter().map(|o| cohen_kappa(target, o)))
}
