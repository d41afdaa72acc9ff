use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::StatsError;

pub const DEFAULT_PERMUTATION_ITERATIONS: u32 = 10_000;

/// Outcome of a paired sign-flip permutation test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationTest {
    /// Mean of `a - b`.
    pub mean_difference: f64,
    pub p_value: f64,
    pub iterations: u32,
    pub seed: u64,
}

/// Two-sided sign-flip test on paired differences.
///
/// p = (1 + #{|permuted mean| >= |observed mean|}) / (1 + iterations).
pub fn paired_permutation_test(
    a: &[f64],
    b: &[f64],
    iterations: u32,
    seed: u64,
) -> Result<PermutationTest, StatsError> {
    if a.len() != b.len() {
        return Err(StatsError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(StatsError::TooShort { needed: 1, got: 0 });
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = diffs.len() as f64;
    let observed = diffs.iter().sum::<f64>() / n;
    let threshold = observed.abs() - 1e-12 * observed.abs().max(1.0);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut extreme = 0u64;
    for _ in 0..iterations {
        let permuted: f64 = diffs
            .iter()
            .map(|d| if rng.gen::<bool>() { *d } else { -*d })
            .sum::<f64>()
            / n;
        if permuted.abs() >= threshold {
            extreme += 1;
        }
    }
    Ok(PermutationTest {
        mean_difference: observed,
        p_value: (1 + extreme) as f64 / (1 + u64::from(iterations)) as f64,
        iterations,
        seed,
    })
}
