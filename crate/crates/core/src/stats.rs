//! Permutation tests and effect sizes for association statistics.
//!
//! The test is one-sided: the p-value is the fraction of equal-size
//! relabelings of the pooled values whose statistic is at least the observed
//! one. Relabelings are enumerated exactly when there are at most
//! `max_permutations` of them, otherwise sampled. Monte Carlo draw `i` uses
//! its own ChaCha stream derived from `(seed, i)`, so results are identical
//! however the draws are scheduled.

use itertools::Itertools;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_MAX_PERMUTATIONS: u64 = 10_000;

/// Relative slack when comparing a permuted statistic to the observed one,
/// so relabelings that reorder the same floating-point sum still count as
/// ties.
const TIE_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("target sets must have equal size, got {x} and {y}")]
    UnequalSizes { x: usize, y: usize },
    #[error("target sets must be non-empty")]
    Empty,
    #[error("pooled standard deviation is zero; effect size is undefined")]
    DegenerateStdDev,
    #[error("non-finite value in input")]
    NonFinite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationTestResult {
    pub p_value: f64,
    pub observed_statistic: f64,
    pub n_permutations_used: u64,
    /// True when every equal-size bipartition was enumerated.
    pub exact: bool,
    pub seed: u64,
}

/// `sum(x) - sum(y)`: the WEAT test statistic over per-word associations.
pub fn sum_difference(x: &[f64], y: &[f64]) -> f64 {
    x.iter().sum::<f64>() - y.iter().sum::<f64>()
}

/// Number of ordered equal-size bipartitions of `2n` items, `C(2n, n)`.
/// Saturates at `u128::MAX`.
pub fn bipartition_count(n: usize) -> u128 {
    let mut c: u128 = 1;
    for i in 0..n as u128 {
        // C(n+i+1, i+1) = C(n+i, i) * (n+i+1) / (i+1), exact at each step.
        c = match c.checked_mul(n as u128 + i + 1) {
            Some(v) => v / (i + 1),
            None => return u128::MAX,
        };
    }
    c
}

fn check_inputs(x: &[f64], y: &[f64]) -> Result<(), StatsError> {
    if x.is_empty() || y.is_empty() {
        return Err(StatsError::Empty);
    }
    if x.len() != y.len() {
        return Err(StatsError::UnequalSizes {
            x: x.len(),
            y: y.len(),
        });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    Ok(())
}

fn at_least(candidate: f64, observed: f64) -> bool {
    candidate >= observed - TIE_TOLERANCE * observed.abs().max(1.0)
}

/// Permutation test of [`sum_difference`]; exact below `max_permutations`
/// bipartitions, Monte Carlo with `max_permutations` draws above.
pub fn permutation_test(
    x: &[f64],
    y: &[f64],
    max_permutations: u64,
    seed: u64,
) -> Result<PermutationTestResult, StatsError> {
    permutation_test_with(x, y, sum_difference, max_permutations, seed)
}

pub fn permutation_test_with<F>(
    x: &[f64],
    y: &[f64],
    statistic: F,
    max_permutations: u64,
    seed: u64,
) -> Result<PermutationTestResult, StatsError>
where
    F: Fn(&[f64], &[f64]) -> f64 + Sync,
{
    check_inputs(x, y)?;
    if bipartition_count(x.len()) <= max_permutations as u128 {
        exact_permutation_test_with(x, y, statistic, seed)
    } else {
        monte_carlo_permutation_test_with(x, y, statistic, max_permutations, seed)
    }
}

/// Enumerates all `C(2n, n)` relabelings. The observed labeling is one of
/// them, so the p-value is never zero.
pub fn exact_permutation_test_with<F>(
    x: &[f64],
    y: &[f64],
    statistic: F,
    seed: u64,
) -> Result<PermutationTestResult, StatsError>
where
    F: Fn(&[f64], &[f64]) -> f64,
{
    check_inputs(x, y)?;
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let n = x.len();
    let observed = statistic(x, y);

    let mut total: u64 = 0;
    let mut hits: u64 = 0;
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for chosen in (0..2 * n).combinations(n) {
        xs.clear();
        ys.clear();
        let mut next = chosen.iter().peekable();
        for (i, &v) in pooled.iter().enumerate() {
            if next.peek() == Some(&&i) {
                next.next();
                xs.push(v);
            } else {
                ys.push(v);
            }
        }
        total += 1;
        if at_least(statistic(&xs, &ys), observed) {
            hits += 1;
        }
    }
    Ok(PermutationTestResult {
        p_value: hits as f64 / total as f64,
        observed_statistic: observed,
        n_permutations_used: total,
        exact: true,
        seed,
    })
}

/// Samples `draws` random relabelings. The p-value is `(1 + hits) / (1 +
/// draws)`, counting the observed labeling once.
pub fn monte_carlo_permutation_test_with<F>(
    x: &[f64],
    y: &[f64],
    statistic: F,
    draws: u64,
    seed: u64,
) -> Result<PermutationTestResult, StatsError>
where
    F: Fn(&[f64], &[f64]) -> f64 + Sync,
{
    check_inputs(x, y)?;
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let n = x.len();
    let observed = statistic(x, y);

    let hits: u64 = (0..draws)
        .into_par_iter()
        .map(|draw| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(draw);
            let mut shuffled = pooled.clone();
            shuffled.shuffle(&mut rng);
            let (xs, ys) = shuffled.split_at(n);
            u64::from(at_least(statistic(xs, ys), observed))
        })
        .sum();
    Ok(PermutationTestResult {
        p_value: (1 + hits) as f64 / (1 + draws) as f64,
        observed_statistic: observed,
        n_permutations_used: draws,
        exact: false,
        seed,
    })
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Population (divide-by-n) standard deviation.
pub fn population_std(values: &[f64]) -> f64 {
    let m = mean(values);
    (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / values.len() as f64).sqrt()
}

/// `(mean(x) - mean(y)) / std(x ∪ y)` with the population standard deviation
/// of the pooled values.
pub fn effect_size(assoc_x: &[f64], assoc_y: &[f64]) -> Result<f64, StatsError> {
    if assoc_x.is_empty() || assoc_y.is_empty() {
        return Err(StatsError::Empty);
    }
    let pooled: Vec<f64> = assoc_x.iter().chain(assoc_y).copied().collect();
    if pooled.iter().any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let std = population_std(&pooled);
    let scale = pooled.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
    if std <= 1e-12 * scale {
        return Err(StatsError::DegenerateStdDev);
    }
    Ok((mean(assoc_x) - mean(assoc_y)) / std)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn bipartition_counts() {
        assert_eq!(bipartition_count(1), 2);
        assert_eq!(bipartition_count(2), 6);
        assert_eq!(bipartition_count(4), 70);
        assert_eq!(bipartition_count(8), 12_870);
        assert_eq!(bipartition_count(200), u128::MAX);
    }

    #[test]
    fn singleton_sets_hand_enumeration() {
        // Relabelings of {+1, -1}: s = 2 (observed) and s = -2.
        let r = permutation_test(&[1.0], &[-1.0], DEFAULT_MAX_PERMUTATIONS, 0).unwrap();
        assert_eq!(r.observed_statistic, 2.0);
        assert_eq!(r.p_value, 0.5);
        assert!(r.exact);
        assert_eq!(r.n_permutations_used, 2);
    }

    #[test]
    fn identical_values_tie_everywhere() {
        // Mirrored samples: the null distribution is symmetric around 0.
        let r = permutation_test(
            &[0.1, 0.2, 0.3],
            &[0.1, 0.2, 0.3],
            DEFAULT_MAX_PERMUTATIONS,
            0,
        )
        .unwrap();
        assert!(r.p_value >= 0.5);
        let r = permutation_test(&[0.7; 4], &[0.7; 4], DEFAULT_MAX_PERMUTATIONS, 0).unwrap();
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn monte_carlo_is_seed_deterministic() {
        let x: Vec<f64> = (0..10).map(|i| (i as f64).sin()).collect();
        let y: Vec<f64> = (0..10).map(|i| (i as f64).cos()).collect();
        let a = permutation_test(&x, &y, 500, 42).unwrap();
        let b = permutation_test(&x, &y, 500, 42).unwrap();
        assert!(!a.exact);
        assert_eq!(a, b);
        assert_eq!(a.n_permutations_used, 500);
    }

    #[test]
    fn input_errors() {
        assert_eq!(
            permutation_test(&[1.0], &[1.0, 2.0], 10, 0),
            Err(StatsError::UnequalSizes { x: 1, y: 2 })
        );
        assert_eq!(permutation_test(&[], &[], 10, 0), Err(StatsError::Empty));
    }

    #[test]
    fn effect_size_examples() {
        assert_eq!(effect_size(&[1.0], &[-1.0]).unwrap(), 2.0);
        assert_eq!(effect_size(&[0.3, -0.2], &[0.3, -0.2]).unwrap(), 0.0);
        assert_eq!(
            effect_size(&[0.1; 3], &[0.1; 3]),
            Err(StatsError::DegenerateStdDev)
        );
    }

    /// Brute-force p-value by explicit subset enumeration via bitmasks,
    /// independent of the combinations-based implementation.
    fn brute_force_p(x: &[f64], y: &[f64], stat: impl Fn(&[f64], &[f64]) -> f64) -> f64 {
        let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
        let n = x.len();
        let observed = stat(x, y);
        let (mut hits, mut total) = (0, 0);
        for mask in 0u32..(1 << (2 * n)) {
            if mask.count_ones() as usize != n {
                continue;
            }
            let xs: Vec<f64> = (0..2 * n)
                .filter(|i| mask & (1 << i) != 0)
                .map(|i| pooled[i])
                .collect();
            let ys: Vec<f64> = (0..2 * n)
                .filter(|i| mask & (1 << i) == 0)
                .map(|i| pooled[i])
                .collect();
            total += 1;
            if stat(&xs, &ys) >= observed - 1e-10 * observed.abs().max(1.0) {
                hits += 1;
            }
        }
        hits as f64 / total as f64
    }

    fn equal_sets() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (1usize..=4).prop_flat_map(|n| {
            (
                prop::collection::vec(-1.0f64..1.0, n),
                prop::collection::vec(-1.0f64..1.0, n),
            )
        })
    }

    proptest! {
        #[test]
        fn exact_matches_brute_force((x, y) in equal_sets()) {
            let r = permutation_test(&x, &y, DEFAULT_MAX_PERMUTATIONS, 0).unwrap();
            prop_assert!(r.exact);
            prop_assert_eq!(r.p_value, brute_force_p(&x, &y, sum_difference));
        }

        #[test]
        fn swap_with_negated_statistic_is_invariant((x, y) in equal_sets()) {
            let forward = permutation_test(&x, &y, DEFAULT_MAX_PERMUTATIONS, 0).unwrap();
            let negated = |a: &[f64], b: &[f64]| -sum_difference(a, b);
            let swapped = permutation_test_with(&y, &x, negated, DEFAULT_MAX_PERMUTATIONS, 0).unwrap();
            prop_assert_eq!(forward.p_value, swapped.p_value);
            prop_assert_eq!(swapped.p_value, brute_force_p(&y, &x, negated));
        }

        #[test]
        fn p_value_in_unit_interval((x, y) in equal_sets(), seed in any::<u64>()) {
            let r = permutation_test(&x, &y, 3, seed).unwrap();
            prop_assert!(r.p_value > 0.0 && r.p_value <= 1.0);
        }

        #[test]
        fn effect_size_antisymmetric(
            x in prop::collection::vec(-1.0f64..1.0, 1..6),
            y in prop::collection::vec(-1.0f64..1.0, 1..6),
        ) {
            match (effect_size(&x, &y), effect_size(&y, &x)) {
                (Ok(a), Ok(b)) => prop_assert!((a + b).abs() < 1e-12),
                (Err(a), Err(b)) => prop_assert_eq!(a, b),
                _ => prop_assert!(false, "asymmetric error"),
            }
        }
    }
}
