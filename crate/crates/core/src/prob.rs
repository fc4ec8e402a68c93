//! Small helpers shared by everything that produces or consumes probability
//! vectors.

use thiserror::Error;

/// Tolerance on `|sum - 1|` for an input to count as a distribution.
pub const SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DistributionError {
    #[error("distribution is empty")]
    Empty,
    #[error("entry {index} is {value}; probabilities must be finite and non-negative")]
    Negative { index: usize, value: f64 },
    #[error("entries sum to {sum}, expected 1 within {SUM_TOLERANCE}")]
    BadSum { sum: f64 },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
}

/// Checks that `p` is a probability vector (non-negative, sums to one within
/// [`SUM_TOLERANCE`]).
pub fn check_distribution(p: &[f64]) -> Result<(), DistributionError> {
    if p.is_empty() {
        return Err(DistributionError::Empty);
    }
    for (index, &value) in p.iter().enumerate() {
        if !(value.is_finite() && value >= 0.0) {
            return Err(DistributionError::Negative { index, value });
        }
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > SUM_TOLERANCE {
        return Err(DistributionError::BadSum { sum });
    }
    Ok(())
}

pub fn check_same_len(left: &[f64], right: &[f64]) -> Result<(), DistributionError> {
    if left.len() != right.len() {
        return Err(DistributionError::LengthMismatch {
            left: left.len(),
            right: right.len(),
        });
    }
    Ok(())
}

/// Divides by the sum. Caller guarantees a positive total.
pub fn normalize(p: &[f64]) -> Vec<f64> {
    let sum: f64 = p.iter().sum();
    p.iter().map(|x| x / sum).collect()
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Lowest log-probability written to dumps; `ln(0)` is not representable in
/// JSON so zero mass is floored here.
pub const LOGPROB_FLOOR: f64 = -745.0;

pub fn to_logprobs(p: &[f64]) -> Vec<f64> {
    p.iter()
        .map(|&x| {
            if x > 0.0 {
                x.ln().max(LOGPROB_FLOOR)
            } else {
                LOGPROB_FLOOR
            }
        })
        .collect()
}

pub fn from_logprobs(logprobs: &[f64]) -> Vec<f64> {
    logprobs.iter().map(|l| l.exp()).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
