//! Self-debiasing: damp the words whose probability rises when the model is
//! told to produce biased text.
//!
//! For each word, `Δ = p_plain − p_biased`. Words with `Δ ≥ 0` keep their
//! mass; words with `Δ < 0` are scaled by `exp(λ·Δ)`. The scaled vector is
//! renormalized so it can be sampled from directly.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prob::{self, DistributionError};

pub const DEFAULT_LAMBDA: f64 = 50.0;
pub const DEFAULT_TEMPLATE: &str =
    "The following text discriminates against people because of {y}; sentence {x}";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SelfDebiasError {
    #[error("lambda must be positive and finite, got {0}")]
    BadLambda(f64),
    #[error("template is missing the {{{0}}} slot")]
    MissingSlot(&'static str),
    #[error("{0} must not be empty")]
    EmptyInput(&'static str),
    #[error("{words} labels for {len} probabilities")]
    LabelMismatch { words: usize, len: usize },
    #[error(transparent)]
    Distribution(#[from] DistributionError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfDebiasConfig {
    pub lambda_decay: f64,
    pub template: String,
}

impl Default for SelfDebiasConfig {
    fn default() -> Self {
        SelfDebiasConfig {
            lambda_decay: DEFAULT_LAMBDA,
            template: DEFAULT_TEMPLATE.to_string(),
        }
    }
}

impl SelfDebiasConfig {
    pub fn new(lambda_decay: f64, template: impl Into<String>) -> Result<Self, SelfDebiasError> {
        let cfg = SelfDebiasConfig {
            lambda_decay,
            template: template.into(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), SelfDebiasError> {
        if !(self.lambda_decay.is_finite() && self.lambda_decay > 0.0) {
            return Err(SelfDebiasError::BadLambda(self.lambda_decay));
        }
        for slot in ["x", "y"] {
            if !self.template.contains(&format!("{{{slot}}}")) {
                return Err(SelfDebiasError::MissingSlot(slot));
            }
        }
        Ok(())
    }
}

/// One word's contribution to a rescaling step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaRecord {
    pub word: String,
    pub p_plain: f64,
    pub p_biased: f64,
    pub delta: f64,
    /// Factor applied before renormalization.
    pub scale: f64,
}

pub fn scale_factor(delta: f64, lambda_decay: f64) -> f64 {
    if delta >= 0.0 {
        1.0
    } else {
        (lambda_decay * delta).exp()
    }
}

/// Scaled but not yet renormalized masses.
pub fn scaled_masses(
    p_plain: &[f64],
    p_biased: &[f64],
    cfg: &SelfDebiasConfig,
) -> Result<Vec<f64>, SelfDebiasError> {
    cfg.validate()?;
    prob::check_same_len(p_plain, p_biased)?;
    prob::check_distribution(p_plain)?;
    prob::check_distribution(p_biased)?;
    Ok(p_plain
        .iter()
        .zip(p_biased)
        .map(|(p, b)| p * scale_factor(p - b, cfg.lambda_decay))
        .collect())
}

pub fn selfdebias_rescale(
    p_plain: &[f64],
    p_biased: &[f64],
    cfg: &SelfDebiasConfig,
) -> Result<Vec<f64>, SelfDebiasError> {
    let masses = scaled_masses(p_plain, p_biased, cfg)?;
    if masses == p_plain {
        // Nothing was damped; dividing by a float sum would only add noise.
        return Ok(masses);
    }
    let total: f64 = masses.iter().sum();
    if total > 0.0 {
        Ok(prob::normalize(&masses))
    } else {
        // Every word was amplified and damped to zero; nothing to prefer.
        Ok(p_plain.to_vec())
    }
}

/// Rescales and returns the audit trail, one record per word.
pub fn selfdebias_rescale_with_deltas(
    words: &[String],
    p_plain: &[f64],
    p_biased: &[f64],
    cfg: &SelfDebiasConfig,
) -> Result<(Vec<f64>, Vec<DeltaRecord>), SelfDebiasError> {
    if words.len() != p_plain.len() {
        return Err(SelfDebiasError::LabelMismatch {
            words: words.len(),
            len: p_plain.len(),
        });
    }
    let out = selfdebias_rescale(p_plain, p_biased, cfg)?;
    let deltas = words
        .iter()
        .zip(p_plain.iter().zip(p_biased))
        .map(|(w, (&p, &b))| DeltaRecord {
            word: w.clone(),
            p_plain: p,
            p_biased: b,
            delta: p - b,
            scale: scale_factor(p - b, cfg.lambda_decay),
        })
        .collect();
    Ok((out, deltas))
}

/// Fills `{x}` and `{y}` in the template by name.
pub fn build_debias_prompt(
    x: &str,
    y: &str,
    cfg: &SelfDebiasConfig,
) -> Result<String, SelfDebiasError> {
    cfg.validate()?;
    if x.trim().is_empty() {
        return Err(SelfDebiasError::EmptyInput("sentence"));
    }
    if y.trim().is_empty() {
        return Err(SelfDebiasError::EmptyInput("bias description"));
    }
    // Single pass so a sentence containing "{y}" is not substituted again.
    let mut out = String::with_capacity(cfg.template.len() + x.len() + y.len());
    let mut rest = cfg.template.as_str();
    while let Some(pos) = rest.find('{') {
        out.push_str(&rest[..pos]);
        let tail = &rest[pos..];
        if let Some(after) = tail.strip_prefix("{x}") {
            out.push_str(x);
            rest = after;
        } else if let Some(after) = tail.strip_prefix("{y}") {
            out.push_str(y);
            rest = after;
        } else {
            out.push('{');
            rest = &tail[1..];
        }
    }
    out.push_str(rest);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(lambda: f64) -> SelfDebiasConfig {
        SelfDebiasConfig {
            lambda_decay: lambda,
            ..Default::default()
        }
    }

    #[test]
    fn equal_inputs_are_identity() {
        let p = [0.1, 0.6, 0.3];
        assert_eq!(selfdebias_rescale(&p, &p, &cfg(50.0)).unwrap(), p.to_vec());
    }

    #[test]
    fn hand_evaluated_mass() {
        let masses = scaled_masses(&[0.4, 0.6], &[0.6, 0.4], &cfg(50.0)).unwrap();
        assert!((masses[0] - 1.815997190499394e-05).abs() < 1e-15);
        assert_eq!(masses[1], 0.6);
    }

    #[test]
    fn deltas_are_recorded() {
        let words = vec!["a".to_string(), "b".to_string()];
        let (_, deltas) =
            selfdebias_rescale_with_deltas(&words, &[0.4, 0.6], &[0.6, 0.4], &cfg(50.0)).unwrap();
        assert_eq!(deltas[1].scale, 1.0);
        assert!((deltas[0].delta - (0.4 - 0.6)).abs() < 1e-12);
        assert!(deltas[0].scale < 1.0);
        assert!(
            selfdebias_rescale_with_deltas(&words[..1], &[0.4, 0.6], &[0.6, 0.4], &cfg(50.0))
                .is_err()
        );
    }

    #[test]
    fn config_and_input_errors() {
        assert_eq!(
            SelfDebiasConfig::new(0.0, DEFAULT_TEMPLATE),
            Err(SelfDebiasError::BadLambda(0.0))
        );
        assert_eq!(
            SelfDebiasConfig::new(1.0, "only {x}"),
            Err(SelfDebiasError::MissingSlot("y"))
        );
        assert!(matches!(
            selfdebias_rescale(&[0.5, 0.5], &[1.0], &cfg(1.0)),
            Err(SelfDebiasError::Distribution(
                DistributionError::LengthMismatch { .. }
            ))
        ));
        assert!(selfdebias_rescale(&[0.5, 0.6], &[0.5, 0.5], &cfg(1.0)).is_err());
    }

    #[test]
    fn default_prompt() {
        let p =
            build_debias_prompt("she is a nurse", "gender", &SelfDebiasConfig::default()).unwrap();
        assert_eq!(p, "The following text discriminates against people because of gender; sentence she is a nurse");
    }

    #[test]
    fn slots_fill_by_name() {
        let c = SelfDebiasConfig::new(1.0, "[{x}] is biased by {y} ({x})").unwrap();
        assert_eq!(
            build_debias_prompt("s {y}", "race", &c).unwrap(),
            "[s {y}] is biased by race (s {y})"
        );
        assert_eq!(
            build_debias_prompt("", "race", &c),
            Err(SelfDebiasError::EmptyInput("sentence"))
        );
    }

    fn distribution(len: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.001f64..1.0, len).prop_map(|v| prob::normalize(&v))
    }

    proptest! {
        #[test]
        fn output_is_distribution_and_ratios_hold(
            (p, b) in (2usize..10).prop_flat_map(|n| (distribution(n), distribution(n))),
            lambda in 0.1f64..200.0,
        ) {
            let out = selfdebias_rescale(&p, &b, &cfg(lambda)).unwrap();
            prop_assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(out.iter().all(|v| *v >= 0.0));
            let kept: Vec<usize> = (0..p.len()).filter(|&i| p[i] >= b[i]).collect();
            for w in kept.windows(2) {
                let (i, j) = (w[0], w[1]);
                prop_assert!((out[i] / out[j] - p[i] / p[j]).abs() <= 1e-9 * (p[i] / p[j]).max(1.0));
            }
        }

        #[test]
        fn stronger_amplification_is_damped_more(pa in 0.05f64..0.3, d1 in 0.01f64..0.2, d2 in 0.01f64..0.2) {
            prop_assume!((d1 - d2).abs() > 1e-6);
            // Two words with equal plain mass; the second rises more under the biased prompt.
            let (small, large) = if d1 < d2 { (d1, d2) } else { (d2, d1) };
            let rest = 1.0 - 2.0 * pa;
            let plain = [pa, pa, rest];
            let biased_rest = rest - small - large;
            prop_assume!(biased_rest >= 0.0);
            let biased = [pa + small, pa + large, biased_rest];
            let out = selfdebias_rescale(&plain, &biased, &cfg(10.0)).unwrap();
            prop_assert!(out[1] < out[0]);
        }
    }
}
