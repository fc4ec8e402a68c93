//! Embedding-space bias metrics.
//!
//! WEAT compares how strongly two target word sets X and Y associate with
//! two attribute classes M and F:
//!
//! ```text
//! a(w, M, F)    = mean_m cos(w, m) - mean_f cos(w, f)
//! s(X, Y, M, F) = sum_x a(x, M, F) - sum_y a(y, M, F)
//! effect size   = (mean_x a(x) - mean_y a(y)) / std_{w in X∪Y} a(w)
//! ```
//!
//! SEAT is the same computation over sentence-embedding dumps. The Hellinger
//! metric compares next-token distributions obtained by scoring every
//! vocabulary embedding against a per-class context vector.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus_io::{AttributeSpec, EmbeddingDump, WordSet};
use crate::prob::{self, DistributionError};
use crate::stats::{self, PermutationTestResult, StatsError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AssociationError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("zero vector has no direction; cosine is undefined")]
    ZeroVector,
    #[error("attribute class {0:?} is empty")]
    EmptyClass(String),
    #[error("attribute spec {0:?} has no target sets")]
    MissingTargets(String),
    #[error("words missing from the embedding dump: {}", .0.join(", "))]
    MissingWords(Vec<String>),
    #[error("target sets must have equal size after resolution: |X| = {x}, |Y| = {y}")]
    UnequalTargets { x: usize, y: usize },
    #[error("vocabulary is empty")]
    EmptyVocab,
    #[error("no context vector for class {0:?}")]
    MissingContext(String),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Distribution(#[from] DistributionError),
}

pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64, AssociationError> {
    if a.len() != b.len() {
        return Err(AssociationError::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    let (na, nb) = (prob::norm(a), prob::norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(AssociationError::ZeroVector);
    }
    Ok(prob::dot(a, b) / (na * nb))
}

fn mean_cosine<V: AsRef<[f64]>>(w: &[f64], class: &[V]) -> Result<f64, AssociationError> {
    let mut total = 0.0;
    for v in class {
        total += cosine(w, v.as_ref())?;
    }
    Ok(total / class.len() as f64)
}

/// Mean cosine similarity of `word_vec` to `class_m` minus its mean cosine
/// similarity to `class_f`.
pub fn association<V: AsRef<[f64]>>(
    word_vec: &[f64],
    class_m: &[V],
    class_f: &[V],
) -> Result<f64, AssociationError> {
    if class_m.is_empty() {
        return Err(AssociationError::EmptyClass("M".into()));
    }
    if class_f.is_empty() {
        return Err(AssociationError::EmptyClass("F".into()));
    }
    Ok(mean_cosine(word_vec, class_m)? - mean_cosine(word_vec, class_f)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeatOptions {
    pub seed: u64,
    pub max_permutations: u64,
    /// Drop unresolvable words instead of failing. Target words are dropped
    /// pairwise (index i of X with index i of Y) to keep |X| == |Y|.
    pub allow_missing: bool,
}

impl Default for WeatOptions {
    fn default() -> Self {
        WeatOptions {
            seed: 0,
            max_permutations: stats::DEFAULT_MAX_PERMUTATIONS,
            allow_missing: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeatResult {
    pub spec_name: String,
    pub class_pair: (String, String),
    pub target_pair: (String, String),
    pub statistic_s: f64,
    /// `None` when the pooled standard deviation is zero.
    pub effect_size: Option<f64>,
    pub p_value: PermutationTestResult,
    /// Target words per side after resolution.
    pub n_targets: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dropped_words: Vec<String>,
}

struct Resolved<'a> {
    vectors: Vec<&'a [f64]>,
}

fn resolve<'a>(
    dump: &'a EmbeddingDump,
    words: &[String],
    missing: &mut Vec<String>,
) -> Resolved<'a> {
    let mut vectors = Vec::with_capacity(words.len());
    for w in words {
        match dump.get(w) {
            Some(v) => vectors.push(v),
            None => missing.push(w.clone()),
        }
    }
    Resolved { vectors }
}

/// Runs WEAT for every binary view of `spec` (the attribute spec itself for two
/// classes, one-vs-rest otherwise).
pub fn weat(
    dump: &EmbeddingDump,
    spec: &AttributeSpec,
    opts: &WeatOptions,
) -> Result<Vec<WeatResult>, AssociationError> {
    let targets = spec
        .targets
        .as_ref()
        .ok_or_else(|| AssociationError::MissingTargets(spec.name.clone()))?;
    if targets.x.words.len() != targets.y.words.len() {
        return Err(AssociationError::UnequalTargets {
            x: targets.x.words.len(),
            y: targets.y.words.len(),
        });
    }

    // Pairwise target resolution, shared by every binary view.
    let mut dropped = Vec::new();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (wx, wy) in targets.x.words.iter().zip(&targets.y.words) {
        match (dump.get(wx), dump.get(wy)) {
            (Some(vx), Some(vy)) => {
                xs.push(vx);
                ys.push(vy);
            }
            (vx, vy) => {
                if vx.is_none() {
                    dropped.push(wx.clone());
                }
                if vy.is_none() {
                    dropped.push(wy.clone());
                }
            }
        }
    }

    let views = spec.binary_views();
    let mut class_missing = Vec::new();
    let resolved: Vec<_> = views
        .iter()
        .map(|(m, f)| {
            (
                resolve(dump, &m.words, &mut class_missing),
                resolve(dump, &f.words, &mut class_missing),
            )
        })
        .collect();
    class_missing.sort();
    class_missing.dedup();

    if !opts.allow_missing && !(dropped.is_empty() && class_missing.is_empty()) {
        let mut all = dropped.clone();
        all.extend(class_missing);
        return Err(AssociationError::MissingWords(all));
    }
    dropped.extend(class_missing);
    if xs.is_empty() {
        return Err(AssociationError::Stats(StatsError::Empty));
    }

    views
        .iter()
        .zip(resolved)
        .map(|((m, f), (rm, rf))| {
            weat_vectors(&xs, &ys, &rm.vectors, &rf.vectors, m, f, opts).map(|(s, es, p)| {
                WeatResult {
                    spec_name: spec.name.clone(),
                    class_pair: (m.label.clone(), f.label.clone()),
                    target_pair: (targets.x.label.clone(), targets.y.label.clone()),
                    statistic_s: s,
                    effect_size: es,
                    p_value: p,
                    n_targets: xs.len(),
                    dropped_words: dropped.clone(),
                }
            })
        })
        .collect()
}

type WeatCore = (f64, Option<f64>, PermutationTestResult);

fn weat_vectors(
    xs: &[&[f64]],
    ys: &[&[f64]],
    m: &[&[f64]],
    f: &[&[f64]],
    m_set: &WordSet,
    f_set: &WordSet,
    opts: &WeatOptions,
) -> Result<WeatCore, AssociationError> {
    if m.is_empty() {
        return Err(AssociationError::EmptyClass(m_set.label.clone()));
    }
    if f.is_empty() {
        return Err(AssociationError::EmptyClass(f_set.label.clone()));
    }
    let ax = xs
        .iter()
        .map(|w| association(w, m, f))
        .collect::<Result<Vec<_>, _>>()?;
    let ay = ys
        .iter()
        .map(|w| association(w, m, f))
        .collect::<Result<Vec<_>, _>>()?;
    let s = stats::sum_difference(&ax, &ay);
    let es = match stats::effect_size(&ax, &ay) {
        Ok(v) => Some(v),
        Err(StatsError::DegenerateStdDev) => None,
        Err(e) => return Err(e.into()),
    };
    let p = stats::permutation_test(&ax, &ay, opts.max_permutations, opts.seed)?;
    Ok((s, es, p))
}

/// `(1/√2)·‖√P − √Q‖₂`. Both inputs must be distributions within
/// [`prob::SUM_TOLERANCE`]; they are renormalized before use.
pub fn hellinger(p: &[f64], q: &[f64]) -> Result<f64, AssociationError> {
    prob::check_same_len(p, q)?;
    prob::check_distribution(p)?;
    prob::check_distribution(q)?;
    let (p, q) = (prob::normalize(p), prob::normalize(q));
    let sq: f64 = p
        .iter()
        .zip(&q)
        .map(|(a, b)| (a.sqrt() - b.sqrt()).powi(2))
        .sum();
    Ok((sq.sqrt() / std::f64::consts::SQRT_2).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HellingerResult {
    pub class_pair: (String, String),
    pub distance: f64,
    pub vocab_size: usize,
}

fn context_distribution(
    context: &[f64],
    vocab: &EmbeddingDump,
) -> Result<Vec<f64>, AssociationError> {
    if context.len() != vocab.dim() {
        return Err(AssociationError::DimensionMismatch {
            expected: vocab.dim(),
            found: context.len(),
        });
    }
    let logits: Vec<f64> = vocab.vectors().map(|e| prob::dot(context, e)).collect();
    Ok(prob::softmax(&logits))
}

/// Softmax over `context · e(w)` for every vocabulary entry, once per class
/// context.
pub fn class_conditioned_distributions(
    context_m: &[f64],
    context_f: &[f64],
    vocab: &EmbeddingDump,
) -> Result<(Vec<f64>, Vec<f64>), AssociationError> {
    if vocab.is_empty() {
        return Err(AssociationError::EmptyVocab);
    }
    Ok((
        context_distribution(context_m, vocab)?,
        context_distribution(context_f, vocab)?,
    ))
}

/// Hellinger distance between the next-token distributions induced by the
/// context vectors of two classes. `contexts` is keyed by class label.
pub fn hellinger_bias(
    contexts: &EmbeddingDump,
    vocab: &EmbeddingDump,
    class_m: &str,
    class_f: &str,
) -> Result<HellingerResult, AssociationError> {
    let cm = contexts
        .get(class_m)
        .ok_or_else(|| AssociationError::MissingContext(class_m.into()))?;
    let cf = contexts
        .get(class_f)
        .ok_or_else(|| AssociationError::MissingContext(class_f.into()))?;
    let (p, q) = class_conditioned_distributions(cm, cf, vocab)?;
    Ok(HellingerResult {
        class_pair: (class_m.into(), class_f.into()),
        distance: hellinger(&p, &q)?,
        vocab_size: vocab.len(),
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::corpus_io::{
        ArchitectureKind, BiasCategory, EmbeddingEntry, ModelManifest, TargetSets,
    };
    use proptest::prelude::*;

    pub(crate) fn dump(dim: usize, entries: &[(&str, Vec<f64>)]) -> EmbeddingDump {
        EmbeddingDump::new(
            ModelManifest {
                model_id: "toy".into(),
                architecture_kind: ArchitectureKind::Masked,
                embedding_dim: dim,
                layer: "input_embeddings".into(),
                tokenizer_id: "toy".into(),
                created_at: "2024-01-01T00:00:00Z".parse().unwrap(),
            },
            entries
                .iter()
                .map(|(k, v)| EmbeddingEntry {
                    key: k.to_string(),
                    vector: v.clone(),
                })
                .collect(),
        )
        .unwrap()
    }

    fn set(label: &str, words: &[&str]) -> WordSet {
        WordSet {
            label: label.into(),
            words: words.iter().map(|w| w.to_string()).collect(),
        }
    }

    fn toy_spec() -> AttributeSpec {
        AttributeSpec {
            name: "toy".into(),
            category: BiasCategory::Gender,
            classes: vec![set("m", &["m"]), set("f", &["f"])],
            targets: Some(TargetSets {
                x: set("x", &["x"]),
                y: set("y", &["y"]),
            }),
        }
    }

    #[test]
    fn association_examples() {
        let m = [vec![1.0, 0.0]];
        let f = [vec![0.0, 1.0]];
        assert_eq!(association(&[1.0, 0.0], &m, &f).unwrap(), 1.0);
        assert!(association(&[1.0, 1.0], &m, &f).unwrap().abs() < 1e-15);
        let a = association(&[0.3, 0.7], &m, &f).unwrap();
        let b = association(&[3.0, 7.0], &m, &f).unwrap();
        assert!((a - b).abs() < 1e-15);
        assert!(matches!(
            association(&[1.0, 0.0, 0.0], &m, &f),
            Err(AssociationError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn weat_orthonormal_singletons() {
        let d = dump(
            2,
            &[
                ("m", vec![1.0, 0.0]),
                ("f", vec![0.0, 1.0]),
                ("x", vec![1.0, 0.0]),
                ("y", vec![0.0, 1.0]),
            ],
        );
        let r = &weat(&d, &toy_spec(), &WeatOptions::default()).unwrap()[0];
        assert_eq!(r.statistic_s, 2.0);
        assert_eq!(r.effect_size, Some(2.0));
        assert_eq!(r.p_value.p_value, 0.5);
        assert!(r.p_value.exact);

        let mut swapped = toy_spec();
        let t = swapped.targets.as_mut().unwrap();
        std::mem::swap(&mut t.x, &mut t.y);
        let s = &weat(&d, &swapped, &WeatOptions::default()).unwrap()[0];
        assert_eq!(s.statistic_s, -2.0);
        assert_eq!(s.effect_size, Some(-2.0));
    }

    #[test]
    fn weat_missing_words() {
        let d = dump(
            2,
            &[
                ("m", vec![1.0, 0.0]),
                ("f", vec![0.0, 1.0]),
                ("x", vec![1.0, 0.0]),
            ],
        );
        let err = weat(&d, &toy_spec(), &WeatOptions::default()).unwrap_err();
        assert_eq!(err, AssociationError::MissingWords(vec!["y".into()]));

        // With --allow-missing the pair (x2, zzz) is dropped as a unit.
        let d = dump(
            2,
            &[
                ("m", vec![1.0, 0.0]),
                ("f", vec![0.0, 1.0]),
                ("x", vec![1.0, 0.0]),
                ("y", vec![0.0, 1.0]),
            ],
        );
        let opts = WeatOptions {
            allow_missing: true,
            ..Default::default()
        };
        let spec = AttributeSpec {
            targets: Some(TargetSets {
                x: set("x", &["x", "x2"]),
                y: set("y", &["y", "zzz"]),
            }),
            ..toy_spec()
        };
        let r = &weat(&d, &spec, &opts).unwrap()[0];
        assert_eq!(r.n_targets, 1);
        assert_eq!(r.dropped_words, ["x2", "zzz"]);
    }

    #[test]
    fn weat_requires_targets() {
        let mut spec = toy_spec();
        spec.targets = None;
        let d = dump(2, &[("m", vec![1.0, 0.0])]);
        assert!(matches!(
            weat(&d, &spec, &WeatOptions::default()),
            Err(AssociationError::MissingTargets(_))
        ));
    }

    #[test]
    fn weat_one_vs_rest() {
        let mut spec = toy_spec();
        spec.classes.push(set("n", &["n"]));
        let d = dump(
            2,
            &[
                ("m", vec![1.0, 0.0]),
                ("f", vec![0.0, 1.0]),
                ("n", vec![1.0, 1.0]),
                ("x", vec![1.0, 0.0]),
                ("y", vec![0.0, 1.0]),
            ],
        );
        let runs = weat(&d, &spec, &WeatOptions::default()).unwrap();
        assert_eq!(runs.len(), 3);
        assert_eq!(runs[2].class_pair, ("n".to_string(), "non-n".to_string()));
    }

    #[test]
    fn hellinger_examples() {
        assert_eq!(hellinger(&[0.2, 0.8], &[0.2, 0.8]).unwrap(), 0.0);
        assert!((hellinger(&[1.0, 0.0], &[0.0, 1.0]).unwrap() - 1.0).abs() < 1e-12);
        // Independent evaluation: 0.3249196962329063
        assert!(
            (hellinger(&[0.5, 0.5], &[0.9, 0.1]).unwrap() - 0.324_919_696_232_906_3).abs() < 1e-12
        );
        assert!(hellinger(&[0.5, 0.5], &[1.0]).is_err());
        assert!(hellinger(&[0.5, 0.6], &[0.5, 0.5]).is_err());
        assert!(hellinger(&[1.5, -0.5], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn class_conditioned_softmax() {
        let vocab = dump(2, &[("a", vec![1.0, 0.0]), ("b", vec![0.0, 1.0])]);
        let (p, q) = class_conditioned_distributions(&[1.0, 0.0], &[1.0, 0.0], &vocab).unwrap();
        assert!((p[0] - 0.731_058_578_630_004_9).abs() < 1e-12);
        assert!((p[1] - 0.268_941_421_369_995_1).abs() < 1e-12);
        assert_eq!(hellinger(&p, &q).unwrap(), 0.0);
        assert!(class_conditioned_distributions(&[1.0], &[1.0, 0.0], &vocab).is_err());
    }

    #[test]
    fn hellinger_bias_uses_class_contexts() {
        let vocab = dump(2, &[("a", vec![1.0, 0.0]), ("b", vec![0.0, 1.0])]);
        let contexts = dump(2, &[("male", vec![2.0, 0.0]), ("female", vec![0.0, 2.0])]);
        let r = hellinger_bias(&contexts, &vocab, "male", "female").unwrap();
        assert_eq!(r.vocab_size, 2);
        assert!(r.distance > 0.0 && r.distance < 1.0);
        assert!(matches!(
            hellinger_bias(&contexts, &vocab, "male", "x"),
            Err(AssociationError::MissingContext(_))
        ));
    }

    fn distribution(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..1.0, n).prop_filter_map("zero mass", |v| {
            let s: f64 = v.iter().sum();
            (s > 1e-3).then(|| v.iter().map(|x| x / s).collect())
        })
    }

    proptest! {
        #[test]
        fn association_antisymmetric(
            w in prop::collection::vec(0.1f64..1.0, 3),
            m in prop::collection::vec(prop::collection::vec(0.1f64..1.0, 3), 1..4),
            f in prop::collection::vec(prop::collection::vec(0.1f64..1.0, 3), 1..4),
        ) {
            let a = association(&w, &m, &f).unwrap();
            let b = association(&w, &f, &m).unwrap();
            prop_assert!((a + b).abs() < 1e-12);
        }

        #[test]
        fn hellinger_metric_axioms(
            (p, q, r) in (2usize..8).prop_flat_map(|n| (distribution(n), distribution(n), distribution(n)))
        ) {
            let pq = hellinger(&p, &q).unwrap();
            prop_assert!((0.0..=1.0).contains(&pq));
            prop_assert!((pq - hellinger(&q, &p).unwrap()).abs() < 1e-15);
            prop_assert!(pq <= hellinger(&p, &r).unwrap() + hellinger(&r, &q).unwrap() + 1e-12);
        }
    }
}
