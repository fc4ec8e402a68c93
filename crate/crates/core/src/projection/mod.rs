//! Iterative nullspace projection (INLP) and logit blending.
//!
//! Each round fits a multinomial logistic classifier that predicts the
//! protected class from the current (already projected) vectors, then
//! removes the row-space of its weights. The returned projector `P` is the
//! orthogonal projector onto the complement of the union of all removed
//! row-spaces, so it is symmetric and idempotent by construction.

mod classifier;

use std::collections::BTreeSet;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use classifier::{
    fit_softmax, round_rng, LinearClassifier, DEFAULT_ITERATIONS, DEFAULT_LEARNING_RATE,
};

use crate::corpus_io::{read_text, write_text, AttributeSpec, EmbeddingDump, LoadError};
use crate::prob::{self, DistributionError};

/// Singular values at or below this fraction of the largest are treated as zero.
pub const RANK_TOLERANCE: f64 = 1e-10;
/// Tolerance for the idempotence and symmetry checks on a projector.
pub const PROJECTOR_TOLERANCE: f64 = 1e-6;
pub const DEFAULT_ALPHA: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProjectionError {
    #[error("need at least 2 classes, found {0}")]
    TooFewClasses(usize),
    #[error("class {label:?} has {count} samples, need at least 2")]
    TooFewSamples { label: String, count: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("{rounds} rounds x ({classes} - 1) directions would remove all {dim} dimensions")]
    NothingLeft {
        rounds: usize,
        classes: usize,
        dim: usize,
    },
    #[error("rounds must be at least 1")]
    ZeroRounds,
    #[error("degenerate training data: all vectors are identical")]
    Degenerate,
    #[error("vector {0} has non-finite components")]
    NonFinite(usize),
    #[error("invalid projection model: {0}")]
    InvalidModel(String),
    #[error("alpha must lie in [0, 1], got {0}")]
    BadAlpha(f64),
    #[error("vocabulary is empty")]
    EmptyVocab,
    #[error(transparent)]
    Distribution(#[from] DistributionError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectionConfig {
    pub rounds: usize,
    pub seed: u64,
    pub iterations: usize,
    pub learning_rate: f64,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        ProjectionConfig {
            rounds: 1,
            seed: 0,
            iterations: DEFAULT_ITERATIONS,
            learning_rate: DEFAULT_LEARNING_RATE,
        }
    }
}

/// Trained projector plus the per-round audit trail.
///
/// `classifier_weights[r]` holds the centered weight rows of round `r`
/// expressed in input coordinates; every row is annihilated by `projector`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectionModel {
    pub dim: usize,
    pub rounds: usize,
    pub labels: Vec<String>,
    pub classifier_accuracies: Vec<f64>,
    pub classifier_weights: Vec<Vec<Vec<f64>>>,
    /// Row-major `dim × dim`.
    pub projector: Vec<Vec<f64>>,
    pub config: ProjectionConfig,
}

impl ProjectionModel {
    pub fn projector_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim, self.dim, |i, j| self.projector[i][j])
    }

    pub fn project(&self, v: &[f64]) -> Result<Vec<f64>, ProjectionError> {
        self.check_dim(v.len())?;
        Ok(self.projector.iter().map(|row| prob::dot(row, v)).collect())
    }

    fn check_dim(&self, found: usize) -> Result<(), ProjectionError> {
        if found != self.dim {
            return Err(ProjectionError::DimensionMismatch {
                expected: self.dim,
                found,
            });
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ProjectionError> {
        let bad = |m: String| Err(ProjectionError::InvalidModel(m));
        if self.dim == 0 {
            return bad("dim must be positive".into());
        }
        if self.projector.len() != self.dim || self.projector.iter().any(|r| r.len() != self.dim) {
            return bad(format!("projector must be {0} x {0}", self.dim));
        }
        if self.projector.iter().flatten().any(|v| !v.is_finite()) {
            return bad("projector has non-finite entries".into());
        }
        if self.classifier_accuracies.len() != self.rounds
            || self.classifier_weights.len() != self.rounds
        {
            return bad(format!("expected {} per-round entries", self.rounds));
        }
        if self
            .classifier_weights
            .iter()
            .flatten()
            .any(|row| row.len() != self.dim)
        {
            return bad("classifier weight rows must have length dim".into());
        }
        let p = self.projector_matrix();
        let asym = (&p - p.transpose()).norm();
        if asym > PROJECTOR_TOLERANCE {
            return bad(format!(
                "projector is not symmetric (|P - P^T|_F = {asym:e})"
            ));
        }
        let drift = (&p * &p - &p).norm();
        if drift > PROJECTOR_TOLERANCE {
            return bad(format!(
                "projector is not idempotent (|P^2 - P|_F = {drift:e})"
            ));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }
}

pub fn load_projection_model(path: impl AsRef<Path>) -> Result<ProjectionModel, LoadError> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let model: ProjectionModel = serde_json::from_str(&text).map_err(|e| {
        LoadError::schema(
            path,
            e.line().max(1),
            format!("malformed projection model: {e}"),
        )
    })?;
    model
        .validate()
        .map_err(|e| LoadError::schema(path, 1, e))?;
    Ok(model)
}

pub fn save_projection_model(
    model: &ProjectionModel,
    path: impl AsRef<Path>,
) -> Result<(), LoadError> {
    write_text(path.as_ref(), &model.to_json())
}

/// Collects `(vector, class label)` pairs for every class word present in the
/// dump. Returns the pairs and the class words that had no vector.
pub fn labeled_from_spec(
    dump: &EmbeddingDump,
    spec: &AttributeSpec,
) -> (Vec<(Vec<f64>, String)>, Vec<String>) {
    let mut labeled = Vec::new();
    let mut missing = Vec::new();
    for class in &spec.classes {
        for word in &class.words {
            match dump.get(word) {
                Some(v) => labeled.push((v.to_vec(), class.label.clone())),
                None => missing.push(word.clone()),
            }
        }
    }
    (labeled, missing)
}

fn check_training_data(
    labeled: &[(Vec<f64>, String)],
    rounds: usize,
) -> Result<(usize, Vec<String>), ProjectionError> {
    if rounds == 0 {
        return Err(ProjectionError::ZeroRounds);
    }
    let labels: Vec<String> = labeled
        .iter()
        .map(|(_, l)| l.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if labels.len() < 2 {
        return Err(ProjectionError::TooFewClasses(labels.len()));
    }
    for label in &labels {
        let count = labeled.iter().filter(|(_, l)| l == label).count();
        if count < 2 {
            return Err(ProjectionError::TooFewSamples {
                label: label.clone(),
                count,
            });
        }
    }
    let dim = labeled[0].0.len();
    for (i, (v, _)) in labeled.iter().enumerate() {
        if v.len() != dim {
            return Err(ProjectionError::DimensionMismatch {
                expected: dim,
                found: v.len(),
            });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(ProjectionError::NonFinite(i));
        }
    }
    if rounds * (labels.len() - 1) >= dim {
        return Err(ProjectionError::NothingLeft {
            rounds,
            classes: labels.len(),
            dim,
        });
    }
    let first = &labeled[0].0;
    if labeled.iter().all(|(v, _)| v == first) {
        return Err(ProjectionError::Degenerate);
    }
    Ok((dim, labels))
}

/// Orthonormal basis (as rows) of the row-space of `m`.
fn row_space_basis(m: &DMatrix<f64>) -> DMatrix<f64> {
    if m.is_empty() {
        return DMatrix::zeros(0, m.ncols());
    }
    let svd = m.clone().svd(false, true);
    let v_t = svd.v_t.expect("v_t was requested");
    let cutoff = RANK_TOLERANCE * svd.singular_values.max();
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > cutoff)
        .collect();
    DMatrix::from_fn(keep.len(), m.ncols(), |r, c| v_t[(keep[r], c)])
}

/// Orthogonal projector onto the complement of the row-space of `removed`.
pub fn nullspace_projector(removed: &DMatrix<f64>) -> DMatrix<f64> {
    let basis = row_space_basis(removed);
    let dim = removed.ncols();
    DMatrix::identity(dim, dim) - basis.transpose() * basis
}

pub fn train_projection(
    labeled: &[(Vec<f64>, String)],
    config: &ProjectionConfig,
) -> Result<ProjectionModel, ProjectionError> {
    let (dim, labels) = check_training_data(labeled, config.rounds)?;
    let classes = labels.len();
    let n = labeled.len();
    let targets: Vec<usize> = labeled
        .iter()
        .map(|(_, l)| labels.binary_search(l).expect("label collected above"))
        .collect();
    let original = DMatrix::from_fn(n, dim, |i, j| labeled[i].0[j]);
    // Gradient descent runs on inputs rescaled to unit RMS norm; a global
    // scale leaves every weight direction unchanged.
    let rms = (original.norm_squared() / n as f64).sqrt();
    let scale = if rms > 0.0 { 1.0 / rms } else { 1.0 };

    let mut projector = DMatrix::<f64>::identity(dim, dim);
    let mut removed = DMatrix::<f64>::zeros(0, dim);
    let mut accuracies = Vec::with_capacity(config.rounds);
    let mut weights = Vec::with_capacity(config.rounds);

    for round in 0..config.rounds {
        let current = &original * &projector * scale;
        let mut rng = round_rng(config.seed, round);
        let fitted = fit_softmax(
            &current,
            &targets,
            classes,
            config.iterations,
            config.learning_rate,
            &mut rng,
        );
        accuracies.push(fitted.accuracy(&current, &targets));

        // Softmax scores are shift-invariant across classes, so centering
        // the rows leaves predictions intact and drops one redundant
        // direction. Restricting to the current range keeps rounds
        // orthogonal to what was already removed.
        let mean = fitted.weights.row_mean();
        let mut rows = fitted.weights.clone();
        for mut row in rows.row_iter_mut() {
            row -= &mean;
        }
        let effective = rows * &projector * scale;
        weights.push(
            effective
                .row_iter()
                .map(|r| r.iter().copied().collect::<Vec<_>>())
                .collect::<Vec<_>>(),
        );
        let at = removed.nrows();
        removed = removed.insert_rows(at, effective.nrows(), 0.0);
        let start = removed.nrows() - effective.nrows();
        removed
            .rows_mut(start, effective.nrows())
            .copy_from(&effective);
        projector = nullspace_projector(&removed);
    }

    let model = ProjectionModel {
        dim,
        rounds: config.rounds,
        labels,
        classifier_accuracies: accuracies,
        classifier_weights: weights,
        projector: projector
            .row_iter()
            .map(|r| r.iter().copied().collect())
            .collect(),
        config: *config,
    };
    model.validate()?;
    Ok(model)
}

/// Softmax over `e(w)ᵀ · P · f` for every vocabulary entry, in dump order.
pub fn debiased_next_token_distribution(
    context: &[f64],
    vocab: &EmbeddingDump,
    model: &ProjectionModel,
) -> Result<Vec<f64>, ProjectionError> {
    if vocab.is_empty() {
        return Err(ProjectionError::EmptyVocab);
    }
    model.check_dim(vocab.dim())?;
    let projected = model.project(context)?;
    let logits: Vec<f64> = vocab.vectors().map(|e| prob::dot(e, &projected)).collect();
    Ok(prob::softmax(&logits))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlendConfig {
    pub alpha: f64,
}

impl Default for BlendConfig {
    fn default() -> Self {
        BlendConfig {
            alpha: DEFAULT_ALPHA,
        }
    }
}

impl BlendConfig {
    pub fn new(alpha: f64) -> Result<Self, ProjectionError> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(ProjectionError::BadAlpha(alpha));
        }
        Ok(BlendConfig { alpha })
    }
}

/// `alpha · debiased + (1 − alpha) · original`, entrywise.
pub fn blend_distributions(
    debiased: &[f64],
    original: &[f64],
    cfg: BlendConfig,
) -> Result<Vec<f64>, ProjectionError> {
    let cfg = BlendConfig::new(cfg.alpha)?;
    prob::check_same_len(debiased, original)?;
    prob::check_distribution(debiased)?;
    prob::check_distribution(original)?;
    Ok(debiased
        .iter()
        .zip(original)
        .map(|(d, o)| cfg.alpha * d + (1.0 - cfg.alpha) * o)
        .collect())
}

/// Convenience for callers holding a single vector.
pub fn project_vector(projector: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    (projector * DVector::from_column_slice(v))
        .iter()
        .copied()
        .collect()
}
