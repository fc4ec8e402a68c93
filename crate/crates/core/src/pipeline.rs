//! Batch evaluation over a directory of dumps.
//!
//! Expected file names inside the dumps directory (only those needed by the
//! requested metrics must exist):
//!
//! | metric      | files                                   |
//! |-------------|-----------------------------------------|
//! | `weat`      | `embeddings.jsonl` + attribute spec     |
//! | `seat`      | `sentence_embeddings.jsonl` + spec      |
//! | `hellinger` | `contexts.jsonl`, `vocab.jsonl` + spec  |
//! | `stereoset` | `stereoset.jsonl`                       |
//! | `crows`     | `crows.jsonl`                           |
//! | `honest`    | `completions.jsonl` + hurt lexicon      |

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::association::{self, WeatOptions};
use crate::corpus_io::{
    load_attribute_spec, load_candidate_sets, load_completion_dump, load_embedding_dump,
    load_hurt_lexicon, AttributeSpec, BiasCategory, EmbeddingDump, ModelManifest, TokenProbDump,
    TokenProbRecord,
};
use crate::likelihood;
use crate::prob;
use crate::projection::{self, BlendConfig, ProjectionModel};
use crate::report::{BiasReport, Metric, MetricResult, RunRecord};
use crate::selfdebias::{self, DeltaRecord, SelfDebiasConfig};
use crate::Error;

pub const EMBEDDINGS_FILE: &str = "embeddings.jsonl";
pub const SENTENCE_EMBEDDINGS_FILE: &str = "sentence_embeddings.jsonl";
pub const CONTEXTS_FILE: &str = "contexts.jsonl";
pub const VOCAB_FILE: &str = "vocab.jsonl";
pub const STEREOSET_FILE: &str = "stereoset.jsonl";
pub const CROWS_FILE: &str = "crows.jsonl";
pub const COMPLETIONS_FILE: &str = "completions.jsonl";

pub const DEFAULT_K: usize = 5;

#[derive(Debug, Clone)]
pub struct EvaluateConfig {
    pub dumps: PathBuf,
    pub spec: Option<PathBuf>,
    pub hurtlex: Option<PathBuf>,
    pub metrics: Vec<Metric>,
    /// `None` evaluates every category present.
    pub category: Option<BiasCategory>,
    pub seed: u64,
    pub max_permutations: u64,
    pub allow_missing: bool,
    pub k: usize,
}

impl EvaluateConfig {
    pub fn new(dumps: impl Into<PathBuf>, metrics: Vec<Metric>) -> Self {
        EvaluateConfig {
            dumps: dumps.into(),
            spec: None,
            hurtlex: None,
            metrics,
            category: None,
            seed: 0,
            max_permutations: crate::stats::DEFAULT_MAX_PERMUTATIONS,
            allow_missing: false,
            k: DEFAULT_K,
        }
    }
}

struct Runner<'a> {
    cfg: &'a EvaluateConfig,
    spec: Option<AttributeSpec>,
    manifest: Option<ModelManifest>,
    runs: Vec<RunRecord>,
    warnings: Vec<String>,
}

fn params<const N: usize>(pairs: [(&str, Value); N]) -> BTreeMap<String, Value> {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

impl Runner<'_> {
    fn path(&self, name: &str) -> PathBuf {
        self.cfg.dumps.join(name)
    }

    fn note_manifest(&mut self, m: &ModelManifest) {
        if self.manifest.is_none() {
            self.manifest = Some(m.clone());
        }
    }

    fn spec(&self, metric: Metric) -> Result<&AttributeSpec, Error> {
        self.spec
            .as_ref()
            .ok_or_else(|| Error::Usage(format!("metric {metric} needs --spec")))
    }

    /// `None` when the requested category excludes this spec.
    fn spec_in_scope(&mut self, metric: Metric) -> Result<Option<AttributeSpec>, Error> {
        let spec = self.spec(metric)?.clone();
        match &self.cfg.category {
            Some(c) if *c != spec.category => {
                self.warnings.push(format!(
                    "{metric}: 0 instances matched category {c} (spec {:?} is {})",
                    spec.name, spec.category
                ));
                Ok(None)
            }
            _ => Ok(Some(spec)),
        }
    }

    fn run_weat(&mut self, metric: Metric) -> Result<(), Error> {
        let Some(spec) = self.spec_in_scope(metric)? else {
            return Ok(());
        };
        let file = if metric == Metric::Seat {
            SENTENCE_EMBEDDINGS_FILE
        } else {
            EMBEDDINGS_FILE
        };
        let dump = load_embedding_dump(self.path(file))?;
        self.note_manifest(dump.manifest());
        let opts = WeatOptions {
            seed: self.cfg.seed,
            max_permutations: self.cfg.max_permutations,
            allow_missing: self.cfg.allow_missing,
        };
        for r in association::weat(&dump, &spec, &opts)? {
            if !r.dropped_words.is_empty() {
                self.warnings.push(format!(
                    "{metric}: dropped words without vectors: {}",
                    r.dropped_words.join(", ")
                ));
            }
            self.runs.push(RunRecord {
                metric,
                category: Some(spec.category.clone()),
                parameters: params([
                    ("spec", json!(spec.name)),
                    ("class_pair", json!([r.class_pair.0, r.class_pair.1])),
                    ("target_pair", json!([r.target_pair.0, r.target_pair.1])),
                    ("max_permutations", json!(opts.max_permutations)),
                    ("allow_missing", json!(opts.allow_missing)),
                    ("test", json!("one-sided, statistic >= observed")),
                    ("std", json!("population, pooled targets")),
                ]),
                seed: Some(opts.seed),
                result: MetricResult::Weat(r),
            });
        }
        Ok(())
    }

    fn run_hellinger(&mut self) -> Result<(), Error> {
        let Some(spec) = self.spec_in_scope(Metric::Hellinger)? else {
            return Ok(());
        };
        let contexts = load_embedding_dump(self.path(CONTEXTS_FILE))?;
        let vocab = load_embedding_dump(self.path(VOCAB_FILE))?;
        self.note_manifest(vocab.manifest());
        let labels: Vec<&str> = spec.classes.iter().map(|c| c.label.as_str()).collect();
        for (i, m) in labels.iter().enumerate() {
            for f in &labels[i + 1..] {
                let r = association::hellinger_bias(&contexts, &vocab, m, f)?;
                self.runs.push(RunRecord {
                    metric: Metric::Hellinger,
                    category: Some(spec.category.clone()),
                    parameters: params([
                        ("spec", json!(spec.name)),
                        ("class_pair", json!([m, f])),
                        ("vocab", json!("full dump key set")),
                    ]),
                    seed: None,
                    result: MetricResult::Hellinger(r),
                });
            }
        }
        Ok(())
    }

    fn unmatched(&mut self, metric: Metric) {
        let c = self
            .cfg
            .category
            .as_ref()
            .map_or("any".to_string(), |c| c.to_string());
        self.warnings
            .push(format!("{metric}: 0 instances matched category {c}"));
    }

    fn run_stereoset(&mut self) -> Result<(), Error> {
        let corpus = load_candidate_sets(self.path(STEREOSET_FILE), self.cfg.category.as_ref())?;
        self.note_manifest(&corpus.manifest);
        if corpus.sets.is_empty() {
            self.unmatched(Metric::Stereoset);
            return Ok(());
        }
        let parameters = params([
            ("candidate_score", json!("mean token logprob")),
            ("ss_ties", json!("half credit")),
            ("lm_ties", json!("strict, ties count as failures")),
        ]);
        let result = match &self.cfg.category {
            Some(_) => MetricResult::StereoSet(likelihood::stereoset_scores(&corpus.sets)?),
            None => {
                MetricResult::StereoSetBreakdown(likelihood::stereoset_breakdown(&corpus.sets)?)
            }
        };
        self.runs.push(RunRecord {
            metric: Metric::Stereoset,
            category: self.cfg.category.clone(),
            parameters,
            seed: None,
            result,
        });
        Ok(())
    }

    fn run_crows(&mut self) -> Result<(), Error> {
        let corpus = load_candidate_sets(self.path(CROWS_FILE), self.cfg.category.as_ref())?;
        self.note_manifest(&corpus.manifest);
        if corpus.sets.is_empty() {
            self.unmatched(Metric::Crows);
            return Ok(());
        }
        let r = likelihood::loglikelihood_preference(&corpus.sets)?;
        self.runs.push(RunRecord {
            metric: Metric::Crows,
            category: self.cfg.category.clone(),
            parameters: params([
                ("candidate_score", json!("sum of scored token logprobs")),
                ("ties", json!("excluded from percentage")),
            ]),
            seed: None,
            result: MetricResult::LogLikelihood(r),
        });
        Ok(())
    }

    fn run_honest(&mut self) -> Result<(), Error> {
        let lex_path = self
            .cfg
            .hurtlex
            .clone()
            .ok_or_else(|| Error::Usage("metric honest needs --hurtlex".into()))?;
        let (lexicon, _) = load_hurt_lexicon(&lex_path)?;
        let dump = load_completion_dump(self.path(COMPLETIONS_FILE))?;
        self.note_manifest(&dump.manifest);
        let records: Vec<_> = dump
            .records
            .into_iter()
            .filter(|r| self.cfg.category.as_ref().is_none_or(|c| *c == r.category))
            .collect();
        if records.is_empty() {
            self.unmatched(Metric::Honest);
            return Ok(());
        }
        let grouped = likelihood::group_completions(&records);
        let r = likelihood::honest_score(&grouped, &lexicon, self.cfg.k)?;
        self.runs.push(RunRecord {
            metric: Metric::Honest,
            category: self.cfg.category.clone(),
            parameters: params([
                ("k", json!(self.cfg.k)),
                ("lexicon_language", json!(lexicon.language())),
                ("lexicon_size", json!(lexicon.len())),
                ("match", json!("lowercase whole token")),
            ]),
            seed: None,
            result: MetricResult::Honest(r),
        });
        Ok(())
    }
}

/// Runs exactly the requested metrics, in the requested order.
pub fn evaluate(cfg: &EvaluateConfig) -> Result<BiasReport, Error> {
    if cfg.metrics.is_empty() {
        return Err(Error::Usage("no metrics requested".into()));
    }
    let spec = cfg.spec.as_deref().map(load_attribute_spec).transpose()?;
    let mut runner = Runner {
        cfg,
        spec,
        manifest: None,
        runs: Vec::new(),
        warnings: Vec::new(),
    };
    let mut seen = Vec::new();
    for &metric in &cfg.metrics {
        if seen.contains(&metric) {
            continue;
        }
        seen.push(metric);
        match metric {
            Metric::Weat | Metric::Seat => runner.run_weat(metric)?,
            Metric::Hellinger => runner.run_hellinger()?,
            Metric::Stereoset => runner.run_stereoset()?,
            Metric::Crows => runner.run_crows()?,
            Metric::Honest => runner.run_honest()?,
        }
    }
    let manifest = match runner.manifest {
        Some(m) => m,
        // Every metric was filtered out before a dump was read; take the
        // identity from whichever dump is present.
        None => first_manifest(&cfg.dumps)?,
    };
    let mut report = BiasReport::new(manifest);
    report.runs = runner.runs;
    report.warnings = runner.warnings;
    Ok(report)
}

fn first_manifest(dir: &Path) -> Result<ModelManifest, Error> {
    for name in [
        EMBEDDINGS_FILE,
        SENTENCE_EMBEDDINGS_FILE,
        VOCAB_FILE,
        CONTEXTS_FILE,
    ] {
        let p = dir.join(name);
        if p.exists() {
            return Ok(load_embedding_dump(p)?.manifest().clone());
        }
    }
    for name in [STEREOSET_FILE, CROWS_FILE] {
        let p = dir.join(name);
        if p.exists() {
            return Ok(load_candidate_sets(p, None)?.manifest);
        }
    }
    let p = dir.join(COMPLETIONS_FILE);
    if p.exists() {
        return Ok(load_completion_dump(p)?.manifest);
    }
    Err(Error::Usage(format!("no dumps found in {}", dir.display())))
}

fn distribution_of(record: &TokenProbRecord) -> Vec<f64> {
    prob::from_logprobs(&record.token_logprobs)
}

fn distribution_record(id: &str, text: &str, tokens: Vec<String>, p: &[f64]) -> TokenProbRecord {
    TokenProbRecord {
        sentence_id: id.to_string(),
        text: text.to_string(),
        tokens,
        token_logprobs: prob::to_logprobs(p),
        masked_positions: None,
    }
}

fn check_vocab(step: &str, record: &TokenProbRecord, vocab: &[String]) -> Result<(), Error> {
    if record.tokens != vocab {
        return Err(Error::Usage(format!(
            "step {step:?}: distribution vocabulary differs from the reference vocabulary"
        )));
    }
    Ok(())
}

/// Debiased next-token distributions for every context in `contexts`, each
/// blended with the matching `original` step when one is given.
///
/// Distribution dumps reuse the token-probability schema: one record per
/// decoding step, `tokens` is the vocabulary and `token_logprobs` the
/// log-distribution over it.
pub fn rescore_dump(
    model: &ProjectionModel,
    contexts: &EmbeddingDump,
    vocab: &EmbeddingDump,
    original: Option<&TokenProbDump>,
    blend: BlendConfig,
) -> Result<TokenProbDump, Error> {
    let words: Vec<String> = vocab.keys().map(str::to_string).collect();
    let by_id: BTreeMap<&str, &TokenProbRecord> = original
        .map(|d| {
            d.records
                .iter()
                .map(|r| (r.sentence_id.as_str(), r))
                .collect()
        })
        .unwrap_or_default();
    let mut records = Vec::with_capacity(contexts.len());
    for entry in contexts.entries() {
        let debiased = projection::debiased_next_token_distribution(&entry.vector, vocab, model)?;
        let (p, text) = match original {
            None => (debiased, entry.key.clone()),
            Some(_) => {
                let orig = by_id.get(entry.key.as_str()).ok_or_else(|| {
                    Error::Usage(format!("no original distribution for step {:?}", entry.key))
                })?;
                check_vocab(&entry.key, orig, &words)?;
                let mixed =
                    projection::blend_distributions(&debiased, &distribution_of(orig), blend)?;
                (mixed, orig.text.clone())
            }
        };
        records.push(distribution_record(&entry.key, &text, words.clone(), &p));
    }
    let manifest = original.map_or_else(|| vocab.manifest().clone(), |d| d.manifest.clone());
    Ok(TokenProbDump { manifest, records })
}

/// Per-step audit trail of a self-debiasing run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDeltas {
    pub step_id: String,
    pub deltas: Vec<DeltaRecord>,
}

/// Rescales every plain step against the biased step with the same id.
pub fn selfdebias_dump(
    plain: &TokenProbDump,
    biased: &TokenProbDump,
    cfg: &SelfDebiasConfig,
) -> Result<(TokenProbDump, Vec<StepDeltas>), Error> {
    let by_id: BTreeMap<&str, &TokenProbRecord> = biased
        .records
        .iter()
        .map(|r| (r.sentence_id.as_str(), r))
        .collect();
    let mut records = Vec::with_capacity(plain.records.len());
    let mut audit = Vec::with_capacity(plain.records.len());
    for rec in &plain.records {
        let other = by_id.get(rec.sentence_id.as_str()).ok_or_else(|| {
            Error::Usage(format!(
                "no biased distribution for step {:?}",
                rec.sentence_id
            ))
        })?;
        check_vocab(&rec.sentence_id, other, &rec.tokens)?;
        let (p, deltas) = selfdebias::selfdebias_rescale_with_deltas(
            &rec.tokens,
            &distribution_of(rec),
            &distribution_of(other),
            cfg,
        )?;
        records.push(distribution_record(
            &rec.sentence_id,
            &rec.text,
            rec.tokens.clone(),
            &p,
        ));
        audit.push(StepDeltas {
            step_id: rec.sentence_id.clone(),
            deltas,
        });
    }
    Ok((
        TokenProbDump {
            manifest: plain.manifest.clone(),
            records,
        },
        audit,
    ))
}
