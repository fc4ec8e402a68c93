//! On-disk artifacts consumed and produced by the engine.
//!
//! Every dump is UTF-8 JSONL whose first line is a manifest object
//! `{"manifest": {...}}`; each following line is one record. Attribute specs
//! and swap lexicons are single JSON documents, hurt lexicons are TSV. All
//! probabilities are natural-log scale. The full wire format is documented in
//! `docs/SCHEMAS.md`.
//!
//! Loaders validate every invariant and report violations as
//! [`LoadError::Schema`] carrying the file, the 1-based line and the rule
//! that was broken.

mod attribute;
mod category;
mod embedding;
mod lexicon;
mod manifest;
mod records;

use std::fmt::Display;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use attribute::{load_attribute_spec, save_attribute_spec, AttributeSpec, TargetSets, WordSet};
pub use category::BiasCategory;
pub use embedding::{load_embedding_dump, save_embedding_dump, EmbeddingDump, EmbeddingEntry};
pub use lexicon::{
    load_hurt_lexicon, load_swap_lexicon, save_hurt_lexicon, save_swap_lexicon, HurtLexicon,
};
pub use manifest::{ArchitectureKind, ModelManifest};
pub use records::{
    load_candidate_sets, load_completion_dump, load_token_prob_dump, save_candidate_sets,
    save_completion_dump, save_token_prob_dump, CandidateCorpus, CandidateStyle, CompletionDump,
    CompletionRecord, Role, RoleCandidate, ScoredCandidateSet, TokenProbDump, TokenProbRecord,
};

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{}:{line}: {rule}", path.display())]
    Schema {
        path: PathBuf,
        line: usize,
        rule: String,
    },
}

impl LoadError {
    pub(crate) fn schema(path: &Path, line: usize, rule: impl Display) -> Self {
        LoadError::Schema {
            path: path.to_path_buf(),
            line,
            rule: rule.to_string(),
        }
    }

    pub(crate) fn io(path: &Path, source: io::Error) -> Self {
        LoadError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Line number for schema errors.
    pub fn line(&self) -> Option<usize> {
        match self {
            LoadError::Schema { line, .. } => Some(*line),
            LoadError::Io { .. } => None,
        }
    }
}

pub(crate) fn read_text(path: &Path) -> Result<String, LoadError> {
    fs::read_to_string(path).map_err(|e| LoadError::io(path, e))
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<(), LoadError> {
    fs::write(path, text).map_err(|e| LoadError::io(path, e))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestLine {
    manifest: ModelManifest,
}

/// Splits a JSONL document into its manifest and `(line_no, record)` pairs.
/// Blank lines are skipped; line numbers are 1-based and refer to the file.
pub(crate) fn parse_jsonl<T: DeserializeOwned>(
    path: &Path,
    text: &str,
) -> Result<(ModelManifest, Vec<(usize, T)>), LoadError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty());

    let (first_no, first) = lines
        .next()
        .ok_or_else(|| LoadError::schema(path, 1, "missing manifest line"))?;
    let header: ManifestLine = serde_json::from_str(first)
        .map_err(|e| LoadError::schema(path, first_no, format!("manifest line: {e}")))?;
    header
        .manifest
        .validate()
        .map_err(|rule| LoadError::schema(path, first_no, rule))?;

    let mut records = Vec::new();
    for (line_no, line) in lines {
        let record: T = serde_json::from_str(line)
            .map_err(|e| LoadError::schema(path, line_no, format!("malformed record: {e}")))?;
        records.push((line_no, record));
    }
    Ok((header.manifest, records))
}

pub(crate) fn render_jsonl<T: Serialize>(manifest: &ModelManifest, records: &[T]) -> String {
    let mut out = serde_json::to_string(&ManifestLine {
        manifest: manifest.clone(),
    })
    .expect("manifest serializes");
    out.push('\n');
    for record in records {
        out.push_str(&serde_json::to_string(record).expect("record serializes"));
        out.push('\n');
    }
    out
}

/// Line number of the `nth` (0-based) occurrence of `needle` in `text`, or 1
/// when it is absent. Used to point semantic errors in JSON documents at the
/// offending line.
pub(crate) fn locate(text: &str, needle: &str, nth: usize) -> usize {
    text.match_indices(needle)
        .nth(nth)
        .map(|(offset, _)| text[..offset].matches('\n').count() + 1)
        .unwrap_or(1)
}

pub(crate) fn quoted(word: &str) -> String {
    serde_json::to_string(word).expect("string serializes")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn locate_finds_nth_occurrence() {
        let text = "{\n \"a\": [\"he\",\n \"he\"]\n}";
        assert_eq!(locate(text, "\"he\"", 0), 2);
        assert_eq!(locate(text, "\"he\"", 1), 3);
        assert_eq!(locate(text, "\"she\"", 0), 1);
    }
}
