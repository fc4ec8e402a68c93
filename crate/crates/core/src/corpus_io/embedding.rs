use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{parse_jsonl, read_text, render_jsonl, write_text, LoadError, ModelManifest};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingEntry {
    pub key: String,
    pub vector: Vec<f64>,
}

/// Named vectors (word- or sentence-level) exported from one model layer.
///
/// Keys are unique, every vector has `manifest.embedding_dim` components and
/// none is all-zero, so cosine similarity is always defined downstream.
#[derive(Debug, Clone)]
pub struct EmbeddingDump {
    manifest: ModelManifest,
    entries: Vec<EmbeddingEntry>,
    index: HashMap<String, usize>,
}

impl PartialEq for EmbeddingDump {
    fn eq(&self, other: &Self) -> bool {
        self.manifest == other.manifest && self.entries == other.entries
    }
}

impl EmbeddingDump {
    pub fn new(manifest: ModelManifest, entries: Vec<EmbeddingEntry>) -> Result<Self, String> {
        manifest.validate()?;
        let mut dump = EmbeddingDump {
            manifest,
            entries: Vec::with_capacity(entries.len()),
            index: HashMap::with_capacity(entries.len()),
        };
        for entry in entries {
            dump.push(entry)?;
        }
        Ok(dump)
    }

    fn push(&mut self, entry: EmbeddingEntry) -> Result<(), String> {
        let dim = self.manifest.embedding_dim;
        if entry.vector.len() != dim {
            return Err(format!(
                "dimension mismatch for key {:?}: vector has {} components, manifest declares {dim}",
                entry.key,
                entry.vector.len()
            ));
        }
        if entry.vector.iter().any(|x| !x.is_finite()) {
            return Err(format!(
                "non-finite component in vector for key {:?}",
                entry.key
            ));
        }
        if entry.vector.iter().all(|&x| x == 0.0) {
            return Err(format!("zero vector for key {:?}", entry.key));
        }
        if self.index.contains_key(&entry.key) {
            return Err(format!("duplicate key {:?}", entry.key));
        }
        self.index.insert(entry.key.clone(), self.entries.len());
        self.entries.push(entry);
        Ok(())
    }

    pub fn manifest(&self) -> &ModelManifest {
        &self.manifest
    }

    pub fn entries(&self) -> &[EmbeddingEntry] {
        &self.entries
    }

    pub fn dim(&self) -> usize {
        self.manifest.embedding_dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, key: &str) -> Option<&[f64]> {
        self.index
            .get(key)
            .map(|&i| self.entries[i].vector.as_slice())
    }

    pub fn contains(&self, key: &str) -> bool {
        self.index.contains_key(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.key.as_str())
    }

    pub fn vectors(&self) -> impl Iterator<Item = &[f64]> {
        self.entries.iter().map(|e| e.vector.as_slice())
    }

    pub fn to_jsonl(&self) -> String {
        render_jsonl(&self.manifest, &self.entries)
    }
}

pub fn load_embedding_dump(path: impl AsRef<Path>) -> Result<EmbeddingDump, LoadError> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let (manifest, records) = parse_jsonl::<EmbeddingEntry>(path, &text)?;
    let mut dump = EmbeddingDump::new(manifest, Vec::new())
        .map_err(|rule| LoadError::schema(path, 1, rule))?;
    for (line, entry) in records {
        dump.push(entry)
            .map_err(|rule| LoadError::schema(path, line, rule))?;
    }
    Ok(dump)
}

pub fn save_embedding_dump(dump: &EmbeddingDump, path: impl AsRef<Path>) -> Result<(), LoadError> {
    write_text(path.as_ref(), &dump.to_jsonl())
}
