use std::collections::{BTreeSet, HashSet};
use std::path::Path;

use super::{locate, quoted, read_text, write_text, LoadError};
use crate::cda::{CdaError, SwapLexicon};

/// Hurtful-word lexicon (HurtLex-style): `(lemma, category)` pairs.
///
/// Lemmas are lowercased at construction; membership is exact whole-token
/// matching on the lowercased lemma, no stemming.
#[derive(Debug, Clone, PartialEq)]
pub struct HurtLexicon {
    entries: BTreeSet<(String, String)>,
    lemmas: HashSet<String>,
    language: String,
}

impl HurtLexicon {
    /// Builds a lexicon, returning it with the number of duplicate rows that
    /// were dropped.
    pub fn new(
        language: impl Into<String>,
        rows: impl IntoIterator<Item = (String, String)>,
    ) -> (Self, usize) {
        let mut entries = BTreeSet::new();
        let mut duplicates = 0;
        for (lemma, category) in rows {
            if !entries.insert((normalize(&lemma), category.trim().to_string())) {
                duplicates += 1;
            }
        }
        let lemmas = entries.iter().map(|(l, _)| l.clone()).collect();
        let lexicon = HurtLexicon {
            entries,
            lemmas,
            language: language.into(),
        };
        (lexicon, duplicates)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(l, c)| (l.as_str(), c.as_str()))
    }

    pub fn language(&self) -> &str {
        &self.language
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_hurtful(&self, token: &str) -> bool {
        self.lemmas.contains(&normalize(token))
    }

    pub fn to_tsv(&self) -> String {
        let mut out = format!("# language: {}\n", self.language);
        for (lemma, category) in &self.entries {
            out.push_str(lemma);
            out.push('\t');
            out.push_str(category);
            out.push('\n');
        }
        out
    }
}

fn normalize(word: &str) -> String {
    word.trim().to_lowercase()
}

/// Parses `lemma<TAB>category` rows. Lines starting with `#` are comments; a
/// `# language: xx` comment sets the language tag (default `und`).
pub fn load_hurt_lexicon(path: impl AsRef<Path>) -> Result<(HurtLexicon, usize), LoadError> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let mut language = String::from("und");
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let trimmed = line.trim_end_matches('\r');
        if trimmed.trim().is_empty() {
            continue;
        }
        if let Some(comment) = trimmed.strip_prefix('#') {
            if let Some(tag) = comment.trim().strip_prefix("language:") {
                language = tag.trim().to_string();
            }
            continue;
        }
        let fields: Vec<&str> = trimmed.split('\t').collect();
        if fields.len() != 2 {
            return Err(LoadError::schema(
                path,
                line_no,
                format!(
                    "expected 2 tab-separated fields (lemma, category), found {}",
                    fields.len()
                ),
            ));
        }
        let (lemma, category) = (fields[0].trim(), fields[1].trim());
        if lemma.is_empty() || category.is_empty() {
            return Err(LoadError::schema(path, line_no, "empty lemma or category"));
        }
        rows.push((lemma.to_string(), category.to_string()));
    }
    Ok(HurtLexicon::new(language, rows))
}

pub fn save_hurt_lexicon(lexicon: &HurtLexicon, path: impl AsRef<Path>) -> Result<(), LoadError> {
    write_text(path.as_ref(), &lexicon.to_tsv())
}

pub fn load_swap_lexicon(path: impl AsRef<Path>) -> Result<SwapLexicon, LoadError> {
    let path = path.as_ref();
    let text = read_text(path)?;
    serde_json::from_str::<SwapLexicon>(&text).map_err(|e| {
        // Validation failures surface through serde's `try_from`; re-run the
        // constructor to recover the offending word for a precise line.
        let line = match serde_json::from_str::<crate::cda::RawSwapLexicon>(&text) {
            Ok(raw) => match SwapLexicon::try_from(raw) {
                Err(CdaError::InvalidLexicon { word: Some(w), .. }) => {
                    locate(&text, &quoted(&w), 1).max(locate(&text, &quoted(&w), 0))
                }
                _ => e.line().max(1),
            },
            Err(_) => e.line().max(1),
        };
        LoadError::schema(path, line, format!("invalid swap lexicon: {e}"))
    })
}

pub fn save_swap_lexicon(lexicon: &SwapLexicon, path: impl AsRef<Path>) -> Result<(), LoadError> {
    write_text(path.as_ref(), &lexicon.to_json())
}
