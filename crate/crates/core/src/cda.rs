//! Counterfactual data augmentation.
//!
//! Corpora are rewritten line by line. Words are found on Unicode word
//! boundaries (UAX #29), so clitic forms such as `he's` are single words and
//! never match `he`. Matching is case-insensitive; the replacement takes the
//! casing of the source token when that casing is lower, Title or UPPER, and
//! the lexicon's own spelling otherwise.

use std::collections::{HashMap, HashSet};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_segmentation::UnicodeSegmentation;

use crate::corpus_io::AttributeSpec;

#[derive(Debug, Error, PartialEq)]
pub enum CdaError {
    #[error("{rule}")]
    InvalidLexicon { rule: String, word: Option<String> },
    #[error("lexicon is {lexicon} but {requested} augmentation was requested")]
    ModeMismatch {
        requested: SwapMode,
        lexicon: SwapMode,
    },
    #[error("multiclass augmentation is random and requires an explicit seed")]
    MissingSeed,
    #[error("class word lists must be parallel: {label:?} has {found} words, expected {expected}")]
    UnequalClassLists {
        label: String,
        found: usize,
        expected: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SwapMode {
    TwoWay,
    OneWay,
    Multiclass,
}

impl fmt::Display for SwapMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SwapMode::TwoWay => "two_way",
            SwapMode::OneWay => "one_way",
            SwapMode::Multiclass => "multiclass",
        })
    }
}

/// JSON shape of a swap lexicon before validation.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawSwapLexicon {
    pub mode: SwapMode,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pairs: Vec<(String, String)>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub groups: Vec<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq)]
enum Slot {
    Replace(String),
    Group { group: usize, member: usize },
}

/// Word-replacement table. `pairs` drive the two_way and one_way modes,
/// `groups` the multiclass mode, where each group lists the aligned forms of
/// one word across classes (e.g. `["he", "she", "xe"]`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSwapLexicon", into = "RawSwapLexicon")]
pub struct SwapLexicon {
    mode: SwapMode,
    pairs: Vec<(String, String)>,
    groups: Vec<Vec<String>>,
    lookup: HashMap<String, Slot>,
}

impl From<SwapLexicon> for RawSwapLexicon {
    fn from(lex: SwapLexicon) -> Self {
        RawSwapLexicon {
            mode: lex.mode,
            pairs: lex.pairs,
            groups: lex.groups,
        }
    }
}

impl TryFrom<RawSwapLexicon> for SwapLexicon {
    type Error = CdaError;

    fn try_from(raw: RawSwapLexicon) -> Result<Self, Self::Error> {
        match raw.mode {
            SwapMode::TwoWay | SwapMode::OneWay => {
                if !raw.groups.is_empty() {
                    return Err(invalid(
                        format!("{} lexicons take `pairs`, not `groups`", raw.mode),
                        None,
                    ));
                }
                SwapLexicon::from_pairs(raw.mode, raw.pairs)
            }
            SwapMode::Multiclass => {
                if !raw.pairs.is_empty() {
                    return Err(invalid(
                        "multiclass lexicons take `groups`, not `pairs`",
                        None,
                    ));
                }
                SwapLexicon::multiclass(raw.groups)
            }
        }
    }
}

fn invalid(rule: impl Into<String>, word: Option<&str>) -> CdaError {
    CdaError::InvalidLexicon {
        rule: rule.into(),
        word: word.map(str::to_owned),
    }
}

fn check_word(word: &str) -> Result<String, CdaError> {
    let key = word.to_lowercase();
    let mut segments = word.split_word_bounds();
    let single = segments.next() == Some(word) && segments.next().is_none();
    if !single || !word.chars().any(char::is_alphanumeric) {
        return Err(invalid(
            format!("lexicon entry {word:?} is not a single word"),
            Some(word),
        ));
    }
    Ok(key)
}

impl SwapLexicon {
    pub fn two_way(pairs: Vec<(String, String)>) -> Result<Self, CdaError> {
        Self::from_pairs(SwapMode::TwoWay, pairs)
    }

    pub fn one_way(pairs: Vec<(String, String)>) -> Result<Self, CdaError> {
        Self::from_pairs(SwapMode::OneWay, pairs)
    }

    fn from_pairs(mode: SwapMode, pairs: Vec<(String, String)>) -> Result<Self, CdaError> {
        if pairs.is_empty() {
            return Err(invalid(format!("{mode} lexicon has no pairs"), None));
        }
        let mut lookup = HashMap::new();
        let mut targets: HashSet<String> = HashSet::new();
        for (a, b) in &pairs {
            let (ka, kb) = (check_word(a)?, check_word(b)?);
            if ka == kb {
                return Err(invalid(format!("pair maps {a:?} to itself"), Some(a)));
            }
            match mode {
                SwapMode::TwoWay => {
                    for (key, word, other) in [(&ka, a, b), (&kb, b, a)] {
                        if lookup
                            .insert(key.clone(), Slot::Replace(other.clone()))
                            .is_some()
                        {
                            return Err(invalid(
                                format!("{word:?} appears in more than one pair; two_way mapping must be an involution"),
                                Some(word),
                            ));
                        }
                    }
                }
                _ => {
                    if lookup
                        .insert(ka.clone(), Slot::Replace(b.clone()))
                        .is_some()
                    {
                        return Err(invalid(
                            format!("{a:?} is the source of more than one pair"),
                            Some(a),
                        ));
                    }
                    targets.insert(kb);
                }
            }
        }
        if mode == SwapMode::OneWay {
            if let Some((a, _)) = pairs
                .iter()
                .find(|(a, _)| targets.contains(&a.to_lowercase()))
            {
                return Err(invalid(
                    format!("chaining hazard: {a:?} is both a source and a target"),
                    Some(a),
                ));
            }
        }
        Ok(SwapLexicon {
            mode,
            pairs,
            groups: Vec::new(),
            lookup,
        })
    }

    pub fn multiclass(groups: Vec<Vec<String>>) -> Result<Self, CdaError> {
        if groups.is_empty() {
            return Err(invalid("multiclass lexicon has no groups", None));
        }
        let mut lookup = HashMap::new();
        for (g, group) in groups.iter().enumerate() {
            if group.len() < 2 {
                return Err(invalid(
                    format!(
                        "group {g} has {} member(s); at least 2 required",
                        group.len()
                    ),
                    group.first().map(String::as_str),
                ));
            }
            for (m, word) in group.iter().enumerate() {
                let key = check_word(word)?;
                if lookup
                    .insert(
                        key,
                        Slot::Group {
                            group: g,
                            member: m,
                        },
                    )
                    .is_some()
                {
                    return Err(invalid(
                        format!("{word:?} appears more than once; groups must be disjoint"),
                        Some(word),
                    ));
                }
            }
        }
        Ok(SwapLexicon {
            mode: SwapMode::Multiclass,
            pairs: Vec::new(),
            groups,
            lookup,
        })
    }

    pub fn mode(&self) -> SwapMode {
        self.mode
    }

    pub fn pairs(&self) -> &[(String, String)] {
        &self.pairs
    }

    pub fn groups(&self) -> &[Vec<String>] {
        &self.groups
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&RawSwapLexicon::from(self.clone()))
            .expect("lexicon serializes")
            + "\n"
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Casing {
    Lower,
    Title,
    Upper,
    Mixed,
}

fn casing_of(word: &str) -> Casing {
    let cased: Vec<char> = word
        .chars()
        .filter(|c| c.is_lowercase() || c.is_uppercase())
        .collect();
    match cased.as_slice() {
        [] => Casing::Lower,
        _ if cased.iter().all(|c| c.is_lowercase()) => Casing::Lower,
        [_, _, ..] if cased.iter().all(|c| c.is_uppercase()) => Casing::Upper,
        [first, rest @ ..] if first.is_uppercase() && rest.iter().all(|c| c.is_lowercase()) => {
            Casing::Title
        }
        _ => Casing::Mixed,
    }
}

fn recase(casing: Casing, form: &str) -> String {
    match casing {
        Casing::Lower => form.to_lowercase(),
        Casing::Upper => form.to_uppercase(),
        Casing::Title => {
            let lower = form.to_lowercase();
            let mut chars = lower.chars();
            match chars.next() {
                Some(first) => first.to_uppercase().chain(chars).collect(),
                None => lower,
            }
        }
        Casing::Mixed => form.to_string(),
    }
}

/// One replacement: `from` found at byte offset `position` of the original
/// line was replaced by `to`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Substitution {
    pub position: usize,
    pub from: String,
    pub to: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentationRecord {
    /// 1-based.
    pub line_no: usize,
    pub original: String,
    pub augmented: String,
    pub substitutions: Vec<Substitution>,
}

impl AugmentationRecord {
    pub fn changed(&self) -> bool {
        !self.substitutions.is_empty()
    }

    /// Re-applies the recorded substitutions to `original`. `None` when a
    /// substitution does not match the original text.
    pub fn replay(&self) -> Option<String> {
        let mut out = String::with_capacity(self.original.len());
        let mut cursor = 0;
        for s in &self.substitutions {
            if s.position < cursor
                || self.original.get(s.position..s.position + s.from.len())? != s.from
            {
                return None;
            }
            out.push_str(&self.original[cursor..s.position]);
            out.push_str(&s.to);
            cursor = s.position + s.from.len();
        }
        out.push_str(&self.original[cursor..]);
        Some(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedCorpus {
    /// One record per input line, in input order.
    pub records: Vec<AugmentationRecord>,
    /// The rewritten corpus with the original line terminators.
    pub text: String,
}

impl AugmentedCorpus {
    pub fn changed(&self) -> impl Iterator<Item = &AugmentationRecord> {
        self.records.iter().filter(|r| r.changed())
    }
}

/// Splits into `(content, terminator)` chunks so output can be reassembled
/// byte-for-byte.
fn lines_with_terminators(corpus: &str) -> Vec<(&str, &str)> {
    corpus
        .split_inclusive('\n')
        .map(|chunk| {
            let body = chunk
                .strip_suffix("\r\n")
                .or_else(|| chunk.strip_suffix('\n'))
                .unwrap_or(chunk);
            (body, &chunk[body.len()..])
        })
        .collect()
}

fn rewrite_words(
    line_no: usize,
    line: &str,
    mut replace: impl FnMut(&str) -> Option<String>,
) -> AugmentationRecord {
    let mut augmented = String::with_capacity(line.len());
    let mut substitutions = Vec::new();
    for (position, segment) in line.split_word_bound_indices() {
        let replacement = if segment.chars().any(char::is_alphanumeric) {
            replace(segment)
        } else {
            None
        };
        match replacement {
            Some(to) if to != segment => {
                augmented.push_str(&to);
                substitutions.push(Substitution {
                    position,
                    from: segment.to_string(),
                    to,
                });
            }
            _ => augmented.push_str(segment),
        }
    }
    AugmentationRecord {
        line_no,
        original: line.to_string(),
        augmented,
        substitutions,
    }
}

/// Rewrites one line. `line_no` is 1-based and, in multiclass mode, selects
/// the line's random stream so results do not depend on processing order.
pub fn augment_line(
    lexicon: &SwapLexicon,
    line_no: usize,
    line: &str,
    seed: u64,
) -> AugmentationRecord {
    match lexicon.mode {
        SwapMode::TwoWay | SwapMode::OneWay => rewrite_words(line_no, line, |word| {
            match lexicon.lookup.get(&word.to_lowercase()) {
                Some(Slot::Replace(form)) => Some(recase(casing_of(word), form)),
                _ => None,
            }
        }),
        SwapMode::Multiclass => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(line_no as u64);
            rewrite_words(line_no, line, |word| {
                match lexicon.lookup.get(&word.to_lowercase()) {
                    Some(&Slot::Group { group, member }) => {
                        let members = &lexicon.groups[group];
                        let mut pick = rng.random_range(0..members.len() - 1);
                        if pick >= member {
                            pick += 1;
                        }
                        Some(recase(casing_of(word), &members[pick]))
                    }
                    _ => None,
                }
            })
        }
    }
}

/// Rewrites a whole corpus. `mode` must match the lexicon's mode; multiclass
/// mode requires a seed. Lines are processed in parallel with output in
/// input order.
pub fn augment_corpus(
    corpus: &str,
    lexicon: &SwapLexicon,
    mode: SwapMode,
    seed: Option<u64>,
) -> Result<AugmentedCorpus, CdaError> {
    if mode != lexicon.mode {
        return Err(CdaError::ModeMismatch {
            requested: mode,
            lexicon: lexicon.mode,
        });
    }
    let seed = match (mode, seed) {
        (SwapMode::Multiclass, None) => return Err(CdaError::MissingSeed),
        (_, seed) => seed.unwrap_or(0),
    };
    let lines = lines_with_terminators(corpus);
    let records: Vec<AugmentationRecord> = lines
        .par_iter()
        .enumerate()
        .map(|(i, (body, _))| augment_line(lexicon, i + 1, body, seed))
        .collect();
    let mut text = String::with_capacity(corpus.len());
    for (record, (_, terminator)) in records.iter().zip(&lines) {
        text.push_str(&record.augmented);
        text.push_str(terminator);
    }
    Ok(AugmentedCorpus { records, text })
}

/// Produces one copy of the corpus per class in which every class term is
/// forced to that class's form. Class word lists are parallel: index `i` of
/// every class names the same concept.
pub fn split_by_class(
    corpus: &str,
    spec: &AttributeSpec,
) -> Result<Vec<(String, String)>, CdaError> {
    let expected = spec.classes[0].words.len();
    for class in &spec.classes {
        if class.words.len() != expected {
            return Err(CdaError::UnequalClassLists {
                label: class.label.clone(),
                found: class.words.len(),
                expected,
            });
        }
    }
    let mut index: HashMap<String, usize> = HashMap::new();
    for class in &spec.classes {
        for (i, word) in class.words.iter().enumerate() {
            index.entry(word.to_lowercase()).or_insert(i);
        }
    }
    let lines = lines_with_terminators(corpus);
    let out = spec
        .classes
        .iter()
        .map(|class| {
            let mut text = String::with_capacity(corpus.len());
            for (i, (body, terminator)) in lines.iter().enumerate() {
                let record = rewrite_words(i + 1, body, |word| {
                    index
                        .get(&word.to_lowercase())
                        .map(|&j| recase(casing_of(word), &class.words[j]))
                });
                text.push_str(&record.augmented);
                text.push_str(terminator);
            }
            (class.label.clone(), text)
        })
        .collect();
    Ok(out)
}
