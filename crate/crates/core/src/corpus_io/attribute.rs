use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{locate, quoted, read_text, write_text, BiasCategory, LoadError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WordSet {
    pub label: String,
    pub words: Vec<String>,
}

/// WEAT target sets X and Y.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSets {
    pub x: WordSet,
    pub y: WordSet,
}

/// Attribute classes that define a protected attribute (e.g. male/female
/// terms), plus optional WEAT target sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributeSpec {
    pub name: String,
    pub category: BiasCategory,
    pub classes: Vec<WordSet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub targets: Option<TargetSets>,
}

/// A broken rule plus the word to point the error location at.
pub(crate) struct Violation {
    pub rule: String,
    pub anchor: Option<(String, usize)>,
}

impl AttributeSpec {
    pub fn validate(&self) -> Result<(), String> {
        self.check().map_err(|v| v.rule)
    }

    pub(crate) fn check(&self) -> Result<(), Violation> {
        let plain = |rule: String| Violation { rule, anchor: None };
        if self.classes.len() < 2 {
            return Err(plain(format!(
                "spec {:?}: at least 2 classes required, found {}",
                self.name,
                self.classes.len()
            )));
        }
        let mut labels = HashMap::new();
        let mut owner: HashMap<&str, &str> = HashMap::new();
        for class in &self.classes {
            if labels.insert(class.label.as_str(), ()).is_some() {
                return Err(Violation {
                    rule: format!("duplicate class label {:?}", class.label),
                    anchor: Some((quoted(&class.label), 1)),
                });
            }
            if class.words.is_empty() {
                return Err(plain(format!("class {:?} has no words", class.label)));
            }
            for word in &class.words {
                if let Some(prev) = owner.insert(word, &class.label) {
                    let rule = if prev == class.label {
                        format!("word {word:?} listed twice in class {prev:?}")
                    } else {
                        format!(
                            "class word lists must be disjoint: {word:?} appears in both {prev:?} and {:?}",
                            class.label
                        )
                    };
                    return Err(Violation {
                        rule,
                        anchor: Some((quoted(word), 1)),
                    });
                }
            }
        }
        if let Some(t) = &self.targets {
            for set in [&t.x, &t.y] {
                if set.words.is_empty() {
                    return Err(plain(format!("target set {:?} has no words", set.label)));
                }
            }
        }
        Ok(())
    }

    pub fn class(&self, label: &str) -> Option<&WordSet> {
        self.classes.iter().find(|c| c.label == label)
    }

    /// Label of the class `word` belongs to, if any.
    pub fn class_of(&self, word: &str) -> Option<&str> {
        self.classes
            .iter()
            .find(|c| c.words.iter().any(|w| w == word))
            .map(|c| c.label.as_str())
    }

    /// Binary views: this attribute spec itself when it has two classes,
    /// otherwise one `C vs non-C` pair per class (one-vs-rest).
    pub fn binary_views(&self) -> Vec<(WordSet, WordSet)> {
        if self.classes.len() == 2 {
            return vec![(self.classes[0].clone(), self.classes[1].clone())];
        }
        self.classes
            .iter()
            .enumerate()
            .map(|(i, class)| {
                let rest = WordSet {
                    label: format!("non-{}", class.label),
                    words: self
                        .classes
                        .iter()
                        .enumerate()
                        .filter(|(j, _)| *j != i)
                        .flat_map(|(_, c)| c.words.iter().cloned())
                        .collect(),
                };
                (class.clone(), rest)
            })
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes") + "\n"
    }
}

pub fn load_attribute_spec(path: impl AsRef<Path>) -> Result<AttributeSpec, LoadError> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let spec: AttributeSpec = serde_json::from_str(&text).map_err(|e| {
        LoadError::schema(
            path,
            e.line().max(1),
            format!("malformed attribute spec: {e}"),
        )
    })?;
    spec.check().map_err(|v| {
        let line = v
            .anchor
            .map(|(needle, nth)| locate(&text, &needle, nth))
            .unwrap_or(1);
        LoadError::schema(path, line, v.rule)
    })?;
    Ok(spec)
}

pub fn save_attribute_spec(spec: &AttributeSpec, path: impl AsRef<Path>) -> Result<(), LoadError> {
    write_text(path.as_ref(), &spec.to_json())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn gender_spec_loads() {
        let f = write(
            r#"{
  "name": "gender",
  "category": "gender",
  "classes": [
    {"label": "male", "words": ["he", "him", "his"]},
    {"label": "female", "words": ["she", "her", "hers"]}
  ]
}"#,
        );
        let spec = load_attribute_spec(f.path()).unwrap();
        assert_eq!(spec.classes.len(), 2);
        assert_eq!(spec.class_of("her"), Some("female"));
        assert!(spec.targets.is_none());
    }

    #[test]
    fn overlapping_classes_point_at_second_occurrence() {
        let f = write(
            r#"{
  "name": "gender",
  "category": "gender",
  "classes": [
    {"label": "male", "words": ["he", "they"]},
    {"label": "female", "words": ["she",
      "they"]}
  ]
}"#,
        );
        let err = load_attribute_spec(f.path()).unwrap_err();
        assert!(err.to_string().contains("disjoint"), "{err}");
        assert_eq!(err.line(), Some(7));
    }

    #[test]
    fn single_class_rejected() {
        let f =
            write(r#"{"name":"x","category":"age","classes":[{"label":"old","words":["old"]}]}"#);
        assert!(load_attribute_spec(f.path())
            .unwrap_err()
            .to_string()
            .contains("at least 2 classes"));
    }

    #[test]
    fn one_vs_rest_views() {
        let spec = AttributeSpec {
            name: "nat".into(),
            category: BiasCategory::Nationality,
            classes: ["romanian", "french", "german"]
                .iter()
                .map(|l| WordSet {
                    label: l.to_string(),
                    words: vec![format!("{l}1"), format!("{l}2")],
                })
                .collect(),
            targets: None,
        };
        let views = spec.binary_views();
        assert_eq!(views.len(), 3);
        assert_eq!(views[0].0.label, "romanian");
        assert_eq!(views[0].1.label, "non-romanian");
        assert_eq!(
            views[0].1.words,
            ["french1", "french2", "german1", "german2"]
        );
    }
}
