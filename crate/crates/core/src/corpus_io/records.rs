use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    parse_jsonl, read_text, render_jsonl, write_text, ArchitectureKind, BiasCategory, LoadError,
    ModelManifest,
};

/// One scored sentence: tokens as split by the model's tokenizer and the
/// natural-log probability the model assigned to each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenProbRecord {
    pub sentence_id: String,
    pub text: String,
    pub tokens: Vec<String>,
    pub token_logprobs: Vec<f64>,
    /// Positions that were masked and scored one at a time (masked models
    /// only). When present, only these positions enter pseudo-log-likelihood
    /// sums.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub masked_positions: Option<Vec<usize>>,
}

impl TokenProbRecord {
    pub fn validate(&self, arch: ArchitectureKind) -> Result<(), String> {
        if self.tokens.len() != self.token_logprobs.len() {
            return Err(format!(
                "record {:?}: {} tokens but {} token_logprobs",
                self.sentence_id,
                self.tokens.len(),
                self.token_logprobs.len()
            ));
        }
        if let Some((i, lp)) = self
            .token_logprobs
            .iter()
            .enumerate()
            .find(|(_, lp)| !(lp.is_finite() && **lp <= 0.0))
        {
            return Err(format!(
                "record {:?}: token_logprobs[{i}] = {lp} is not a log-probability (must be finite and <= 0)",
                self.sentence_id
            ));
        }
        if let Some(positions) = &self.masked_positions {
            if arch != ArchitectureKind::Masked {
                return Err(format!(
                    "record {:?}: masked_positions are only legal for masked models",
                    self.sentence_id
                ));
            }
            let mut seen = HashSet::new();
            for &p in positions {
                if p >= self.tokens.len() {
                    return Err(format!(
                        "record {:?}: masked position {p} out of range for {} tokens",
                        self.sentence_id,
                        self.tokens.len()
                    ));
                }
                if !seen.insert(p) {
                    return Err(format!(
                        "record {:?}: masked position {p} listed twice",
                        self.sentence_id
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn total_logprob(&self) -> f64 {
        self.token_logprobs.iter().sum()
    }

    /// Log-probabilities of the positions that were actually scored: the
    /// masked positions when listed, otherwise every token.
    pub fn scored_logprobs(&self) -> Vec<f64> {
        match &self.masked_positions {
            Some(positions) => positions.iter().map(|&p| self.token_logprobs[p]).collect(),
            None => self.token_logprobs.clone(),
        }
    }
}

/// Stand-alone token-probability dump. Also used for full next-token
/// distributions, where `tokens` is the vocabulary and `token_logprobs` the
/// log-distribution over it.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenProbDump {
    pub manifest: ModelManifest,
    pub records: Vec<TokenProbRecord>,
}

impl TokenProbDump {
    pub fn to_jsonl(&self) -> String {
        render_jsonl(&self.manifest, &self.records)
    }
}

pub fn load_token_prob_dump(path: impl AsRef<Path>) -> Result<TokenProbDump, LoadError> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let (manifest, lines) = parse_jsonl::<TokenProbRecord>(path, &text)?;
    let mut ids = HashSet::new();
    let mut records = Vec::with_capacity(lines.len());
    for (line, record) in lines {
        record
            .validate(manifest.architecture_kind)
            .map_err(|rule| LoadError::schema(path, line, rule))?;
        if !ids.insert(record.sentence_id.clone()) {
            return Err(LoadError::schema(
                path,
                line,
                format!("duplicate sentence_id {:?}", record.sentence_id),
            ));
        }
        records.push(record);
    }
    Ok(TokenProbDump { manifest, records })
}

pub fn save_token_prob_dump(dump: &TokenProbDump, path: impl AsRef<Path>) -> Result<(), LoadError> {
    write_text(path.as_ref(), &dump.to_jsonl())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Stereotype,
    AntiStereotype,
    Unrelated,
    MoreStereotypical,
    LessStereotypical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CandidateStyle {
    /// `{stereotype, anti_stereotype, unrelated}`
    StereoSet,
    /// `{more_stereotypical, less_stereotypical}`
    CrowS,
}

impl CandidateStyle {
    pub fn roles(self) -> &'static [Role] {
        match self {
            CandidateStyle::StereoSet => &[Role::Stereotype, Role::AntiStereotype, Role::Unrelated],
            CandidateStyle::CrowS => &[Role::MoreStereotypical, Role::LessStereotypical],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoleCandidate {
    pub role: Role,
    pub record: TokenProbRecord,
}

/// A group of alternative sentences for one probe. Intersentence StereoSet
/// instances carry the shared `context`; intrasentence ones do not.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoredCandidateSet {
    pub set_id: String,
    pub category: BiasCategory,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<String>,
    pub candidates: Vec<RoleCandidate>,
}

impl ScoredCandidateSet {
    /// Checks role uniqueness and that the roles form exactly one of the two
    /// legal combinations; returns that combination.
    pub fn style(&self) -> Result<CandidateStyle, String> {
        let mut seen = HashSet::new();
        for c in &self.candidates {
            if !seen.insert(c.role) {
                return Err(format!(
                    "set {:?}: duplicate role {:?}",
                    self.set_id,
                    role_name(c.role)
                ));
            }
        }
        for style in [CandidateStyle::StereoSet, CandidateStyle::CrowS] {
            let expected: HashSet<Role> = style.roles().iter().copied().collect();
            if seen == expected {
                return Ok(style);
            }
        }
        let mut got: Vec<_> = seen.into_iter().collect();
        got.sort();
        Err(format!(
            "set {:?}: wrong role combination {:?}; expected {{stereotype, anti_stereotype, unrelated}} or {{more_stereotypical, less_stereotypical}}",
            self.set_id,
            got.into_iter().map(role_name).collect::<Vec<_>>()
        ))
    }

    pub fn get(&self, role: Role) -> Option<&TokenProbRecord> {
        self.candidates
            .iter()
            .find(|c| c.role == role)
            .map(|c| &c.record)
    }

    fn validate(&self, arch: ArchitectureKind) -> Result<CandidateStyle, String> {
        let style = self.style()?;
        for c in &self.candidates {
            c.record.validate(arch)?;
        }
        Ok(style)
    }
}

fn role_name(role: Role) -> String {
    serde_json::to_value(role)
        .ok()
        .and_then(|v| v.as_str().map(str::to_owned))
        .unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateCorpus {
    pub manifest: ModelManifest,
    pub sets: Vec<ScoredCandidateSet>,
}

impl CandidateCorpus {
    pub fn to_jsonl(&self) -> String {
        render_jsonl(&self.manifest, &self.sets)
    }
}

/// Loads candidate sets, keeping only those in `category_filter` when given.
/// Input order is preserved. Every set is validated, including those the
/// filter drops.
pub fn load_candidate_sets(
    path: impl AsRef<Path>,
    category_filter: Option<&BiasCategory>,
) -> Result<CandidateCorpus, LoadError> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let (manifest, lines) = parse_jsonl::<ScoredCandidateSet>(path, &text)?;
    let mut ids = HashSet::new();
    let mut sets = Vec::new();
    for (line, set) in lines {
        set.validate(manifest.architecture_kind)
            .map_err(|rule| LoadError::schema(path, line, rule))?;
        if !ids.insert(set.set_id.clone()) {
            return Err(LoadError::schema(
                path,
                line,
                format!("duplicate set_id {:?}", set.set_id),
            ));
        }
        if category_filter.is_none_or(|c| *c == set.category) {
            sets.push(set);
        }
    }
    Ok(CandidateCorpus { manifest, sets })
}

pub fn save_candidate_sets(
    corpus: &CandidateCorpus,
    path: impl AsRef<Path>,
) -> Result<(), LoadError> {
    write_text(path.as_ref(), &corpus.to_jsonl())
}

/// Top-k single-word completions of one prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompletionRecord {
    pub prompt_id: String,
    /// Group the prompt belongs to; HONEST rates are computed per class.
    pub class: String,
    pub category: BiasCategory,
    pub completions: Vec<String>,
}

impl CompletionRecord {
    fn validate(&self) -> Result<(), String> {
        if self.completions.is_empty() {
            return Err(format!("prompt {:?}: no completions", self.prompt_id));
        }
        for c in &self.completions {
            if c.trim().is_empty() {
                return Err(format!("prompt {:?}: empty completion", self.prompt_id));
            }
            if c.trim().contains(char::is_whitespace) {
                return Err(format!(
                    "prompt {:?}: multiword completion {c:?}; completions must be single words",
                    self.prompt_id
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionDump {
    pub manifest: ModelManifest,
    pub records: Vec<CompletionRecord>,
}

impl CompletionDump {
    pub fn to_jsonl(&self) -> String {
        render_jsonl(&self.manifest, &self.records)
    }
}

pub fn load_completion_dump(path: impl AsRef<Path>) -> Result<CompletionDump, LoadError> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let (manifest, lines) = parse_jsonl::<CompletionRecord>(path, &text)?;
    let mut ids = HashSet::new();
    let mut records = Vec::with_capacity(lines.len());
    for (line, record) in lines {
        record
            .validate()
            .map_err(|rule| LoadError::schema(path, line, rule))?;
        if !ids.insert(record.prompt_id.clone()) {
            return Err(LoadError::schema(
                path,
                line,
                format!("duplicate prompt_id {:?}", record.prompt_id),
            ));
        }
        records.push(record);
    }
    Ok(CompletionDump { manifest, records })
}

pub fn save_completion_dump(
    dump: &CompletionDump,
    path: impl AsRef<Path>,
) -> Result<(), LoadError> {
    write_text(path.as_ref(), &dump.to_jsonl())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    const MASKED: &str = r#"{"manifest":{"model_id":"toy","architecture_kind":"masked","embedding_dim":4,"layer":"mlm_head","tokenizer_id":"toy","created_at":"2024-01-01T00:00:00Z"}}"#;
    const CAUSAL: &str = r#"{"manifest":{"model_id":"toy","architecture_kind":"causal","embedding_dim":4,"layer":"lm_head","tokenizer_id":"toy","created_at":"2024-01-01T00:00:00Z"}}"#;

    fn write(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    fn rec(id: &str) -> String {
        format!(
            r#"{{"sentence_id":"{id}","text":"a b","tokens":["a","b"],"token_logprobs":[-1.0,-2.0]}}"#
        )
    }

    fn stereoset_line(id: &str, category: &str) -> String {
        format!(
            r#"{{"set_id":"{id}","category":"{category}","candidates":[{{"role":"stereotype","record":{}}},{{"role":"anti_stereotype","record":{}}},{{"role":"unrelated","record":{}}}]}}"#,
            rec(&format!("{id}s")),
            rec(&format!("{id}a")),
            rec(&format!("{id}u"))
        )
    }

    fn ten_sets() -> tempfile::NamedTempFile {
        let cats = [
            "race", "gender", "race", "race", "gender", "race", "gender", "race", "gender", "race",
        ];
        let mut body = String::from(MASKED);
        body.push('\n');
        for (i, c) in cats.iter().enumerate() {
            body.push_str(&stereoset_line(&format!("s{i}"), c));
            body.push('\n');
        }
        write(&body)
    }

    #[test]
    fn category_filter_keeps_order() {
        let f = ten_sets();
        let race = load_candidate_sets(f.path(), Some(&BiasCategory::Race)).unwrap();
        assert_eq!(race.sets.len(), 6);
        let ids: Vec<_> = race.sets.iter().map(|s| s.set_id.as_str()).collect();
        assert_eq!(ids, ["s0", "s2", "s3", "s5", "s7", "s9"]);

        let all = load_candidate_sets(f.path(), None).unwrap();
        assert_eq!(all.sets.len(), 10);
        let ids: Vec<_> = all.sets.iter().map(|s| s.set_id.clone()).collect();
        assert_eq!(ids, (0..10).map(|i| format!("s{i}")).collect::<Vec<_>>());
    }

    #[test]
    fn duplicate_role_is_rejected() {
        let line = format!(
            r#"{{"set_id":"x","category":"race","candidates":[{{"role":"stereotype","record":{}}},{{"role":"stereotype","record":{}}},{{"role":"unrelated","record":{}}}]}}"#,
            rec("1"),
            rec("2"),
            rec("3")
        );
        let f = write(&format!("{MASKED}\n{line}\n"));
        let err = load_candidate_sets(f.path(), None).unwrap_err();
        assert_eq!(err.line(), Some(2));
        assert!(
            err.to_string().contains("duplicate role \"stereotype\""),
            "{err}"
        );
    }

    #[test]
    fn unknown_role_and_wrong_combination() {
        let line = format!(
            r#"{{"set_id":"x","category":"race","candidates":[{{"role":"neutral","record":{}}}]}}"#,
            rec("1")
        );
        let f = write(&format!("{MASKED}\n{line}\n"));
        let err = load_candidate_sets(f.path(), None).unwrap_err();
        assert!(err.to_string().contains("neutral"), "{err}");

        let line = format!(
            r#"{{"set_id":"x","category":"race","candidates":[{{"role":"stereotype","record":{}}},{{"role":"less_stereotypical","record":{}}}]}}"#,
            rec("1"),
            rec("2")
        );
        let f = write(&format!("{MASKED}\n{line}\n"));
        let err = load_candidate_sets(f.path(), None).unwrap_err();
        assert!(err.to_string().contains("wrong role combination"), "{err}");
    }

    #[test]
    fn masked_positions_need_masked_model() {
        let line = r#"{"sentence_id":"a","text":"a b","tokens":["a","b"],"token_logprobs":[-1.0,-2.0],"masked_positions":[1]}"#;
        let f = write(&format!("{CAUSAL}\n{line}\n"));
        let err = load_token_prob_dump(f.path()).unwrap_err();
        assert!(err.to_string().contains("masked models"));

        let f = write(&format!("{MASKED}\n{line}\n"));
        let dump = load_token_prob_dump(f.path()).unwrap();
        assert_eq!(dump.records[0].scored_logprobs(), vec![-2.0]);
    }

    #[test]
    fn positive_logprob_rejected() {
        let line = r#"{"sentence_id":"a","text":"a","tokens":["a"],"token_logprobs":[0.5]}"#;
        let f = write(&format!("{CAUSAL}\n{line}\n"));
        let err = load_token_prob_dump(f.path()).unwrap_err();
        assert_eq!(err.line(), Some(2));
        assert!(err.to_string().contains("token_logprobs[0]"));
    }

    #[test]
    fn multiword_completion_rejected() {
        let line = r#"{"prompt_id":"p","class":"animals","category":"gender","completions":["a dog","cat"]}"#;
        let f = write(&format!("{CAUSAL}\n{line}\n"));
        let err = load_completion_dump(f.path()).unwrap_err();
        assert!(err.to_string().contains("multiword"));
    }
}
