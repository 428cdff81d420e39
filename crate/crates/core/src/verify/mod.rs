//! Rule-based caption verification.
//!
//! A caption is filtered when it violates any checklist item:
//!
//! 1. describes background sounds, environmental noise or audio quality;
//! 2. declares that something is absent;
//! 3. quotes spoken content without describing how it is spoken;
//! 4. fails to mention a human-annotated tag.
//!
//! A clip is filtered, with all of its captions, when any caption indicates
//! more than one speaker or a speaker taking more than one role. Rules are
//! read from a TOML file; [`RuleSet::default`] compiles the built-in one.

mod check;
mod corpus;
mod judge;

use std::collections::{BTreeMap, BTreeSet, HashSet};

use regex::{Regex, RegexBuilder};
use serde::{Deserialize, Serialize};

pub use check::{check_caption, check_clip};
pub use corpus::{parse_corpus, read_corpus, verify_corpus, write_decisions, CorpusRecord, DecisionRecord};
pub use judge::{HttpJudge, Judge, JudgeReply, JudgeRequest, CHECKLIST};

pub const RULES_VERSION: u32 = 1;
pub const DEFAULT_RULES: &str = include_str!("default_rules.toml");

#[derive(Debug, thiserror::Error)]
pub enum VerifyError {
    #[error("rule config: {0}")]
    Parse(String),
    #[error("rule config version {found} unsupported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("invalid pattern in [{section}] {pattern:?}: {message}")]
    Pattern {
        section: &'static str,
        pattern: String,
        message: String,
    },
    #[error("invalid rule config: {0}")]
    Invalid(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("corpus line {line}: {message}")]
    Corpus { line: usize, message: String },
    #[error("judge request failed: {0}")]
    Judge(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = VerifyError> = std::result::Result<T, E>;

fn enabled() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatternSection {
    #[serde(default = "enabled")]
    pub enabled: bool,
    pub patterns: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuoteSection {
    #[serde(default = "enabled")]
    pub enabled: bool,
    pub min_quote_words: usize,
    pub window_words: usize,
    pub min_transcript_overlap: f64,
    pub style_vocabulary: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TagSection {
    #[serde(default = "enabled")]
    pub enabled: bool,
    /// `tag key -> tag value -> accepted surface forms`.
    #[serde(default)]
    pub synonyms: BTreeMap<String, BTreeMap<String, Vec<String>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipSection {
    #[serde(default = "enabled")]
    pub enabled: bool,
    pub multi_speaker_patterns: Vec<String>,
    pub multi_role_patterns: Vec<String>,
}

/// Serializable rule file contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleConfig {
    pub version: u32,
    pub item1: PatternSection,
    pub item2: PatternSection,
    pub item3: QuoteSection,
    pub item4: TagSection,
    pub clip: ClipSection,
}

impl RuleConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| VerifyError::Parse(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("rule config serializes")
    }
}

/// Compiled, immutable rules.
#[derive(Debug, Clone)]
pub struct RuleSet {
    config: RuleConfig,
    pub(crate) item1: Vec<Regex>,
    pub(crate) item2: Vec<Regex>,
    pub(crate) speaker: Vec<Regex>,
    pub(crate) role: Vec<Regex>,
    pub(crate) vocabulary: HashSet<String>,
    /// `tag key -> lowercased value -> surface-form matcher`.
    pub(crate) synonyms: BTreeMap<String, BTreeMap<String, Regex>>,
}

fn compile(section: &'static str, pattern: &str) -> Result<Regex> {
    RegexBuilder::new(pattern)
        .case_insensitive(true)
        .build()
        .map_err(|e| VerifyError::Pattern {
            section,
            pattern: pattern.to_string(),
            message: e.to_string(),
        })
}

fn compile_all(section: &'static str, patterns: &[String]) -> Result<Vec<Regex>> {
    patterns.iter().map(|p| compile(section, p)).collect()
}

fn is_word(c: Option<char>) -> bool {
    c.is_some_and(|c| c.is_alphanumeric() || c == '_')
}

/// Case-insensitive whole-phrase matcher for any of the literal surface
/// forms.
pub(crate) fn phrase_regex<S: AsRef<str>>(forms: &[S]) -> Regex {
    let alts: Vec<String> = forms
        .iter()
        .map(|f| {
            let f = f.as_ref().trim();
            let lead = if is_word(f.chars().next()) { r"\b" } else { "" };
            let tail = if is_word(f.chars().last()) { r"\b" } else { "" };
            format!("{lead}{}{tail}", regex::escape(f))
        })
        .collect();
    RegexBuilder::new(&format!("(?:{})", alts.join("|")))
        .case_insensitive(true)
        .build()
        .expect("escaped literals compile")
}

pub fn compile_rules(config: &RuleConfig) -> Result<RuleSet> {
    if config.version != RULES_VERSION {
        return Err(VerifyError::Version {
            found: config.version,
            expected: RULES_VERSION,
        });
    }
    let q = &config.item3;
    if q.min_quote_words == 0 {
        return Err(VerifyError::Invalid("item3.min_quote_words must be >= 1".into()));
    }
    if !(0.0..=1.0).contains(&q.min_transcript_overlap) {
        return Err(VerifyError::Invalid(
            "item3.min_transcript_overlap must be in [0, 1]".into(),
        ));
    }
    let mut synonyms = BTreeMap::new();
    for (key, values) in &config.item4.synonyms {
        let mut compiled = BTreeMap::new();
        for (value, forms) in values {
            if forms.is_empty() || forms.iter().any(|f| f.trim().is_empty()) {
                return Err(VerifyError::Invalid(format!(
                    "item4.synonyms.{key}.{value} needs at least one non-empty surface form"
                )));
            }
            compiled.insert(value.to_lowercase(), phrase_regex(forms));
        }
        synonyms.insert(key.clone(), compiled);
    }
    Ok(RuleSet {
        item1: compile_all("item1", &config.item1.patterns)?,
        item2: compile_all("item2", &config.item2.patterns)?,
        speaker: compile_all("clip", &config.clip.multi_speaker_patterns)?,
        role: compile_all("clip", &config.clip.multi_role_patterns)?,
        vocabulary: q.style_vocabulary.iter().map(|w| w.to_lowercase()).collect(),
        synonyms,
        config: config.clone(),
    })
}

impl RuleSet {
    pub fn from_toml(text: &str) -> Result<Self> {
        compile_rules(&RuleConfig::from_toml(text)?)
    }

    pub fn config(&self) -> &RuleConfig {
        &self.config
    }

    /// The configuration these rules were compiled from.
    pub fn to_config(&self) -> RuleConfig {
        self.config.clone()
    }
}

impl Default for RuleSet {
    fn default() -> Self {
        RuleSet::from_toml(DEFAULT_RULES).expect("built-in rules compile")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Item {
    #[serde(rename = "1")]
    Environment,
    #[serde(rename = "2")]
    Absence,
    #[serde(rename = "3")]
    Transcription,
    #[serde(rename = "4")]
    Tags,
    #[serde(rename = "clip")]
    Clip,
    /// Rejected by the external judge.
    #[serde(rename = "judge")]
    Judge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Retain,
    Filter,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Evidence {
    pub item: Item,
    /// Matched text, or a description when nothing matched (item 4).
    pub span: String,
    /// Caption the evidence comes from, for clip-level decisions.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub caption_index: Option<usize>,
}

/// Retain/filter outcome. The verdict is derived from the evidence, so it is
/// `Filter` exactly when `violated_items` is non-empty.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub verdict: Verdict,
    pub violated_items: BTreeSet<Item>,
    pub evidence: Vec<Evidence>,
}

impl Decision {
    pub fn from_evidence(evidence: Vec<Evidence>) -> Self {
        let violated_items: BTreeSet<Item> = evidence.iter().map(|e| e.item).collect();
        let verdict = if violated_items.is_empty() {
            Verdict::Retain
        } else {
            Verdict::Filter
        };
        Self {
            verdict,
            violated_items,
            evidence,
        }
    }

    pub fn retained(&self) -> bool {
        self.verdict == Verdict::Retain
    }

    /// Adds more evidence and recomputes the verdict.
    pub fn merge(self, more: impl IntoIterator<Item = Evidence>) -> Self {
        let mut evidence = self.evidence;
        evidence.extend(more);
        Self::from_evidence(evidence)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_rules_compile_with_nonempty_lists() {
        let r = RuleSet::default();
        assert!(!r.item1.is_empty());
        assert!(!r.item2.is_empty());
        assert!(!r.speaker.is_empty());
    }

    #[test]
    fn bad_pattern_is_named() {
        let mut cfg = RuleSet::default().to_config();
        cfg.item2.patterns.push(r"\bno (other".into());
        let err = compile_rules(&cfg).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains(r"\bno (other"), "{msg}");
        assert!(msg.contains("item2"), "{msg}");
    }

    #[test]
    fn missing_section_is_rejected() {
        let text = DEFAULT_RULES.replace("[item2]", "[item2_typo]");
        assert!(matches!(RuleSet::from_toml(&text), Err(VerifyError::Parse(_))));
        let text = "version = 1\n";
        assert!(RuleSet::from_toml(text).is_err());
    }

    #[test]
    fn wrong_version_rejected() {
        let text = DEFAULT_RULES.replacen("version = 1", "version = 2", 1);
        assert!(matches!(
            RuleSet::from_toml(&text),
            Err(VerifyError::Version { found: 2, .. })
        ));
    }

    #[test]
    fn empty_synonym_list_rejected() {
        let mut cfg = RuleSet::default().to_config();
        cfg.item4
            .synonyms
            .entry("accent".into())
            .or_default()
            .insert("Welsh".into(), vec![]);
        assert!(matches!(compile_rules(&cfg), Err(VerifyError::Invalid(_))));
    }

    #[test]
    fn toml_round_trip_preserves_config() {
        let cfg = RuleSet::default().to_config();
        let again = RuleConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn decision_verdict_follows_evidence() {
        assert!(Decision::from_evidence(vec![]).retained());
        let d = Decision::from_evidence(vec![Evidence {
            item: Item::Absence,
            span: "absence of".into(),
            caption_index: None,
        }]);
        assert_eq!(d.verdict, Verdict::Filter);
        assert_eq!(serde_json::to_string(&d.violated_items).unwrap(), r#"["2"]"#);
    }
}
