//! Per-caption and per-clip rule checks.

use std::collections::{BTreeMap, HashSet};
use std::sync::OnceLock;

use regex::Regex;

use super::{phrase_regex, Decision, Evidence, Item, Result, RuleSet, VerifyError};

fn word_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"[\p{L}\p{N}][\p{L}\p{N}'’-]*").unwrap())
}

fn quote_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r#""([^"]*)"|“([^”]*)”|«([^»]*)»"#).unwrap())
}

fn sentence_end_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"[.!?]").unwrap())
}

fn words(text: &str) -> Vec<String> {
    word_re()
        .find_iter(text)
        .map(|m| m.as_str().to_lowercase())
        .collect()
}

fn pattern_evidence(patterns: &[Regex], caption: &str, item: Item, out: &mut Vec<Evidence>) {
    for re in patterns {
        if let Some(m) = re.find(caption) {
            out.push(Evidence {
                item,
                span: m.as_str().to_string(),
                caption_index: None,
            });
        }
    }
}

fn has_style_word(tokens: &[String], vocabulary: &HashSet<String>) -> bool {
    tokens.iter().any(|t| {
        vocabulary.contains(t) || (t.contains('-') && t.split('-').any(|p| vocabulary.contains(p)))
    })
}

/// Quoted spans that reproduce the transcript with no style word nearby in
/// the same sentence.
fn transcription_evidence(caption: &str, transcript: &str, rules: &RuleSet, out: &mut Vec<Evidence>) {
    let cfg = &rules.config().item3;
    let spoken: HashSet<String> = words(transcript).into_iter().collect();
    for caps in quote_re().captures_iter(caption) {
        let whole = caps.get(0).expect("match");
        let inner = caps
            .iter()
            .skip(1)
            .flatten()
            .next()
            .map_or("", |m| m.as_str());
        let quoted = words(inner);
        if quoted.len() < cfg.min_quote_words {
            continue;
        }
        let shared = quoted.iter().filter(|w| spoken.contains(*w)).count();
        if (shared as f64) < cfg.min_transcript_overlap * quoted.len() as f64 {
            continue;
        }
        let before = &caption[..whole.start()];
        let before = sentence_end_re()
            .find_iter(before)
            .last()
            .map_or(before, |m| &before[m.end()..]);
        let after = &caption[whole.end()..];
        let after = sentence_end_re()
            .find(after)
            .map_or(after, |m| &after[..m.start()]);
        let before = words(before);
        let after = words(after);
        let lo = before.len().saturating_sub(cfg.window_words);
        let hi = after.len().min(cfg.window_words);
        if !has_style_word(&before[lo..], &rules.vocabulary)
            && !has_style_word(&after[..hi], &rules.vocabulary)
        {
            out.push(Evidence {
                item: Item::Transcription,
                span: whole.as_str().to_string(),
                caption_index: None,
            });
        }
    }
}

fn tag_evidence(caption: &str, tags: &BTreeMap<String, String>, rules: &RuleSet, out: &mut Vec<Evidence>) {
    for (key, value) in tags {
        let Some(table) = rules.synonyms.get(key) else {
            continue;
        };
        let value = value.trim();
        if value.is_empty() {
            continue;
        }
        let found = match table.get(&value.to_lowercase()) {
            Some(re) => re.is_match(caption),
            None => phrase_regex(&[value]).is_match(caption),
        };
        if !found {
            out.push(Evidence {
                item: Item::Tags,
                span: format!("missing tag {key}={value}"),
                caption_index: None,
            });
        }
    }
}

/// Checks one caption against items 1 to 4. Item 3 runs only with a
/// transcript and item 4 only with tags.
pub fn check_caption(
    caption: &str,
    tags: Option<&BTreeMap<String, String>>,
    transcript: Option<&str>,
    rules: &RuleSet,
) -> Result<Decision> {
    if caption.trim().is_empty() {
        return Err(VerifyError::Empty("caption"));
    }
    let cfg = rules.config();
    let mut ev = Vec::new();
    if cfg.item1.enabled {
        pattern_evidence(&rules.item1, caption, Item::Environment, &mut ev);
    }
    if cfg.item2.enabled {
        pattern_evidence(&rules.item2, caption, Item::Absence, &mut ev);
    }
    if let (true, Some(t)) = (cfg.item3.enabled, transcript) {
        transcription_evidence(caption, t, rules, &mut ev);
    }
    if let (true, Some(t)) = (cfg.item4.enabled, tags) {
        tag_evidence(caption, t, rules, &mut ev);
    }
    Ok(Decision::from_evidence(ev))
}

/// Single-speaker, single-role check over all captions of one clip. Any
/// violating caption filters the whole clip; evidence cites its index.
pub fn check_clip<S: AsRef<str>>(captions: &[S], rules: &RuleSet) -> Result<Decision> {
    if captions.is_empty() {
        return Err(VerifyError::Empty("clip caption list"));
    }
    let mut ev = Vec::new();
    if rules.config().clip.enabled {
        for (i, c) in captions.iter().enumerate() {
            let start = ev.len();
            pattern_evidence(&rules.speaker, c.as_ref(), Item::Clip, &mut ev);
            pattern_evidence(&rules.role, c.as_ref(), Item::Clip, &mut ev);
            for e in &mut ev[start..] {
                e.caption_index = Some(i);
            }
        }
    }
    Ok(Decision::from_evidence(ev))
}
