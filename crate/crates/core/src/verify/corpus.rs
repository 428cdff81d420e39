//! JSON Lines corpus verification.
//!
//! Records sharing a `clip_id` form one clip. Each output line carries the
//! caption decision merged with the clip decision, so a clip-level violation
//! filters every caption of the clip.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{check_caption, check_clip, Evidence, Item, Judge, Result, RuleSet, Verdict, VerifyError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub clip_id: String,
    pub caption: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tags: Option<BTreeMap<String, String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transcript: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub clip_id: String,
    /// Position of the caption within its clip, in input order.
    pub caption_index: usize,
    pub verdict: Verdict,
    pub violated_items: BTreeSet<Item>,
    pub evidence: Vec<Evidence>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> VerifyError + '_ {
    move |source| VerifyError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Parses a JSONL corpus; blank lines are skipped, line numbers are 1-based.
pub fn parse_corpus(text: &str) -> Result<Vec<CorpusRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: CorpusRecord = serde_json::from_str(line).map_err(|e| VerifyError::Corpus {
            line: i + 1,
            message: e.to_string(),
        })?;
        if rec.caption.trim().is_empty() {
            return Err(VerifyError::Corpus {
                line: i + 1,
                message: "empty caption".into(),
            });
        }
        out.push(rec);
    }
    if out.is_empty() {
        return Err(VerifyError::Empty("corpus"));
    }
    Ok(out)
}

pub fn read_corpus(path: &Path) -> Result<Vec<CorpusRecord>> {
    parse_corpus(&fs::read_to_string(path).map_err(io_err(path))?)
}

/// Decisions for every record, in input order. The judge, when given, sees
/// only captions that survive every rule including the clip constraint.
pub fn verify_corpus(
    records: &[CorpusRecord],
    rules: &RuleSet,
    judge: Option<&dyn Judge>,
) -> Result<Vec<DecisionRecord>> {
    let mut clips: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, r) in records.iter().enumerate() {
        clips.entry(r.clip_id.as_str()).or_default().push(i);
    }
    let mut clip_evidence: HashMap<&str, Vec<Evidence>> = HashMap::new();
    for (&clip, members) in &clips {
        let captions: Vec<&str> = members.iter().map(|&i| records[i].caption.as_str()).collect();
        clip_evidence.insert(clip, check_clip(&captions, rules)?.evidence);
    }
    let mut position: HashMap<&str, usize> = HashMap::new();
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        let idx = position.entry(r.clip_id.as_str()).or_default();
        let caption_index = *idx;
        *idx += 1;
        let mut d = check_caption(&r.caption, r.tags.as_ref(), r.transcript.as_deref(), rules)?
            .merge(clip_evidence[r.clip_id.as_str()].iter().cloned());
        if let Some(j) = judge {
            d = j.review(&r.caption, d)?;
        }
        out.push(DecisionRecord {
            clip_id: r.clip_id.clone(),
            caption_index,
            verdict: d.verdict,
            violated_items: d.violated_items,
            evidence: d.evidence,
        });
    }
    Ok(out)
}

pub fn write_decisions(path: &Path, decisions: &[DecisionRecord]) -> Result<()> {
    let mut buf = Vec::new();
    for d in decisions {
        serde_json::to_writer(&mut buf, d).expect("decision serializes");
        buf.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(&buf).map_err(io_err(path))
}
