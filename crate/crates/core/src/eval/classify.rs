//! Zero-shot prompt classification and WA/UA accuracy.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::{check_unit, EvalError, Result};
use crate::linalg::{dot, Matrix};
use crate::store::Dataset;

/// Index of the best-scoring prompt for every speech row; ties go to the
/// smaller prompt index.
pub fn zero_shot_indices(speech: &Matrix, prompts: &Matrix) -> Result<Vec<usize>> {
    if prompts.rows() < 2 {
        return Err(EvalError::TooFewPrompts(prompts.rows()));
    }
    if speech.cols() != prompts.cols() {
        return Err(EvalError::DimMismatch {
            left: speech.cols(),
            right: prompts.cols(),
        });
    }
    check_unit(speech, "speech")?;
    check_unit(prompts, "prompt")?;
    Ok(speech
        .row_iter()
        .map(|s| {
            let mut best = 0;
            let mut best_score = f64::NEG_INFINITY;
            for (j, p) in prompts.row_iter().enumerate() {
                let v = dot(s, p);
                if v > best_score {
                    best = j;
                    best_score = v;
                }
            }
            best
        })
        .collect())
}

/// Predicted label per speech row. When several prompts share a label the
/// class score is the maximum over them, which is the same as taking the
/// label of the overall best prompt.
pub fn zero_shot_classify(speech: &Matrix, prompts: &Matrix, labels: &[String]) -> Result<Vec<String>> {
    if labels.len() != prompts.rows() {
        return Err(EvalError::LengthMismatch {
            left: prompts.rows(),
            right: labels.len(),
        });
    }
    Ok(zero_shot_indices(speech, prompts)?
        .into_iter()
        .map(|j| labels[j].clone())
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifyReport {
    pub wa: f64,
    pub ua: f64,
    /// Accuracy per gold class.
    pub per_class: BTreeMap<String, f64>,
    /// `confusion[gold][predicted]` counts.
    pub confusion: BTreeMap<String, BTreeMap<String, usize>>,
    pub n: usize,
}

/// Weighted (overall) and unweighted (mean per gold class) accuracy.
pub fn accuracy_wa_ua(preds: &[String], golds: &[String]) -> Result<ClassifyReport> {
    if preds.len() != golds.len() {
        return Err(EvalError::LengthMismatch {
            left: preds.len(),
            right: golds.len(),
        });
    }
    if golds.is_empty() {
        return Err(EvalError::Empty("classification labels"));
    }
    let mut confusion: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
    let mut correct = 0usize;
    for (p, g) in preds.iter().zip(golds) {
        *confusion
            .entry(g.clone())
            .or_default()
            .entry(p.clone())
            .or_default() += 1;
        correct += usize::from(p == g);
    }
    let per_class: BTreeMap<String, f64> = confusion
        .iter()
        .map(|(g, row)| {
            let total: usize = row.values().sum();
            let hit = row.get(g).copied().unwrap_or(0);
            (g.clone(), hit as f64 / total as f64)
        })
        .collect();
    let ua = per_class.values().sum::<f64>() / per_class.len() as f64;
    Ok(ClassifyReport {
        wa: correct as f64 / golds.len() as f64,
        ua,
        per_class,
        confusion,
        n: golds.len(),
    })
}

/// Maps a `label -> [prompt text]` table onto caption rows of `d` by exact
/// text match. Returns `(rows, labels)` in table order.
pub fn resolve_prompts(
    d: &Dataset,
    table: &BTreeMap<String, Vec<String>>,
) -> Result<(Vec<usize>, Vec<String>)> {
    let by_text: HashMap<&str, usize> = d
        .caption_texts()
        .iter()
        .rev()
        .map(|(&row, text)| (text.as_str(), row))
        .collect();
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (label, prompts) in table {
        for p in prompts {
            let row = by_text
                .get(p.as_str())
                .ok_or_else(|| EvalError::UnknownPrompt(p.clone()))?;
            rows.push(*row);
            labels.push(label.clone());
        }
    }
    Ok((rows, labels))
}
