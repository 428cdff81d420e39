//! Model-level evaluation on a held-out sample set.
//!
//! Global and fine-grained captions form separate candidate pools. Each
//! held-out clip contributes its first caption of the granularity, so the
//! ground truth is the diagonal of the similarity matrix.

use serde::{Deserialize, Serialize};

use super::{
    accuracy_wa_ua, retrieval_eval, similarity_matrix, zero_shot_classify, ClassifyReport,
    Direction, EvalError, EvalReport, Result,
};
use crate::model::ClspModel;
use crate::store::Dataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeldOutEval {
    pub global_s2t: EvalReport,
    pub global_t2s: EvalReport,
    pub fine_s2t: EvalReport,
    pub fine_t2s: EvalReport,
}

impl HeldOutEval {
    /// Mean of the four mAP@10 values.
    pub fn average_map(&self) -> f64 {
        (self.global_s2t.map_at_10
            + self.global_t2s.map_at_10
            + self.fine_s2t.map_at_10
            + self.fine_t2s.map_at_10)
            / 4.0
    }

    pub fn global_map(&self) -> f64 {
        (self.global_s2t.map_at_10 + self.global_t2s.map_at_10) / 2.0
    }

    pub fn fine_map(&self) -> f64 {
        (self.fine_s2t.map_at_10 + self.fine_t2s.map_at_10) / 2.0
    }
}

fn pool(
    model: &ClspModel,
    d: &Dataset,
    held: &[usize],
    caption: impl Fn(usize) -> Option<usize>,
    name: &'static str,
) -> Result<(EvalReport, EvalReport)> {
    let (speech_rows, text_rows): (Vec<usize>, Vec<usize>) = held
        .iter()
        .filter_map(|&i| caption(i).map(|t| (d.samples()[i].speech_row, t)))
        .unzip();
    if speech_rows.is_empty() {
        return Err(EvalError::Empty(name));
    }
    let s = model.embed_speech(&d.speech_features().gather(&speech_rows))?;
    let t = model.embed_text(&d.text_features().gather(&text_rows))?;
    let sim = similarity_matrix(&s, &t)?;
    let gt: Vec<usize> = (0..speech_rows.len()).collect();
    Ok((
        retrieval_eval(&sim, &gt, Direction::SpeechToText)?,
        retrieval_eval(&sim.transpose(), &gt, Direction::TextToSpeech)?,
    ))
}

pub fn evaluate_heldout(model: &ClspModel, d: &Dataset, held: &[usize]) -> Result<HeldOutEval> {
    let samples = d.samples();
    let (global_s2t, global_t2s) = pool(
        model,
        d,
        held,
        |i| samples[i].global_caption_rows.first().copied(),
        "held-out global caption pool",
    )?;
    let (fine_s2t, fine_t2s) = pool(
        model,
        d,
        held,
        |i| samples[i].fine_caption_rows.first().copied(),
        "held-out fine caption pool",
    )?;
    Ok(HeldOutEval {
        global_s2t,
        global_t2s,
        fine_s2t,
        fine_t2s,
    })
}

/// Zero-shot accuracy of `samples` against prompt rows, with gold labels
/// read from each sample's `gold_tag`.
pub fn evaluate_zero_shot(
    model: &ClspModel,
    d: &Dataset,
    samples: &[usize],
    gold_tag: &str,
    prompt_rows: &[usize],
    prompt_labels: &[String],
) -> Result<ClassifyReport> {
    let golds: Vec<String> = samples
        .iter()
        .map(|&i| {
            d.samples()[i]
                .tags
                .get(gold_tag)
                .cloned()
                .ok_or(EvalError::Empty("gold tag missing on a sample"))
        })
        .collect::<Result<_>>()?;
    let speech_rows: Vec<usize> = samples.iter().map(|&i| d.samples()[i].speech_row).collect();
    let s = model.embed_speech(&d.speech_features().gather(&speech_rows))?;
    let p = model.embed_text(&d.text_features().gather(prompt_rows))?;
    let preds = zero_shot_classify(&s, &p, prompt_labels)?;
    accuracy_wa_ua(&preds, &golds)
}
