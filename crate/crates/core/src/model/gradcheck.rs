//! Central finite-difference verification of the analytic gradients.

use serde::Serialize;

use super::{ClspModel, LossKind, ModelError, Result, SEGMENT_NAMES};
use crate::model::init_model;
use crate::store::{generate_synthetic, make_batches, Batch, SynthConfig, TaskKind};

/// Below this magnitude, gradients are compared on an absolute scale.
pub const REL_ERR_FLOOR: f64 = 1e-6;

/// `|a - b| / max(|a|, |b|, REL_ERR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR);
    (analytic - numeric).abs() / scale
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Parameter segment and offset where the maximum occurred.
    pub worst_parameter: String,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub parameters_checked: usize,
    pub loss: f64,
}

/// Compares every analytic partial derivative (including `log τ`) with
/// `(L(θ + h) - L(θ - h)) / 2h`.
pub fn finite_diff_check(
    model: &ClspModel,
    batch: &Batch,
    kind: LossKind,
    h: f64,
) -> Result<GradCheckReport> {
    if !(h.is_finite() && h > 0.0) {
        return Err(ModelError::InvalidStep(h));
    }
    let text = ClspModel::batch_text(batch, kind)?;
    let (loss, grads) = model.objective(&batch.speech, &text, kind)?;
    let analytic: Vec<Vec<f64>> = grads.segments().iter().map(|s| s.to_vec()).collect();

    let mut probe = model.clone();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_parameter: String::new(),
        worst_analytic: 0.0,
        worst_numeric: 0.0,
        parameters_checked: 0,
        loss,
    };
    for (seg, grad) in analytic.iter().enumerate() {
        for (k, &a) in grad.iter().enumerate() {
            let original = probe.segments()[seg][k];
            probe.segments_mut()[seg][k] = original + h;
            let plus = probe.loss_value(&batch.speech, &text, kind)?;
            probe.segments_mut()[seg][k] = original - h;
            let minus = probe.loss_value(&batch.speech, &text, kind)?;
            probe.segments_mut()[seg][k] = original;

            let numeric = (plus - minus) / (2.0 * h);
            let err = relative_error(a, numeric);
            report.parameters_checked += 1;
            if err > report.max_relative_error || report.worst_parameter.is_empty() {
                report.max_relative_error = err;
                report.worst_parameter = format!("{}[{k}]", SEGMENT_NAMES[seg]);
                report.worst_analytic = a;
                report.worst_numeric = numeric;
            }
        }
    }
    Ok(report)
}

/// Gradient check on freshly generated data and weights for each seed.
/// Batches hold `n` clips with `dim`-wide features; stage two alternates
/// between Task 1 (even seeds) and Task 2 (odd seeds) batches.
pub fn gradcheck_suite(
    kind: LossKind,
    seeds: &[u64],
    n: usize,
    dim: usize,
    h: f64,
) -> Result<Vec<GradCheckReport>> {
    if n < 2 || dim < 2 {
        return Err(ModelError::InvalidDims(format!(
            "gradcheck needs n >= 2 and dim >= 2, got n={n}, dim={dim}"
        )));
    }
    let cfg = SynthConfig {
        n_clusters: 2,
        clips_per_cluster: n.div_ceil(2),
        speech_dim: dim,
        text_dim: dim,
        captions_per_clip: 2,
        global_captions_per_clip: 1,
        latent_dim: dim.min(8),
        prompts: false,
        ..SynthConfig::default()
    };
    seeds
        .iter()
        .map(|&seed| {
            let task = match kind {
                LossKind::Stage1 => TaskKind::Stage1,
                LossKind::Stage2 { .. } if seed % 2 == 0 => TaskKind::Task1,
                LossKind::Stage2 { .. } => TaskKind::Task2,
            };
            let d = generate_synthetic(&cfg, seed)
                .map_err(|e| ModelError::InvalidDims(e.to_string()))?;
            let batch = make_batches(&d, task, n, seed)
                .map_err(|e| ModelError::InvalidDims(e.to_string()))?
                .remove(0);
            let model = init_model(dim, dim, dim, (dim / 2).max(2), seed)?;
            finite_diff_check(&model, &batch, kind, h)
        })
        .collect()
}
