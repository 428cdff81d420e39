//! Bias-corrected Adam over the flattened model parameters.

use serde::{Deserialize, Serialize};

use super::{Result, TrainError};
use crate::model::{ClspModel, ModelGrads, SEGMENT_NAMES};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    /// Number of updates applied so far.
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(param_count: usize) -> Self {
        Self {
            step: 0,
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
        }
    }
}

/// One Adam update of every parameter (including `log τ`), followed by the
/// temperature clamp. The model is left untouched when any gradient entry
/// is non-finite.
pub fn optimizer_step(
    model: &mut ClspModel,
    grads: &ModelGrads,
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    let p = model.param_count();
    if state.m.len() != p || state.v.len() != p {
        return Err(TrainError::Config(format!(
            "optimizer state holds {} moments, model has {p} parameters",
            state.m.len()
        )));
    }
    let grad_segs = grads.segments();
    for (seg, g) in grad_segs.iter().enumerate() {
        if let Some(k) = g.iter().position(|v| !v.is_finite()) {
            return Err(TrainError::NonFiniteGradient {
                param: format!("{}[{k}]", SEGMENT_NAMES[seg]),
            });
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - BETA1.powi(t);
    let c2 = 1.0 - BETA2.powi(t);
    let mut flat = 0;
    for (params, g) in model.segments_mut().into_iter().zip(&grad_segs) {
        for (w, &gk) in params.iter_mut().zip(g.iter()) {
            let m = &mut state.m[flat];
            let v = &mut state.v[flat];
            *m = BETA1 * *m + (1.0 - BETA1) * gk;
            *v = BETA2 * *v + (1.0 - BETA2) * gk * gk;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *w -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            flat += 1;
        }
    }
    model.clamp_temperature();
    Ok(())
}
