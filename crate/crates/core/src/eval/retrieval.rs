//! Single-relevant retrieval metrics: R@1/5/10 and mAP@10.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Direction, EvalError, Result, SimilarityMatrix};

pub const RECALL_CUTOFFS: [usize; 3] = [1, 5, 10];
const MAP_CUTOFF: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub direction: Direction,
    pub r_at: BTreeMap<usize, f64>,
    pub map_at_10: f64,
    pub n_queries: usize,
}

impl EvalReport {
    pub fn recall(&self, k: usize) -> f64 {
        self.r_at.get(&k).copied().unwrap_or(f64::NAN)
    }
}

/// 1-based rank of candidate `target` in `scores`: one plus the number of
/// candidates scoring strictly higher, plus equal-scoring candidates at a
/// smaller index.
pub fn true_rank(scores: &[f64], target: usize) -> usize {
    let s = scores[target];
    1 + scores
        .iter()
        .enumerate()
        .filter(|&(j, &v)| v > s || (v == s && j < target))
        .count()
}

pub fn retrieval_eval(
    sim: &SimilarityMatrix,
    ground_truth: &[usize],
    direction: Direction,
) -> Result<EvalReport> {
    let (n, m) = (sim.rows(), sim.cols());
    if n == 0 {
        return Err(EvalError::Empty("retrieval queries"));
    }
    if ground_truth.len() != n {
        return Err(EvalError::LengthMismatch {
            left: n,
            right: ground_truth.len(),
        });
    }
    let mut hits = [0usize; RECALL_CUTOFFS.len()];
    let mut ap_sum = 0.0;
    for (q, &target) in ground_truth.iter().enumerate() {
        if target >= m {
            return Err(EvalError::InvalidGroundTruth {
                query: q,
                index: target,
                candidates: m,
            });
        }
        let rank = true_rank(sim.values().row(q), target);
        for (h, &k) in hits.iter_mut().zip(&RECALL_CUTOFFS) {
            if rank <= k {
                *h += 1;
            }
        }
        if rank <= MAP_CUTOFF {
            ap_sum += 1.0 / rank as f64;
        }
    }
    Ok(EvalReport {
        direction,
        r_at: RECALL_CUTOFFS
            .iter()
            .zip(hits)
            .map(|(&k, h)| (k, h as f64 / n as f64))
            .collect(),
        map_at_10: ap_sum / n as f64,
        n_queries: n,
    })
}
