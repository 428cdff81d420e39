//! Retrieval, zero-shot classification, correlation and pair scoring.
//!
//! Every function here is pure. Ties are always broken towards the smaller
//! index so reports are reproducible bit for bit.

mod classify;
mod correlation;
mod heldout;
mod retrieval;

use serde::{Deserialize, Serialize};

use crate::linalg::{dot, norm, Matrix};
use crate::model::ModelError;

pub use classify::{accuracy_wa_ua, resolve_prompts, zero_shot_classify, zero_shot_indices, ClassifyReport};
pub use correlation::{correlations, kendall_tau_b, pearson, spearman, Correlations};
pub use heldout::{evaluate_heldout, evaluate_zero_shot, HeldOutEval};
pub use retrieval::{retrieval_eval, true_rank, EvalReport, RECALL_CUTOFFS};

/// Rows fed to cosine-based metrics must be unit length within this.
pub const UNIT_TOLERANCE: f64 = 1e-4;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },
    #[error("{which} row {row} has norm {norm}, expected unit length")]
    NotUnit {
        which: &'static str,
        row: usize,
        norm: f64,
    },
    #[error("ground truth for query {query} points at candidate {index}, but only {candidates} exist")]
    InvalidGroundTruth {
        query: usize,
        index: usize,
        candidates: usize,
    },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("zero-shot classification needs at least 2 prompts, got {0}")]
    TooFewPrompts(usize),
    #[error("prompt {0:?} not found among caption texts")]
    UnknownPrompt(String),
    #[error("degenerate input: {0}")]
    Degenerate(&'static str),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T, E = EvalError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    SpeechToText,
    TextToSpeech,
}

/// Query x candidate score table.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    values: Matrix,
}

impl SimilarityMatrix {
    /// Wraps arbitrary finite scores (no unit-norm requirement).
    pub fn from_scores(values: Matrix) -> Result<Self> {
        if !values.is_finite() {
            return Err(EvalError::NonFinite("similarity scores"));
        }
        Ok(Self { values })
    }

    pub fn rows(&self) -> usize {
        self.values.rows()
    }

    pub fn cols(&self) -> usize {
        self.values.cols()
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    /// Candidates become queries.
    pub fn transpose(&self) -> SimilarityMatrix {
        SimilarityMatrix {
            values: self.values.transpose(),
        }
    }
}

fn check_unit(m: &Matrix, which: &'static str) -> Result<()> {
    if !m.is_finite() {
        return Err(EvalError::NonFinite(which));
    }
    for (row, r) in m.row_iter().enumerate() {
        let n = norm(r);
        if (n - 1.0).abs() > UNIT_TOLERANCE {
            return Err(EvalError::NotUnit { which, row, norm: n });
        }
    }
    Ok(())
}

/// Cosine similarities `A Bᵀ` of unit-norm rows.
pub fn similarity_matrix(a: &Matrix, b: &Matrix) -> Result<SimilarityMatrix> {
    if a.cols() != b.cols() {
        return Err(EvalError::DimMismatch {
            left: a.cols(),
            right: b.cols(),
        });
    }
    check_unit(a, "query")?;
    check_unit(b, "candidate")?;
    Ok(SimilarityMatrix {
        values: a.matmul_t(b),
    })
}

/// Cosine similarity of one speech embedding and one caption embedding.
pub fn score_pair(speech: &[f64], caption: &[f64]) -> Result<f64> {
    if speech.len() != caption.len() {
        return Err(EvalError::DimMismatch {
            left: speech.len(),
            right: caption.len(),
        });
    }
    check_unit(&Matrix::from_vec(1, speech.len(), speech.to_vec()), "speech")?;
    check_unit(&Matrix::from_vec(1, caption.len(), caption.to_vec()), "caption")?;
    Ok(dot(speech, caption).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_unit(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = Matrix::from_vec(
            rows,
            cols,
            (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect(),
        );
        crate::linalg::normalize_rows(&mut m);
        m
    }

    #[test]
    fn orthonormal_gives_identity() {
        let s = similarity_matrix(&Matrix::identity(4), &Matrix::identity(4)).unwrap();
        assert_eq!(s.values(), &Matrix::identity(4));
    }

    #[test]
    fn antipodal_gives_minus_one() {
        let a = Matrix::from_rows(&[vec![0.6, 0.8]]);
        let b = Matrix::from_rows(&[vec![-0.6, -0.8]]);
        assert!((similarity_matrix(&a, &b).unwrap().values()[(0, 0)] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn matches_double_loop() {
        let a = random_unit(7, 6, 1);
        let b = random_unit(5, 6, 2);
        let s = similarity_matrix(&a, &b).unwrap();
        for i in 0..7 {
            for j in 0..5 {
                let mut acc = 0.0;
                for k in 0..6 {
                    acc += a[(i, k)] * b[(j, k)];
                }
                assert!((s.values()[(i, j)] - acc).abs() < 1e-12);
                assert!(s.values()[(i, j)].abs() <= 1.0 + 1e-6);
            }
        }
    }

    #[test]
    fn rejects_mismatch_and_non_unit() {
        assert!(matches!(
            similarity_matrix(&Matrix::identity(3), &Matrix::identity(2)),
            Err(EvalError::DimMismatch { .. })
        ));
        let a = Matrix::from_rows(&[vec![1.0, 1.0]]);
        assert!(matches!(
            similarity_matrix(&a, &a),
            Err(EvalError::NotUnit { .. })
        ));
    }

    #[test]
    fn score_pair_basics() {
        assert!((score_pair(&[0.6, 0.8], &[0.6, 0.8]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(score_pair(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!(score_pair(&[1.0, 0.0], &[1.0]).is_err());
    }
}
