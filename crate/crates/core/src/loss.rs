//! Symmetric InfoNCE objectives over unit-norm embeddings.
//!
//! Both stages share one kernel: logits `L = S Tᵀ / τ`, a row-stochastic
//! target matrix for each direction, and row-mean soft cross-entropy.
//!
//! * Stage one pairs each speech row with one caption; both target matrices
//!   are the identity, which gives the usual symmetric InfoNCE
//!   `-(1/2N) Σ_i [log p(t_i | s_i) + log p(s_i | t_i)]`.
//! * Stage two pairs each speech row with two captions stacked as
//!   `T = [t_1..t_N, t̂_1..t̂_N]`. Speech-to-text targets put `λ` on `t_i`
//!   and `1 - λ` on `t̂_i`; text-to-speech targets are one-hot on the owning
//!   clip. The loss is the mean of the two directions.
//!
//! Gradients are returned with respect to the embeddings and `log τ`.

use crate::linalg::{max_unit_deviation, Matrix};

/// Tolerance on `‖row‖ - 1` for loss inputs.
pub const UNIT_TOLERANCE: f64 = 1e-4;
/// Tolerance on target row sums.
pub const STOCHASTIC_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LossError {
    #[error("{which} rows are not unit-norm (max deviation {deviation:.3e})")]
    NonUnitRows { which: &'static str, deviation: f64 },
    #[error("temperature must be finite and > 0, got {0}")]
    InvalidTemperature(f64),
    #[error("lambda must lie in [0, 1], got {0}")]
    LambdaOutOfRange(f64),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("target row {row} is not a distribution (sum {sum}, min {min})")]
    NonStochasticTargets { row: usize, sum: f64, min: f64 },
    #[error("empty batch")]
    Empty,
}

pub type Result<T, E = LossError> = std::result::Result<T, E>;

/// Loss value plus gradients w.r.t. speech rows, text rows and `log τ`.
#[derive(Debug, Clone)]
pub struct LossOutput {
    pub value: f64,
    pub d_speech: Matrix,
    pub d_text: Matrix,
    pub d_log_tau: f64,
}

/// Speech-to-text targets for a batch of `n` clips with two captions each.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftTargets {
    n: usize,
    lambda: f64,
    matrix: Matrix,
}

impl SoftTargets {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// The `n x 2n` target matrix.
    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }
}

pub fn soft_targets(n: usize, lambda: f64) -> Result<SoftTargets> {
    if n == 0 {
        return Err(LossError::Empty);
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(LossError::LambdaOutOfRange(lambda));
    }
    let mut m = Matrix::zeros(n, 2 * n);
    for i in 0..n {
        m[(i, i)] = lambda;
        m[(i, i + n)] = 1.0 - lambda;
    }
    Ok(SoftTargets {
        n,
        lambda,
        matrix: m,
    })
}

/// Text-to-speech targets: row `j` of the `2n x n` matrix is one-hot on
/// clip `j mod n`.
pub fn t2a_targets(n: usize) -> Matrix {
    let mut m = Matrix::zeros(2 * n, n);
    for i in 0..n {
        m[(i, i)] = 1.0;
        m[(i + n, i)] = 1.0;
    }
    m
}

fn check_targets(targets: &Matrix) -> Result<()> {
    for (row, r) in targets.row_iter().enumerate() {
        let sum: f64 = r.iter().sum();
        let min = r.iter().copied().fold(f64::INFINITY, f64::min);
        if (sum - 1.0).abs() > STOCHASTIC_TOLERANCE || min < 0.0 {
            return Err(LossError::NonStochasticTargets { row, sum, min });
        }
    }
    Ok(())
}

/// Row-wise log-softmax with max shift.
fn log_softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    for (o, v) in out.iter_mut().zip(row) {
        *o = v - lse;
    }
}

/// Mean over rows of `-Σ_j targets[i,j] · log softmax(logits[i,·])[j]`, and
/// its gradient w.r.t. the logits.
fn soft_ce_with_grad(logits: &Matrix, targets: &Matrix) -> (f64, Matrix) {
    let (r, c) = (logits.rows(), logits.cols());
    let mut grad = Matrix::zeros(r, c);
    let mut logp = vec![0.0; c];
    let mut total = 0.0;
    let inv_r = 1.0 / r as f64;
    for i in 0..r {
        log_softmax_row(logits.row(i), &mut logp);
        let t = targets.row(i);
        let mut row_loss = 0.0;
        for j in 0..c {
            if t[j] != 0.0 {
                row_loss -= t[j] * logp[j];
            }
        }
        total += row_loss;
        let g = grad.row_mut(i);
        for j in 0..c {
            g[j] = (logp[j].exp() - t[j]) * inv_r;
        }
    }
    (total * inv_r, grad)
}

/// Soft-target cross-entropy averaged over rows.
pub fn soft_cross_entropy(logits: &Matrix, targets: &Matrix) -> Result<f64> {
    if (logits.rows(), logits.cols()) != (targets.rows(), targets.cols()) {
        return Err(LossError::Shape(format!(
            "logits {}x{} vs targets {}x{}",
            logits.rows(),
            logits.cols(),
            targets.rows(),
            targets.cols()
        )));
    }
    if logits.rows() == 0 {
        return Err(LossError::Empty);
    }
    check_targets(targets)?;
    Ok(soft_ce_with_grad(logits, targets).0)
}

fn check_inputs(s: &Matrix, t: &Matrix, tau: f64) -> Result<()> {
    if !(tau.is_finite() && tau > 0.0) {
        return Err(LossError::InvalidTemperature(tau));
    }
    if s.rows() == 0 {
        return Err(LossError::Empty);
    }
    if s.cols() != t.cols() {
        return Err(LossError::Shape(format!(
            "speech dim {} vs text dim {}",
            s.cols(),
            t.cols()
        )));
    }
    for (which, m) in [("speech", s), ("text", t)] {
        let deviation = max_unit_deviation(m);
        if deviation > UNIT_TOLERANCE || !deviation.is_finite() {
            return Err(LossError::NonUnitRows { which, deviation });
        }
    }
    Ok(())
}

/// Shared kernel: `½ [CE(L, a2t) + CE(Lᵀ, t2a)]` with `L = S Tᵀ / τ`.
fn symmetric_loss(s: &Matrix, t: &Matrix, tau: f64, a2t: &Matrix, t2a: &Matrix) -> LossOutput {
    let mut logits = s.matmul_t(t);
    logits.scale(1.0 / tau);
    let (va, mut ga) = soft_ce_with_grad(&logits, a2t);
    let (vb, gb) = soft_ce_with_grad(&logits.transpose(), t2a);

    // G = ½ (Ga + Gbᵀ), gradient w.r.t. the scaled logits.
    let gb_t = gb.transpose();
    for (a, b) in ga.as_mut_slice().iter_mut().zip(gb_t.as_slice()) {
        *a = 0.5 * (*a + b);
    }
    let g = ga;

    let d_log_tau = -g
        .as_slice()
        .iter()
        .zip(logits.as_slice())
        .map(|(gij, lij)| gij * lij)
        .sum::<f64>();
    let mut d_speech = g.matmul(t);
    d_speech.scale(1.0 / tau);
    let mut d_text = g.t_matmul(s);
    d_text.scale(1.0 / tau);

    LossOutput {
        value: 0.5 * (va + vb),
        d_speech,
        d_text,
        d_log_tau,
    }
}

/// Symmetric InfoNCE over `n` matched (speech, caption) pairs.
pub fn stage1_loss(s: &Matrix, t: &Matrix, tau: f64) -> Result<LossOutput> {
    check_inputs(s, t, tau)?;
    if s.rows() != t.rows() {
        return Err(LossError::Shape(format!(
            "speech rows {} vs text rows {}",
            s.rows(),
            t.rows()
        )));
    }
    let eye = Matrix::identity(s.rows());
    Ok(symmetric_loss(s, t, tau, &eye, &eye))
}

/// Multi-positive soft-target InfoNCE. `t` stacks the first captions of all
/// clips followed by the second captions.
pub fn stage2_loss(s: &Matrix, t: &Matrix, tau: f64, lambda: f64) -> Result<LossOutput> {
    check_inputs(s, t, tau)?;
    let n = s.rows();
    if t.rows() != 2 * n {
        return Err(LossError::Shape(format!(
            "text rows {} != 2 x speech rows {}",
            t.rows(),
            n
        )));
    }
    let d = soft_targets(n, lambda)?;
    let d_prime = t2a_targets(n);
    Ok(symmetric_loss(s, t, tau, d.matrix(), &d_prime))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::normalize_rows;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_unit(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut m = Matrix::from_vec(rows, cols, data);
        normalize_rows(&mut m);
        m
    }

    #[test]
    fn single_pair_stage1_is_zero() {
        let s = Matrix::from_rows(&[vec![1.0, 0.0]]);
        let out = stage1_loss(&s, &s, 0.07).unwrap();
        assert_eq!(out.value, 0.0);
    }

    #[test]
    fn orthonormal_matched_pairs_closed_form() {
        let s = Matrix::identity(2);
        let out = stage1_loss(&s, &s, 1.0).unwrap();
        let want = (1.0 + (-1.0f64).exp()).ln();
        assert!((out.value - want).abs() < 1e-12);
        assert!((want - 0.313262).abs() < 1e-6);
    }

    #[test]
    fn stage2_duplicate_positive_closed_form() {
        let s = Matrix::from_rows(&[vec![0.0, 1.0]]);
        let t = s.vstack(&s);
        let out = stage2_loss(&s, &t, 1.0, 0.5).unwrap();
        assert!((out.value - 0.5 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn soft_targets_layout() {
        let d = soft_targets(2, 0.5).unwrap();
        assert_eq!(d.matrix().row(0), &[0.5, 0.0, 0.5, 0.0]);
        assert_eq!(d.matrix().row(1), &[0.0, 0.5, 0.0, 0.5]);
        let hard = soft_targets(3, 1.0).unwrap();
        for i in 0..3 {
            for j in 0..6 {
                assert_eq!(hard.matrix()[(i, j)], if i == j { 1.0 } else { 0.0 });
            }
        }
        assert!(matches!(
            soft_targets(2, 1.5),
            Err(LossError::LambdaOutOfRange(_))
        ));
    }

    #[test]
    fn t2a_layout() {
        let m = t2a_targets(2);
        let picks: Vec<usize> = m
            .row_iter()
            .map(|r| r.iter().position(|&v| v == 1.0).unwrap())
            .collect();
        assert_eq!(picks, vec![0, 1, 0, 1]);
        assert_eq!(m.column_sums(), vec![2.0, 2.0]);
        assert_eq!(t2a_targets(1).as_slice(), &[1.0, 1.0]);
    }

    #[test]
    fn uniform_logits_give_log_c() {
        let logits = Matrix::from_vec(3, 5, vec![0.7; 15]);
        let mut t = Matrix::zeros(3, 5);
        t[(0, 0)] = 1.0;
        t[(1, 2)] = 0.4;
        t[(1, 4)] = 0.6;
        t[(2, 1)] = 1.0;
        let v = soft_cross_entropy(&logits, &t).unwrap();
        assert!((v - 5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn confident_margin_drives_loss_to_zero() {
        let logits = Matrix::from_rows(&[vec![10.0, 0.0]]);
        let t = Matrix::from_rows(&[vec![1.0, 0.0]]);
        let v = soft_cross_entropy(&logits, &t).unwrap();
        assert!(v < 1e-4, "{v}");
    }

    #[test]
    fn cross_entropy_bounded_below_by_target_entropy() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let logits = Matrix::from_vec(2, 4, (0..8).map(|_| rng.random_range(-3.0..3.0)).collect());
            let mut t = Matrix::from_vec(2, 4, (0..8).map(|_| rng.random_range(0.0..1.0)).collect());
            for i in 0..2 {
                let s: f64 = t.row(i).iter().sum();
                t.row_mut(i).iter_mut().for_each(|v| *v /= s);
            }
            let h: f64 = t
                .as_slice()
                .iter()
                .filter(|&&p| p > 0.0)
                .map(|&p| -p * p.ln())
                .sum::<f64>()
                / 2.0;
            assert!(soft_cross_entropy(&logits, &t).unwrap() >= h - 1e-12);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let s = Matrix::from_rows(&[vec![2.0, 0.0]]);
        assert!(matches!(
            stage1_loss(&s, &s, 1.0),
            Err(LossError::NonUnitRows { which: "speech", .. })
        ));
        let u = Matrix::identity(2);
        assert!(matches!(
            stage1_loss(&u, &u, 0.0),
            Err(LossError::InvalidTemperature(_))
        ));
        assert!(matches!(stage2_loss(&u, &u, 1.0, 0.5), Err(LossError::Shape(_))));
        let bad = Matrix::from_rows(&[vec![0.5, 0.4]]);
        assert!(matches!(
            soft_cross_entropy(&Matrix::zeros(1, 2), &bad),
            Err(LossError::NonStochasticTargets { row: 0, .. })
        ));
    }

    #[test]
    fn swapping_positives_at_half_lambda_is_symmetric() {
        let s = random_unit(5, 8, 1);
        let t = random_unit(10, 8, 2);
        let (a, b) = t.split_rows(5);
        let v1 = stage2_loss(&s, &a.vstack(&b), 0.2, 0.5).unwrap().value;
        let v2 = stage2_loss(&s, &b.vstack(&a), 0.2, 0.5).unwrap().value;
        assert!((v1 - v2).abs() < 1e-12);
    }

    #[test]
    fn high_temperature_limits() {
        let s = random_unit(6, 8, 3);
        let t = random_unit(6, 8, 4);
        let v = stage1_loss(&s, &t, 1e6).unwrap().value;
        assert!((v - 6f64.ln()).abs() < 1e-3);
    }
}
