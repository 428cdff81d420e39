//! Pearson r, Spearman rho (average ranks) and Kendall tau-b.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::{EvalError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlations {
    pub pearson: f64,
    pub spearman: f64,
    pub kendall_tau_b: f64,
    pub n: usize,
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(EvalError::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(EvalError::Empty("correlation needs at least 2 points"));
    }
    if !x.iter().chain(y).all(|v| v.is_finite()) {
        return Err(EvalError::NonFinite("correlation input"));
    }
    Ok(())
}

fn cmp(a: f64, b: f64) -> Ordering {
    a.partial_cmp(&b).expect("finite values")
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(EvalError::Degenerate("constant input has no correlation"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks; tied values share the mean of their positions.
pub(crate) fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| cmp(v[a], v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i + 1;
        while j < idx.len() && v[idx[j]] == v[idx[i]] {
            j += 1;
        }
        // Positions i+1 ..= j share their mean.
        let avg = (i + 1 + j) as f64 / 2.0;
        for &k in &idx[i..j] {
            ranks[k] = avg;
        }
        i = j;
    }
    ranks
}

pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    pearson(&average_ranks(x), &average_ranks(y))
}

fn tied_pairs<T: PartialEq>(sorted: impl Iterator<Item = T>) -> u64 {
    let mut total = 0u64;
    let mut run = 0u64;
    let mut prev: Option<T> = None;
    for v in sorted {
        if prev.as_ref() == Some(&v) {
            run += 1;
        } else {
            total += run * run.saturating_sub(1) / 2;
            run = 1;
        }
        prev = Some(v);
    }
    total + run * run.saturating_sub(1) / 2
}

/// Sorts `v` and returns the number of strict inversions.
fn merge_count(v: &mut [f64], buf: &mut Vec<f64>) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = merge_count(&mut v[..mid], buf) + merge_count(&mut v[mid..], buf);
    buf.clear();
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if v[j] < v[i] {
            swaps += (mid - i) as u64;
            buf.push(v[j]);
            j += 1;
        } else {
            buf.push(v[i]);
            i += 1;
        }
    }
    buf.extend_from_slice(&v[i..mid]);
    buf.extend_from_slice(&v[j..n]);
    v.copy_from_slice(buf);
    swaps
}

/// Tie-corrected Kendall correlation in `O(n log n)` (Knight's method).
pub fn kendall_tau_b(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    let n = x.len() as u64;
    let n0 = n * (n - 1) / 2;

    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| cmp(x[a], x[b]).then(cmp(y[a], y[b])));
    let n1 = tied_pairs(idx.iter().map(|&i| x[i]));
    let n3 = tied_pairs(idx.iter().map(|&i| (x[i], y[i])));

    let mut ys: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
    let mut buf = Vec::with_capacity(ys.len());
    let swaps = merge_count(&mut ys, &mut buf);
    let n2 = tied_pairs(ys.iter().copied());

    if n1 == n0 || n2 == n0 {
        return Err(EvalError::Degenerate("constant input has no correlation"));
    }
    let s = n0 as i128 - n1 as i128 - n2 as i128 + n3 as i128 - 2 * swaps as i128;
    let denom = ((n0 - n1) as f64).sqrt() * ((n0 - n2) as f64).sqrt();
    Ok((s as f64 / denom).clamp(-1.0, 1.0))
}

pub fn correlations(x: &[f64], y: &[f64]) -> Result<Correlations> {
    Ok(Correlations {
        pearson: pearson(x, y)?,
        spearman: spearman(x, y)?,
        kendall_tau_b: kendall_tau_b(x, y)?,
        n: x.len(),
    })
}
