//! Brute-force reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap};

use clsp::linalg::Matrix;
use rand::Rng;

/// Rank of `target` after a full stable sort by descending score.
pub fn sorted_rank(scores: &[f64], target: usize) -> usize {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    order.iter().position(|&j| j == target).unwrap() + 1
}

/// `(R@1, R@5, R@10, mAP@10)` for single-relevant queries.
pub fn retrieval_oracle(rows: &[Vec<f64>], gt: &[usize]) -> (f64, f64, f64, f64) {
    let n = rows.len() as f64;
    let ranks: Vec<usize> = rows.iter().zip(gt).map(|(r, &g)| sorted_rank(r, g)).collect();
    let within = |k: usize| ranks.iter().filter(|&&r| r <= k).count() as f64 / n;
    let ap: f64 = ranks
        .iter()
        .map(|&r| if r <= 10 { 1.0 / r as f64 } else { 0.0 })
        .sum();
    (within(1), within(5), within(10), ap / n)
}

/// Label with the highest max-pooled prompt score; ties go to the label
/// whose best prompt comes first.
pub fn zero_shot_oracle(speech: &Matrix, prompts: &Matrix, labels: &[String]) -> Vec<String> {
    speech
        .row_iter()
        .map(|s| {
            let mut best: HashMap<&str, (f64, usize)> = HashMap::new();
            for (j, p) in prompts.row_iter().enumerate() {
                let v: f64 = s.iter().zip(p).map(|(a, b)| a * b).sum();
                let e = best.entry(labels[j].as_str()).or_insert((v, j));
                if v > e.0 {
                    *e = (v, j);
                }
            }
            let mut classes: Vec<(&str, (f64, usize))> = best.into_iter().collect();
            classes.sort_by(|a, b| b.1 .0.partial_cmp(&a.1 .0).unwrap().then(a.1 .1.cmp(&b.1 .1)));
            classes[0].0.to_string()
        })
        .collect()
}

pub fn wa_ua_oracle(preds: &[String], golds: &[String]) -> (f64, f64) {
    let mut per: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for (p, g) in preds.iter().zip(golds) {
        let e = per.entry(g.as_str()).or_default();
        e.1 += 1;
        if p == g {
            e.0 += 1;
        }
    }
    let hits: usize = per.values().map(|v| v.0).sum();
    let ua = per.values().map(|&(h, t)| h as f64 / t as f64).sum::<f64>() / per.len() as f64;
    (hits as f64 / golds.len() as f64, ua)
}

pub fn pearson_oracle(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

/// Mid-ranks by counting, O(n^2).
pub fn midranks(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|&a| {
            let below = v.iter().filter(|&&b| b < a).count() as f64;
            let equal = v.iter().filter(|&&b| b == a).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect()
}

pub fn spearman_oracle(x: &[f64], y: &[f64]) -> f64 {
    pearson_oracle(&midranks(x), &midranks(y))
}

/// Tau-b by enumerating all pairs.
pub fn kendall_oracle(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len();
    let (mut c, mut d, mut tx, mut ty) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let sx = (x[i] - x[j]).signum() * f64::from(x[i] != x[j]);
            let sy = (y[i] - y[j]).signum() * f64::from(y[i] != y[j]);
            if sx == 0.0 {
                tx += 1;
            }
            if sy == 0.0 {
                ty += 1;
            }
            if sx * sy > 0.0 {
                c += 1;
            } else if sx * sy < 0.0 {
                d += 1;
            }
        }
    }
    let n0 = (n * (n - 1) / 2) as i64;
    (c - d) as f64 / (((n0 - tx) * (n0 - ty)) as f64).sqrt()
}

/// Values drawn from a small grid half of the time so ties are common.
pub fn tie_prone(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let coarse = rng.random_bool(0.5);
    (0..n)
        .map(|_| {
            if coarse {
                rng.random_range(0..5) as f64 * 0.25
            } else {
                rng.random_range(-1.0..1.0)
            }
        })
        .collect()
}

pub fn unit_rows(rng: &mut impl Rng, rows: usize, dim: usize) -> Matrix {
    let mut m = Matrix::zeros(rows, dim);
    for i in 0..rows {
        let r = m.row_mut(i);
        for v in r.iter_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        let n = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        r.iter_mut().for_each(|v| *v /= n);
    }
    m
}
