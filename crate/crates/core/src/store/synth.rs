//! Desk-scale synthetic benchmark.
//!
//! Every cluster is a speaking style with a random unit direction in each
//! modality. A clip draws a latent `xi ~ N(0, I_m)` that both of its
//! modalities see through fixed orthonormal embeddings, so clip identity is
//! recoverable across modalities while the cluster direction carries style:
//!
//! ```text
//! speech      = a_k + sigma * Qs xi + sigma * view_noise * nu
//! fine cap    = b_k + sigma * Qt xi + sigma * view_noise * nu
//! global cap  = g_k + sigma * global_specificity * Qt xi + sigma * view_noise * nu
//! ```
//!
//! `g_k` is the smoothed direction: `b_k` blended with its two cyclic
//! neighbours and offset by a register vector shared by all global captions.
//! With `sigma = 0` every feature of a cluster is identical.
//!
//! After the clip rows, one noise-free prompt row per cluster (`g_k`) is
//! appended to the text block for zero-shot evaluation.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Dataset, EmbeddingMatrix, PairedSample, Result, StoreError};

pub const CLUSTER_TAG: &str = "cluster";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_clusters: usize,
    pub clips_per_cluster: usize,
    pub speech_dim: usize,
    pub text_dim: usize,
    pub noise_sigma: f64,
    /// Fine-grained captions per clip.
    pub captions_per_clip: usize,
    pub global_captions_per_clip: usize,
    pub latent_dim: usize,
    /// Per-view noise, as a multiple of `noise_sigma`.
    pub view_noise: f64,
    /// Share of the clip latent that survives into global captions.
    pub global_specificity: f64,
    /// Weight of the neighbouring clusters in the global direction.
    pub global_smoothing: f64,
    /// Norm of the register offset shared by all global captions.
    pub global_register: f64,
    /// Append one prompt row per cluster.
    pub prompts: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_clusters: 32,
            clips_per_cluster: 8,
            speech_dim: 48,
            text_dim: 40,
            noise_sigma: 0.3,
            captions_per_clip: 2,
            global_captions_per_clip: 1,
            latent_dim: 16,
            view_noise: 0.2,
            global_specificity: 0.5,
            global_smoothing: 0.5,
            global_register: 0.5,
            prompts: true,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_clusters", self.n_clusters),
            ("clips_per_cluster", self.clips_per_cluster),
            ("speech_dim", self.speech_dim),
            ("text_dim", self.text_dim),
            ("captions_per_clip", self.captions_per_clip),
            ("latent_dim", self.latent_dim),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(StoreError::InvalidConfig(format!("{name} must be >= 1")));
            }
        }
        let nonneg = [
            ("noise_sigma", self.noise_sigma),
            ("view_noise", self.view_noise),
            ("global_register", self.global_register),
        ];
        for (name, v) in nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return Err(StoreError::InvalidConfig(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        for (name, v) in [
            ("global_specificity", self.global_specificity),
            ("global_smoothing", self.global_smoothing),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(StoreError::InvalidConfig(format!(
                    "{name} must lie in [0, 1], got {v}"
                )));
            }
        }
        Ok(())
    }
}

pub fn cluster_name(k: usize) -> String {
    format!("c{k:02}")
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn unit(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    loop {
        let mut v = gaussian(rng, n);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|x| *x /= norm);
            return v;
        }
    }
}

/// `dim x m` matrix with orthonormal columns, stored as `m` column vectors.
fn orthonormal_columns(rng: &mut ChaCha8Rng, dim: usize, m: usize) -> Vec<Vec<f64>> {
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(m);
    while cols.len() < m {
        let mut v = gaussian(rng, dim);
        for c in &cols {
            let p: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(c).for_each(|(a, b)| *a -= p * b);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            v.iter_mut().for_each(|x| *x /= norm);
            cols.push(v);
        }
    }
    cols
}

fn embed(cols: &[Vec<f64>], latent: &[f64], scale: f64, out: &mut [f64]) {
    for (c, &z) in cols.iter().zip(latent) {
        for (o, &q) in out.iter_mut().zip(c) {
            *o += scale * z * q;
        }
    }
}

fn push_f32(dst: &mut Vec<f32>, v: &[f64]) {
    dst.extend(v.iter().map(|&x| x as f32));
}

pub fn generate_synthetic(cfg: &SynthConfig, seed: u64) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (ds, dt, k_total) = (cfg.speech_dim, cfg.text_dim, cfg.n_clusters);
    let m = cfg.latent_dim.min(ds).min(dt);
    let sigma = cfg.noise_sigma;
    let view_sigma = sigma * cfg.view_noise;

    let speech_dirs: Vec<Vec<f64>> = (0..k_total).map(|_| unit(&mut rng, ds)).collect();
    let text_dirs: Vec<Vec<f64>> = (0..k_total).map(|_| unit(&mut rng, dt)).collect();
    let qs = orthonormal_columns(&mut rng, ds, m);
    let qt = orthonormal_columns(&mut rng, dt, m);
    let register = unit(&mut rng, dt);

    let global_dirs: Vec<Vec<f64>> = (0..k_total)
        .map(|k| {
            let prev = &text_dirs[(k + k_total - 1) % k_total];
            let next = &text_dirs[(k + 1) % k_total];
            let a = cfg.global_smoothing;
            let mut g: Vec<f64> = (0..dt)
                .map(|j| (1.0 - a) * text_dirs[k][j] + a * 0.5 * (prev[j] + next[j]))
                .collect();
            let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            g.iter_mut()
                .zip(&register)
                .for_each(|(x, r)| *x = *x / norm + cfg.global_register * r);
            g
        })
        .collect();

    let n_clips = k_total * cfg.clips_per_cluster;
    let per_clip_text = cfg.global_captions_per_clip + cfg.captions_per_clip;
    let mut speech = Vec::with_capacity(n_clips * ds);
    let mut text = Vec::with_capacity((n_clips * per_clip_text + k_total) * dt);
    let mut samples = Vec::with_capacity(n_clips);
    let mut captions = BTreeMap::new();
    let mut text_row = 0usize;

    for k in 0..k_total {
        let style = cluster_name(k);
        for i in 0..cfg.clips_per_cluster {
            let clip_id = format!("{style}_{i:03}");
            let latent = gaussian(&mut rng, m);

            let mut s = speech_dirs[k].clone();
            embed(&qs, &latent, sigma, &mut s);
            for (x, n) in s.iter_mut().zip(gaussian(&mut rng, ds)) {
                *x += view_sigma * n;
            }
            push_f32(&mut speech, &s);

            let mut global_rows = Vec::with_capacity(cfg.global_captions_per_clip);
            for g in 0..cfg.global_captions_per_clip {
                let mut t = global_dirs[k].clone();
                embed(&qt, &latent, sigma * cfg.global_specificity, &mut t);
                for (x, n) in t.iter_mut().zip(gaussian(&mut rng, dt)) {
                    *x += view_sigma * n;
                }
                push_f32(&mut text, &t);
                captions.insert(
                    text_row,
                    format!("{clip_id}: global summary {g} of speaking style {style}"),
                );
                global_rows.push(text_row);
                text_row += 1;
            }

            let mut fine_rows = Vec::with_capacity(cfg.captions_per_clip);
            for j in 0..cfg.captions_per_clip {
                let mut t = text_dirs[k].clone();
                embed(&qt, &latent, sigma, &mut t);
                for (x, n) in t.iter_mut().zip(gaussian(&mut rng, dt)) {
                    *x += view_sigma * n;
                }
                push_f32(&mut text, &t);
                captions.insert(
                    text_row,
                    format!("{clip_id}: fine-grained description {j} of speaking style {style}"),
                );
                fine_rows.push(text_row);
                text_row += 1;
            }

            samples.push(PairedSample {
                clip_id,
                speech_row: samples.len(),
                global_caption_rows: global_rows,
                fine_caption_rows: fine_rows,
                tags: BTreeMap::from([(CLUSTER_TAG.to_string(), style.clone())]),
                transcript: None,
            });
        }
    }

    if cfg.prompts {
        for (k, g) in global_dirs.iter().enumerate() {
            push_f32(&mut text, g);
            captions.insert(text_row, prompt_text(k));
            text_row += 1;
        }
    }

    let speech = EmbeddingMatrix::new(n_clips, ds, speech, "speech")?;
    let text = EmbeddingMatrix::new(text_row, dt, text, "text")?;
    Dataset::new(samples, speech, text, captions)
}

/// Caption text of cluster `k`'s zero-shot prompt row.
pub fn prompt_text(k: usize) -> String {
    format!("A speaker in speaking style {}.", cluster_name(k))
}

/// Zero-shot prompt table (`label -> [prompt text]`) for the prompt rows a
/// config generates; empty when prompts are disabled.
pub fn prompt_table(cfg: &SynthConfig) -> BTreeMap<String, Vec<String>> {
    if !cfg.prompts {
        return BTreeMap::new();
    }
    (0..cfg.n_clusters)
        .map(|k| (cluster_name(k), vec![prompt_text(k)]))
        .collect()
}
