//! Trainable tower tops: one two-layer MLP head per modality, row-wise ℓ2
//! normalization, and a shared temperature stored as `log τ`.

mod checkpoint;
mod gradcheck;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::linalg::{norm, Matrix};
use crate::loss::{self, LossError};
use crate::store::Batch;

pub use checkpoint::{
    load_checkpoint, load_train_state, save_checkpoint, save_train_state, ModelDims,
    CHECKPOINT_VERSION,
};
pub use gradcheck::{finite_diff_check, gradcheck_suite, relative_error, GradCheckReport};

/// Guard against dividing by a vanishing pre-norm vector.
pub const NORM_EPS: f64 = 1e-12;
pub const TAU_MIN: f64 = 5e-3;
pub const TAU_MAX: f64 = 100.0;
pub const TAU_INIT: f64 = 0.07;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid dimensions: {0}")]
    InvalidDims(String),
    #[error("shape mismatch in {what}: expected {expected}, found {found}")]
    Shape {
        what: &'static str,
        expected: String,
        found: String,
    },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("finite-difference step must be finite and > 0, got {0}")]
    InvalidStep(f64),
    #[error("batch is missing its second caption block (required by the stage-2 loss)")]
    MissingSecondCaption,
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error("checkpoint {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint: bad magic bytes")]
    BadMagic,
    #[error("checkpoint version {found} unsupported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint {what} mismatch: expected {expected}, found {found}")]
    DimMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("checkpoint truncated or malformed: {0}")]
    Malformed(String),
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionHead {
    /// `d_in x hidden`
    pub w1: Matrix,
    pub b1: Vec<f64>,
    /// `hidden x d_out`
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

/// Intermediates kept from the forward pass for backprop.
#[derive(Debug, Clone)]
pub struct HeadCache {
    x: Matrix,
    pre: Matrix,
    act: Matrix,
    norms: Vec<f64>,
    /// Unit-norm output rows.
    pub out: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadGrads {
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

fn glorot(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Matrix {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.random_range(-a..a))
        .collect();
    Matrix::from_vec(fan_in, fan_out, data)
}

impl ProjectionHead {
    pub fn init(d_in: usize, hidden: usize, d_out: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            w1: glorot(rng, d_in, hidden),
            b1: vec![0.0; hidden],
            w2: glorot(rng, hidden, d_out),
            b2: vec![0.0; d_out],
        }
    }

    pub fn d_in(&self) -> usize {
        self.w1.rows()
    }

    pub fn hidden(&self) -> usize {
        self.w1.cols()
    }

    pub fn d_out(&self) -> usize {
        self.w2.cols()
    }

    pub fn param_count(&self) -> usize {
        self.w1.as_slice().len() + self.b1.len() + self.w2.as_slice().len() + self.b2.len()
    }

    pub fn is_finite(&self) -> bool {
        self.w1.is_finite()
            && self.w2.is_finite()
            && self.b1.iter().chain(&self.b2).all(|v| v.is_finite())
    }

    pub fn forward(&self, x: &Matrix) -> Result<HeadCache> {
        if x.cols() != self.d_in() {
            return Err(ModelError::Shape {
                what: "projection input",
                expected: format!("{} columns", self.d_in()),
                found: format!("{} columns", x.cols()),
            });
        }
        if !x.is_finite() {
            return Err(ModelError::NonFinite("projection input"));
        }
        let mut pre = x.matmul(&self.w1);
        for r in 0..pre.rows() {
            pre.row_mut(r)
                .iter_mut()
                .zip(&self.b1)
                .for_each(|(v, b)| *v += b);
        }
        let mut act = pre.clone();
        act.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
        let mut out = act.matmul(&self.w2);
        let mut norms = Vec::with_capacity(out.rows());
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            row.iter_mut().zip(&self.b2).for_each(|(v, b)| *v += b);
            let n = norm(row);
            let denom = n.max(NORM_EPS);
            row.iter_mut().for_each(|v| *v /= denom);
            norms.push(n);
        }
        Ok(HeadCache {
            x: x.clone(),
            pre,
            act,
            norms,
            out,
        })
    }

    /// Unit-norm projections of the rows of `x`.
    pub fn project(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.forward(x)?.out)
    }

    /// Gradients of `Σ_ij upstream_ij · out_ij` w.r.t. parameters and input.
    pub fn backward(&self, cache: &HeadCache, upstream: &Matrix) -> Result<(HeadGrads, Matrix)> {
        let (n, d) = (cache.out.rows(), cache.out.cols());
        if (upstream.rows(), upstream.cols()) != (n, d) {
            return Err(ModelError::Shape {
                what: "upstream gradient",
                expected: format!("{n}x{d}"),
                found: format!("{}x{}", upstream.rows(), upstream.cols()),
            });
        }
        // Through the normalization: (I - u uᵀ) g / ‖v‖ on the regular
        // branch, g / ε where the norm was clamped.
        let mut d_v = Matrix::zeros(n, d);
        for i in 0..n {
            let g = upstream.row(i);
            let u = cache.out.row(i);
            let nv = cache.norms[i];
            let row = d_v.row_mut(i);
            if nv >= NORM_EPS {
                let proj: f64 = g.iter().zip(u).map(|(a, b)| a * b).sum();
                for k in 0..d {
                    row[k] = (g[k] - proj * u[k]) / nv;
                }
            } else {
                for k in 0..d {
                    row[k] = g[k] / NORM_EPS;
                }
            }
        }
        let w2 = cache.act.t_matmul(&d_v);
        let b2 = d_v.column_sums();
        let mut d_pre = d_v.matmul_t(&self.w2);
        for (g, &p) in d_pre.as_mut_slice().iter_mut().zip(cache.pre.as_slice()) {
            if p <= 0.0 {
                *g = 0.0;
            }
        }
        let w1 = cache.x.t_matmul(&d_pre);
        let b1 = d_pre.column_sums();
        let d_x = d_pre.matmul_t(&self.w1);
        Ok((HeadGrads { w1, b1, w2, b2 }, d_x))
    }

    fn segments(&self) -> [&[f64]; 4] {
        [
            self.w1.as_slice(),
            &self.b1,
            self.w2.as_slice(),
            &self.b2,
        ]
    }

    fn segments_mut(&mut self) -> [&mut [f64]; 4] {
        [
            self.w1.as_mut_slice(),
            &mut self.b1,
            self.w2.as_mut_slice(),
            &mut self.b2,
        ]
    }
}

impl HeadGrads {
    fn segments(&self) -> [&[f64]; 4] {
        [
            self.w1.as_slice(),
            &self.b1,
            self.w2.as_slice(),
            &self.b2,
        ]
    }
}

/// Parameter names in declaration order, matching [`ClspModel::segments`].
pub const SEGMENT_NAMES: [&str; 9] = [
    "speech.w1",
    "speech.b1",
    "speech.w2",
    "speech.b2",
    "text.w1",
    "text.b1",
    "text.w2",
    "text.b2",
    "log_tau",
];

#[derive(Debug, Clone, PartialEq)]
pub struct ClspModel {
    pub speech_head: ProjectionHead,
    pub text_head: ProjectionHead,
    pub log_tau: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub speech: HeadGrads,
    pub text: HeadGrads,
    pub log_tau: f64,
}

impl ModelGrads {
    pub fn segments(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::with_capacity(9);
        out.extend(self.speech.segments());
        out.extend(self.text.segments());
        out.push(std::slice::from_ref(&self.log_tau));
        out
    }
}

/// Which objective a batch is scored with.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossKind {
    Stage1,
    Stage2 { lambda: f64 },
}

/// Seeded Glorot-uniform weights, zero biases, `τ = 0.07`.
pub fn init_model(
    d_in_speech: usize,
    d_in_text: usize,
    hidden: usize,
    d: usize,
    seed: u64,
) -> Result<ClspModel> {
    if d_in_speech == 0 || d_in_text == 0 || hidden == 0 || d == 0 {
        return Err(ModelError::InvalidDims(format!(
            "all dims must be >= 1 (speech {d_in_speech}, text {d_in_text}, hidden {hidden}, d {d})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let speech_head = ProjectionHead::init(d_in_speech, hidden, d, &mut rng);
    let text_head = ProjectionHead::init(d_in_text, hidden, d, &mut rng);
    Ok(ClspModel {
        speech_head,
        text_head,
        log_tau: TAU_INIT.ln(),
    })
}

impl ClspModel {
    pub fn tau(&self) -> f64 {
        self.log_tau.exp()
    }

    pub fn embed_dim(&self) -> usize {
        self.speech_head.d_out()
    }

    pub fn param_count(&self) -> usize {
        self.speech_head.param_count() + self.text_head.param_count() + 1
    }

    pub fn is_finite(&self) -> bool {
        self.speech_head.is_finite() && self.text_head.is_finite() && self.log_tau.is_finite()
    }

    /// Keeps `τ` inside `[TAU_MIN, TAU_MAX]`.
    pub fn clamp_temperature(&mut self) {
        self.log_tau = self.log_tau.clamp(TAU_MIN.ln(), TAU_MAX.ln());
    }

    pub fn segments(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::with_capacity(9);
        out.extend(self.speech_head.segments());
        out.extend(self.text_head.segments());
        out.push(std::slice::from_ref(&self.log_tau));
        out
    }

    pub fn segments_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::with_capacity(9);
        out.extend(self.speech_head.segments_mut());
        out.extend(self.text_head.segments_mut());
        out.push(std::slice::from_mut(&mut self.log_tau));
        out
    }

    pub fn embed_speech(&self, x: &Matrix) -> Result<Matrix> {
        self.speech_head.project(x)
    }

    pub fn embed_text(&self, x: &Matrix) -> Result<Matrix> {
        self.text_head.project(x)
    }

    /// Loss value and full parameter gradients on raw feature blocks.
    /// `text` holds `n` rows for stage 1 and `2n` stacked rows for stage 2.
    pub fn objective(
        &self,
        speech: &Matrix,
        text: &Matrix,
        kind: LossKind,
    ) -> Result<(f64, ModelGrads)> {
        let sc = self.speech_head.forward(speech)?;
        let tc = self.text_head.forward(text)?;
        let tau = self.tau();
        let out = match kind {
            LossKind::Stage1 => loss::stage1_loss(&sc.out, &tc.out, tau)?,
            LossKind::Stage2 { lambda } => loss::stage2_loss(&sc.out, &tc.out, tau, lambda)?,
        };
        let (speech_grads, _) = self.speech_head.backward(&sc, &out.d_speech)?;
        let (text_grads, _) = self.text_head.backward(&tc, &out.d_text)?;
        Ok((
            out.value,
            ModelGrads {
                speech: speech_grads,
                text: text_grads,
                log_tau: out.d_log_tau,
            },
        ))
    }

    /// Loss value only.
    pub fn loss_value(&self, speech: &Matrix, text: &Matrix, kind: LossKind) -> Result<f64> {
        let s = self.embed_speech(speech)?;
        let t = self.embed_text(text)?;
        let tau = self.tau();
        Ok(match kind {
            LossKind::Stage1 => loss::stage1_loss(&s, &t, tau)?.value,
            LossKind::Stage2 { lambda } => loss::stage2_loss(&s, &t, tau, lambda)?.value,
        })
    }

    /// Text block a batch contributes under `kind`.
    pub fn batch_text(batch: &Batch, kind: LossKind) -> Result<Matrix> {
        match kind {
            LossKind::Stage1 => Ok(batch.text_a.clone()),
            LossKind::Stage2 { .. } => {
                let b = batch.text_b.as_ref().ok_or(ModelError::MissingSecondCaption)?;
                Ok(batch.text_a.vstack(b))
            }
        }
    }

    pub fn batch_objective(&self, batch: &Batch, kind: LossKind) -> Result<(f64, ModelGrads)> {
        let text = Self::batch_text(batch, kind)?;
        self.objective(&batch.speech, &text, kind)
    }
}
