//! Data model for precomputed speech/caption features.
//!
//! A [`Dataset`] owns two feature blocks (speech rows and caption rows) and a
//! list of [`PairedSample`]s that reference rows by index. Everything is
//! validated on construction and immutable afterwards.

mod batch;
mod manifest;
mod synth;

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::linalg::Matrix;

pub use batch::{make_batches, Batch, BatchPlan, BatchStream};
pub use manifest::{load_manifest, write_manifest, MANIFEST_VERSION};
pub use synth::{cluster_name, generate_synthetic, prompt_table, prompt_text, SynthConfig, CLUSTER_TAG};

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("missing manifest file {0}")]
    MissingFile(PathBuf),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed json in {path}: {message}")]
    Json { path: PathBuf, message: String },
    #[error("unsupported manifest version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("{blob}: dimension mismatch at row {row}: declared {rows} rows x {dim} values, blob holds {values} values")]
    DimensionMismatch {
        blob: String,
        row: usize,
        rows: usize,
        dim: usize,
        values: usize,
    },
    #[error("{blob}: invalid header: {reason}")]
    Header { blob: String, reason: String },
    #[error("{blob}: non-finite value at row {row}, column {col}")]
    NonFinite { blob: String, row: usize, col: usize },
    #[error("clip {clip_id}: {field} index {index} out of range (rows = {rows})")]
    DanglingIndex {
        clip_id: String,
        field: &'static str,
        index: usize,
        rows: usize,
    },
    #[error("clip {clip_id}: duplicate {field} index {index}")]
    DuplicateIndex {
        clip_id: String,
        field: &'static str,
        index: usize,
    },
    #[error("duplicate clip_id {0}")]
    DuplicateClipId(String),
    #[error("caption record {index}: {reason}")]
    CaptionRecord { index: usize, reason: String },
    #[error("invalid synthetic config: {0}")]
    InvalidConfig(String),
    #[error("batch_size must be >= 2, got {0}")]
    BatchSizeTooSmall(usize),
    #[error("too few {task} eligible samples: {eligible} < batch size {required}")]
    TooFewEligible {
        task: TaskKind,
        eligible: usize,
        required: usize,
    },
}

pub type Result<T, E = StoreError> = std::result::Result<T, E>;

/// Dense block of backbone features, stored at 32-bit.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    rows: usize,
    dim: usize,
    values: Vec<f32>,
}

impl EmbeddingMatrix {
    /// Checks shape and finiteness. `blob` names the block in error messages.
    pub fn new(rows: usize, dim: usize, values: Vec<f32>, blob: &str) -> Result<Self> {
        if dim == 0 {
            return Err(StoreError::Header {
                blob: blob.to_string(),
                reason: "dim must be > 0".to_string(),
            });
        }
        if values.len() != rows * dim {
            return Err(StoreError::DimensionMismatch {
                blob: blob.to_string(),
                row: values.len() / dim,
                rows,
                dim,
                values: values.len(),
            });
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(StoreError::NonFinite {
                blob: blob.to_string(),
                row: k / dim,
                col: k % dim,
            });
        }
        Ok(Self { rows, dim, values })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    /// Widens the selected rows to a 64-bit compute block.
    pub fn gather(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            data.extend(self.row(i).iter().map(|&v| f64::from(v)));
        }
        Matrix::from_vec(idx.len(), self.dim, data)
    }

    pub fn to_matrix(&self) -> Matrix {
        Matrix::from_vec(
            self.rows,
            self.dim,
            self.values.iter().map(|&v| f64::from(v)).collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairedSample {
    pub clip_id: String,
    pub speech_row: usize,
    #[serde(default)]
    pub global_caption_rows: Vec<usize>,
    #[serde(default)]
    pub fine_caption_rows: Vec<usize>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub tags: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transcript: Option<String>,
}

impl PairedSample {
    pub fn is_eligible(&self, task: TaskKind) -> bool {
        match task {
            TaskKind::Stage1 => !self.fine_caption_rows.is_empty(),
            TaskKind::Task1 => {
                !self.fine_caption_rows.is_empty() && !self.global_caption_rows.is_empty()
            }
            TaskKind::Task2 => self.fine_caption_rows.len() >= 2,
        }
    }
}

/// Which pairing a batch carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    /// Speech with one fine-grained caption.
    Stage1,
    /// Speech with one global and one fine-grained caption.
    Task1,
    /// Speech with two distinct fine-grained captions.
    Task2,
}

impl TaskKind {
    pub(crate) fn code(self) -> u64 {
        match self {
            TaskKind::Stage1 => 1,
            TaskKind::Task1 => 2,
            TaskKind::Task2 => 3,
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskKind::Stage1 => "stage1",
            TaskKind::Task1 => "task1",
            TaskKind::Task2 => "task2",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<PairedSample>,
    speech_features: EmbeddingMatrix,
    text_features: EmbeddingMatrix,
    caption_texts: BTreeMap<usize, String>,
    metadata: Option<serde_json::Value>,
}

impl Dataset {
    pub fn new(
        samples: Vec<PairedSample>,
        speech_features: EmbeddingMatrix,
        text_features: EmbeddingMatrix,
        caption_texts: BTreeMap<usize, String>,
    ) -> Result<Self> {
        let mut seen = HashSet::with_capacity(samples.len());
        for s in &samples {
            if !seen.insert(s.clip_id.as_str()) {
                return Err(StoreError::DuplicateClipId(s.clip_id.clone()));
            }
            if s.speech_row >= speech_features.rows() {
                return Err(StoreError::DanglingIndex {
                    clip_id: s.clip_id.clone(),
                    field: "speech_row",
                    index: s.speech_row,
                    rows: speech_features.rows(),
                });
            }
            check_rows(s, "global_caption_rows", &s.global_caption_rows, &text_features)?;
            check_rows(s, "fine_caption_rows", &s.fine_caption_rows, &text_features)?;
        }
        if let Some((&index, _)) = caption_texts.range(text_features.rows()..).next() {
            return Err(StoreError::CaptionRecord {
                index,
                reason: format!("index beyond text rows ({})", text_features.rows()),
            });
        }
        Ok(Self {
            samples,
            speech_features,
            text_features,
            caption_texts,
            metadata: None,
        })
    }

    pub fn with_metadata(mut self, metadata: Option<serde_json::Value>) -> Self {
        self.metadata = metadata;
        self
    }

    pub fn samples(&self) -> &[PairedSample] {
        &self.samples
    }

    pub fn speech_features(&self) -> &EmbeddingMatrix {
        &self.speech_features
    }

    pub fn text_features(&self) -> &EmbeddingMatrix {
        &self.text_features
    }

    pub fn caption_texts(&self) -> &BTreeMap<usize, String> {
        &self.caption_texts
    }

    pub fn metadata(&self) -> Option<&serde_json::Value> {
        self.metadata.as_ref()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample_by_id(&self, clip_id: &str) -> Option<&PairedSample> {
        self.samples.iter().find(|s| s.clip_id == clip_id)
    }

    /// Indices of samples eligible for `task`, in dataset order.
    pub fn eligible(&self, task: TaskKind) -> Vec<usize> {
        self.samples
            .iter()
            .enumerate()
            .filter(|(_, s)| s.is_eligible(task))
            .map(|(i, _)| i)
            .collect()
    }

    /// A dataset holding only the listed samples; feature blocks are shared
    /// unchanged so row indices stay valid.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            samples: idx.iter().map(|&i| self.samples[i].clone()).collect(),
            speech_features: self.speech_features.clone(),
            text_features: self.text_features.clone(),
            caption_texts: self.caption_texts.clone(),
            metadata: self.metadata.clone(),
        }
    }

    /// Splits sample indices into (train, held-out): within each group of
    /// samples sharing the `group_tag` value, the last `fraction` (rounded,
    /// at least one when the group has two or more clips) is held out.
    /// Samples without the tag form one group.
    pub fn holdout_split(&self, group_tag: &str, fraction: f64) -> (Vec<usize>, Vec<usize>) {
        let mut groups: BTreeMap<Option<&str>, Vec<usize>> = BTreeMap::new();
        for (i, s) in self.samples.iter().enumerate() {
            groups
                .entry(s.tags.get(group_tag).map(String::as_str))
                .or_default()
                .push(i);
        }
        let mut train = Vec::new();
        let mut held = Vec::new();
        for members in groups.values() {
            let n = members.len();
            let mut k = (fraction * n as f64).round() as usize;
            if n >= 2 && fraction > 0.0 {
                k = k.clamp(1, n - 1);
            }
            let k = k.min(n);
            train.extend_from_slice(&members[..n - k]);
            held.extend_from_slice(&members[n - k..]);
        }
        train.sort_unstable();
        held.sort_unstable();
        (train, held)
    }
}

fn check_rows(
    s: &PairedSample,
    field: &'static str,
    rows: &[usize],
    text: &EmbeddingMatrix,
) -> Result<()> {
    let mut seen = HashSet::with_capacity(rows.len());
    for &r in rows {
        if r >= text.rows() {
            return Err(StoreError::DanglingIndex {
                clip_id: s.clip_id.clone(),
                field,
                index: r,
                rows: text.rows(),
            });
        }
        if !seen.insert(r) {
            return Err(StoreError::DuplicateIndex {
                clip_id: s.clip_id.clone(),
                field,
                index: r,
            });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub n_samples: usize,
    pub n_stage1_eligible: usize,
    pub n_task1_eligible: usize,
    pub n_task2_eligible: usize,
    pub speech_rows: usize,
    pub speech_dim: usize,
    pub text_rows: usize,
    pub text_dim: usize,
    pub warnings: Vec<String>,
}

/// Summarizes task eligibility and flags soft problems. Never fails.
pub fn validate_dataset(d: &Dataset) -> ValidationReport {
    let count = |t| d.samples.iter().filter(|s| s.is_eligible(t)).count();
    let mut warnings = Vec::new();

    let mut speech_used = vec![false; d.speech_features.rows()];
    let mut text_used = vec![false; d.text_features.rows()];
    for s in &d.samples {
        speech_used[s.speech_row] = true;
        for &r in s.global_caption_rows.iter().chain(&s.fine_caption_rows) {
            text_used[r] = true;
        }
        if s.fine_caption_rows.is_empty() {
            warnings.push(format!("clip {}: no fine-grained captions", s.clip_id));
        }
    }
    let unused_speech = speech_used.iter().filter(|u| !**u).count();
    if unused_speech > 0 {
        warnings.push(format!("{unused_speech} speech rows are not referenced"));
    }
    let unused_text = text_used.iter().filter(|u| !**u).count();
    if unused_text > 0 {
        warnings.push(format!(
            "{unused_text} text rows are not referenced by any sample"
        ));
    }
    let untexted = (0..d.text_features.rows())
        .filter(|i| text_used[*i] && !d.caption_texts.contains_key(i))
        .count();
    if untexted > 0 {
        warnings.push(format!("{untexted} referenced caption rows have no text"));
    }

    ValidationReport {
        n_samples: d.samples.len(),
        n_stage1_eligible: count(TaskKind::Stage1),
        n_task1_eligible: count(TaskKind::Task1),
        n_task2_eligible: count(TaskKind::Task2),
        speech_rows: d.speech_features.rows(),
        speech_dim: d.speech_features.dim(),
        text_rows: d.text_features.rows(),
        text_dim: d.text_features.dim(),
        warnings,
    }
}
