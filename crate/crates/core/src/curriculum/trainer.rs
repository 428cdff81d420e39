//! Stage-one and stage-two training loops.
//!
//! Every random choice is a pure function of `cfg.seed` and the step index:
//! batches come from seekable [`BatchStream`]s and the stage-two task draw
//! uses its own ChaCha stream consuming one value per step. Resuming from a
//! saved [`TrainState`] replays the task draws to reposition the streams, so
//! an interrupted run continues exactly as an uninterrupted one.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::optim::{optimizer_step, AdamState};
use super::scheduler::{sample_task, task_prob, SchedulerCfg};
use super::{Result, TrainError};
use crate::model::{ClspModel, LossKind};
use crate::store::{BatchStream, Dataset, TaskKind};

/// Stream id of the task sampler; batch streams use the task code in the top
/// byte, so this cannot collide with them.
const TASK_STREAM: u64 = 0x7a5c_0000_0000_0000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// `lr * (1 - t / steps)`.
    LinearDecay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageCfg {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    #[serde(default)]
    pub lr_schedule: LrSchedule,
    #[serde(default)]
    pub seed: u64,
    /// Stage two only.
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    /// Stage two only.
    #[serde(default)]
    pub scheduler: SchedulerCfg,
}

fn default_lambda() -> f64 {
    0.5
}

impl StageCfg {
    pub fn stage1_default() -> Self {
        Self {
            steps: 2000,
            batch_size: 64,
            learning_rate: 1e-3,
            lr_schedule: LrSchedule::Constant,
            seed: 0,
            lambda: default_lambda(),
            scheduler: SchedulerCfg::default(),
        }
    }

    pub fn stage2_default() -> Self {
        Self {
            steps: 500,
            learning_rate: 1e-4,
            ..Self::stage1_default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(TrainError::Config("steps must be >= 1".into()));
        }
        if self.batch_size < 2 {
            return Err(TrainError::Config(format!(
                "batch_size must be >= 2, got {}",
                self.batch_size
            )));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(TrainError::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(TrainError::Config(format!(
                "lambda must be in [0, 1], got {}",
                self.lambda
            )));
        }
        self.scheduler.validate()
    }

    pub fn lr_at(&self, t: usize) -> f64 {
        match self.lr_schedule {
            LrSchedule::Constant => self.learning_rate,
            LrSchedule::LinearDecay => {
                self.learning_rate * (1.0 - t as f64 / self.steps as f64)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    #[serde(rename = "1")]
    One,
    #[serde(rename = "2")]
    Two,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub step: usize,
    pub stage: u8,
    pub task: TaskKind,
    pub loss: f64,
    /// Temperature used for this step's loss.
    pub tau: f64,
    pub p_t: Option<f64>,
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<TrainRecord>,
}

impl TrainLog {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn extend(&mut self, other: TrainLog) {
        self.records.extend(other.records);
    }

    /// Mean loss over records `range` (clamped to the log length).
    pub fn mean_loss(&self, range: std::ops::Range<usize>) -> f64 {
        let hi = range.end.min(self.records.len());
        let lo = range.start.min(hi);
        let slice = &self.records[lo..hi];
        slice.iter().map(|r| r.loss).sum::<f64>() / slice.len().max(1) as f64
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("records serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> serde_json::Result<Self> {
        let records = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<serde_json::Result<_>>()?;
        Ok(Self { records })
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_jsonl()).map_err(|source| TrainError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Everything needed to continue a stage: parameters, optimizer moments and
/// the number of steps already taken.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub model: ClspModel,
    pub optimizer: AdamState,
    pub step: usize,
}

impl TrainState {
    pub fn new(model: ClspModel) -> Self {
        let optimizer = AdamState::new(model.param_count());
        Self {
            model,
            optimizer,
            step: 0,
        }
    }
}

fn check_dims(model: &ClspModel, d: &Dataset) -> Result<()> {
    let dims = model.dims();
    let (ds, dt) = (d.speech_features().dim(), d.text_features().dim());
    if dims.d_in_speech != ds || dims.d_in_text != dt {
        return Err(TrainError::Config(format!(
            "model expects speech/text dims {}/{}, dataset has {ds}/{dt}",
            dims.d_in_speech, dims.d_in_text
        )));
    }
    Ok(())
}

/// Runs `state` forward from `state.step` to `min(until, cfg.steps)` and
/// returns the records of the executed steps. All preconditions are checked
/// before the first update.
pub fn train(
    state: &mut TrainState,
    d: &Dataset,
    cfg: &StageCfg,
    stage: Stage,
    until: Option<usize>,
) -> Result<TrainLog> {
    cfg.validate()?;
    check_dims(&state.model, d)?;
    if state.optimizer.m.len() != state.model.param_count() {
        return Err(TrainError::Config(
            "optimizer state does not match the model".into(),
        ));
    }
    let end = until.unwrap_or(cfg.steps).min(cfg.steps);
    let mut log = TrainLog::default();

    match stage {
        Stage::One => {
            let mut stream = BatchStream::new(d, TaskKind::Stage1, cfg.batch_size, cfg.seed)?;
            stream.seek(state.step);
            while state.step < end {
                let t = state.step;
                let batch = stream.next_batch();
                log.records.push(step_once(state, &batch, LossKind::Stage1, cfg.lr_at(t), 1, None)?);
            }
        }
        Stage::Two => {
            let sched = &cfg.scheduler;
            let needs_task1 = task_prob(sched, 0) > 0.0;
            let needs_task2 = task_prob(sched, cfg.steps - 1) < 1.0;
            let mut task1 = needs_task1
                .then(|| BatchStream::new(d, TaskKind::Task1, cfg.batch_size, cfg.seed))
                .transpose()?;
            let mut task2 = needs_task2
                .then(|| BatchStream::new(d, TaskKind::Task2, cfg.batch_size, cfg.seed))
                .transpose()?;

            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(TASK_STREAM);
            let (mut n1, mut n2) = (0, 0);
            for t in 0..state.step {
                match sample_task(sched, t, &mut rng) {
                    TaskKind::Task1 => n1 += 1,
                    _ => n2 += 1,
                }
            }
            if let Some(s) = task1.as_mut() {
                s.seek(n1);
            }
            if let Some(s) = task2.as_mut() {
                s.seek(n2);
            }

            let kind = LossKind::Stage2 { lambda: cfg.lambda };
            while state.step < end {
                let t = state.step;
                let task = sample_task(sched, t, &mut rng);
                let stream = match task {
                    TaskKind::Task1 => task1.as_mut(),
                    _ => task2.as_mut(),
                }
                .expect("streams exist for every task with nonzero probability");
                let batch = stream.next_batch();
                let p_t = task_prob(sched, t);
                log.records.push(step_once(state, &batch, kind, cfg.lr_at(t), 2, Some(p_t))?);
            }
        }
    }
    Ok(log)
}

fn step_once(
    state: &mut TrainState,
    batch: &crate::store::Batch,
    kind: LossKind,
    lr: f64,
    stage: u8,
    p_t: Option<f64>,
) -> Result<TrainRecord> {
    let t = state.step;
    let tau = state.model.tau();
    let (loss, grads) = state.model.batch_objective(batch, kind)?;
    if !loss.is_finite() {
        return Err(TrainError::NonFiniteLoss { step: t });
    }
    optimizer_step(&mut state.model, &grads, &mut state.optimizer, lr)?;
    state.step += 1;
    Ok(TrainRecord {
        step: t,
        stage,
        task: batch.task(),
        loss,
        tau,
        p_t,
        lr,
    })
}

/// Stage one from a fresh optimizer: symmetric InfoNCE on (speech, fine
/// caption) batches.
pub fn run_stage1(model: ClspModel, d: &Dataset, cfg: &StageCfg) -> Result<(ClspModel, TrainLog)> {
    let mut state = TrainState::new(model);
    let log = train(&mut state, d, cfg, Stage::One, None)?;
    Ok((state.model, log))
}

/// Stage two from a fresh optimizer: multi-positive loss over Task-1 and
/// Task-2 batches chosen by the scheduler.
pub fn run_stage2(model: ClspModel, d: &Dataset, cfg: &StageCfg) -> Result<(ClspModel, TrainLog)> {
    let mut state = TrainState::new(model);
    let log = train(&mut state, d, cfg, Stage::Two, None)?;
    Ok((state.model, log))
}
