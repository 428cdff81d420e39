//! Ablation sweeps over a held-out split.
//!
//! Every configuration of a sweep starts from the same initialization and
//! sees the same split; only the swept axis changes. Stage one is trained
//! once and shared when the axis only affects stage two.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::curriculum::{run_stage1, run_stage2, SchedulerCfg, SchedulerKind, StageCfg, TrainError};
use crate::eval::{evaluate_heldout, EvalError, HeldOutEval};
use crate::model::{init_model, ClspModel};
use crate::store::Dataset;

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum SweepError {
    #[error("invalid sweep spec: {0}")]
    Config(String),
    #[error("configuration {label}: {source}")]
    Train {
        label: String,
        #[source]
        source: TrainError,
    },
    #[error("configuration {label}: {source}")]
    Eval {
        label: String,
        #[source]
        source: EvalError,
    },
}

pub type Result<T, E = SweepError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Lambda,
    Scheduler,
    Stages,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StagePlan {
    Stage1Only,
    Stage2Only,
    Both,
}

impl StagePlan {
    fn label(self) -> &'static str {
        match self {
            StagePlan::Stage1Only => "stage1_only",
            StagePlan::Stage2Only => "stage2_only",
            StagePlan::Both => "both",
        }
    }
}

/// Projection-head shape and initialization seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSpec {
    pub hidden: usize,
    pub d: usize,
    pub seed: u64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            hidden: 128,
            d: 64,
            seed: 1,
        }
    }
}

impl ModelSpec {
    pub fn init(&self, d: &Dataset) -> Result<ClspModel, TrainError> {
        Ok(init_model(
            d.speech_features().dim(),
            d.text_features().dim(),
            self.hidden,
            self.d,
            self.seed,
        )?)
    }
}

/// Held-out split: the last `fraction` of samples within each `tag` group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HoldoutSpec {
    pub tag: String,
    pub fraction: f64,
}

impl Default for HoldoutSpec {
    fn default() -> Self {
        Self {
            tag: "cluster".into(),
            fraction: 0.2,
        }
    }
}

pub fn default_stage1() -> StageCfg {
    StageCfg {
        seed: 1,
        ..StageCfg::stage1_default()
    }
}

pub fn default_stage2() -> StageCfg {
    StageCfg {
        seed: 2,
        scheduler: SchedulerCfg::dynamic(0.95, 0.50, 300),
        ..StageCfg::stage2_default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub axis: Axis,
    /// Numbers for `lambda`, scheduler objects for `scheduler`,
    /// `"stage1_only" | "stage2_only" | "both"` for `stages`.
    pub values: Vec<serde_json::Value>,
    #[serde(default = "default_stage1")]
    pub stage1: StageCfg,
    #[serde(default = "default_stage2")]
    pub stage2: StageCfg,
    #[serde(default)]
    pub model: ModelSpec,
    #[serde(default)]
    pub holdout: HoldoutSpec,
}

impl SweepSpec {
    pub fn new(axis: Axis, values: Vec<serde_json::Value>) -> Self {
        Self {
            axis,
            values,
            stage1: default_stage1(),
            stage2: default_stage2(),
            model: ModelSpec::default(),
            holdout: HoldoutSpec::default(),
        }
    }

    /// Resolves and validates every configuration.
    pub fn configurations(&self) -> Result<Vec<RunConfig>> {
        if self.values.is_empty() {
            return Err(SweepError::Config("values must be nonempty".into()));
        }
        if !(self.holdout.fraction > 0.0 && self.holdout.fraction < 1.0) {
            return Err(SweepError::Config("holdout.fraction must be in (0, 1)".into()));
        }
        let cfg_err = |label: &str, e: TrainError| SweepError::Config(format!("{label}: {e}"));
        self.stage1.validate().map_err(|e| cfg_err("stage1", e))?;
        let mut out = Vec::with_capacity(self.values.len());
        for (i, v) in self.values.iter().enumerate() {
            let bad = |what: &str| SweepError::Config(format!("values[{i}] is not {what}: {v}"));
            let (label, plan, stage2) = match self.axis {
                Axis::Lambda => {
                    let lambda = v.as_f64().ok_or_else(|| bad("a number"))?;
                    let s2 = StageCfg {
                        lambda,
                        ..self.stage2.clone()
                    };
                    (format!("lambda={lambda}"), StagePlan::Both, s2)
                }
                Axis::Scheduler => {
                    let sched: SchedulerCfg =
                        serde_json::from_value(v.clone()).map_err(|_| bad("a scheduler config"))?;
                    let label = match sched.kind {
                        SchedulerKind::Static => format!("static p0={}", sched.p0),
                        SchedulerKind::Dynamic => format!(
                            "dynamic p0={} p_min={} T={}",
                            sched.p0, sched.p_min, sched.t_total
                        ),
                    };
                    let s2 = StageCfg {
                        scheduler: sched,
                        ..self.stage2.clone()
                    };
                    (label, StagePlan::Both, s2)
                }
                Axis::Stages => {
                    let plan: StagePlan =
                        serde_json::from_value(v.clone()).map_err(|_| bad("a stage plan"))?;
                    (plan.label().to_string(), plan, self.stage2.clone())
                }
            };
            stage2.validate().map_err(|e| cfg_err(&label, e))?;
            out.push(RunConfig { label, plan, stage2 });
        }
        Ok(out)
    }
}

/// One resolved configuration of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub label: String,
    pub plan: StagePlan,
    pub stage2: StageCfg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub label: String,
    pub global_s2t_map: f64,
    pub global_t2s_map: f64,
    pub fine_s2t_map: f64,
    pub fine_t2s_map: f64,
    pub average: f64,
    pub eval: HeldOutEval,
}

impl SweepRow {
    pub fn new(label: String, eval: HeldOutEval) -> Self {
        Self {
            label,
            global_s2t_map: eval.global_s2t.map_at_10,
            global_t2s_map: eval.global_t2s.map_at_10,
            fine_s2t_map: eval.fine_s2t.map_at_10,
            fine_t2s_map: eval.fine_t2s.map_at_10,
            average: eval.average_map(),
            eval,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub version: u32,
    pub axis: Axis,
    pub n_train: usize,
    pub n_heldout: usize,
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    pub fn row(&self, label: &str) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    /// mAP@10 table, one row per configuration, values in percent.
    pub fn render_table(&self) -> String {
        let header = ["configuration", "global s2t", "global t2s", "fine s2t", "fine t2s", "average"];
        let cells: Vec<[String; 6]> = self
            .rows
            .iter()
            .map(|r| {
                let pct = |v: f64| format!("{:.2}", 100.0 * v);
                [
                    r.label.clone(),
                    pct(r.global_s2t_map),
                    pct(r.global_t2s_map),
                    pct(r.fine_s2t_map),
                    pct(r.fine_t2s_map),
                    pct(r.average),
                ]
            })
            .collect();
        let mut width = header.map(str::len);
        for row in &cells {
            for (w, c) in width.iter_mut().zip(row) {
                *w = (*w).max(c.chars().count());
            }
        }
        let mut out = String::new();
        let mut line = |cols: &[&str]| {
            for (k, c) in cols.iter().enumerate() {
                if k == 0 {
                    write!(out, "{c:<w$}", w = width[0]).unwrap();
                } else {
                    write!(out, "  {c:>w$}", w = width[k]).unwrap();
                }
            }
            out.push('\n');
        };
        line(&header);
        let rule: Vec<String> = width.iter().map(|w| "-".repeat(*w)).collect();
        line(&rule.iter().map(String::as_str).collect::<Vec<_>>());
        for row in &cells {
            line(&row.each_ref().map(String::as_str));
        }
        out
    }
}

/// Trains and evaluates every configuration on `d`.
pub fn run_sweep(spec: &SweepSpec, d: &Dataset) -> Result<SweepReport> {
    let configs = spec.configurations()?;
    let (train_idx, held) = d.holdout_split(&spec.holdout.tag, spec.holdout.fraction);
    if held.is_empty() || train_idx.is_empty() {
        return Err(SweepError::Config(format!(
            "holdout split on tag {:?} leaves an empty side",
            spec.holdout.tag
        )));
    }
    let train_set = d.subset(&train_idx);
    let init = spec.model.init(d).map_err(|source| SweepError::Train {
        label: "initialization".into(),
        source,
    })?;

    let needs_stage1 = configs.iter().any(|c| c.plan != StagePlan::Stage2Only);
    let stage1 = if needs_stage1 {
        let (m, _) = run_stage1(init.clone(), &train_set, &spec.stage1).map_err(|source| {
            SweepError::Train {
                label: "stage1".into(),
                source,
            }
        })?;
        Some(m)
    } else {
        None
    };

    let mut rows = Vec::with_capacity(configs.len());
    for c in configs {
        let train_err = |source| SweepError::Train {
            label: c.label.clone(),
            source,
        };
        let model = match c.plan {
            StagePlan::Stage1Only => stage1.clone().expect("stage one trained"),
            StagePlan::Stage2Only => run_stage2(init.clone(), &train_set, &c.stage2).map_err(train_err)?.0,
            StagePlan::Both => {
                let m1 = stage1.clone().expect("stage one trained");
                run_stage2(m1, &train_set, &c.stage2).map_err(train_err)?.0
            }
        };
        let eval = evaluate_heldout(&model, d, &held).map_err(|source| SweepError::Eval {
            label: c.label.clone(),
            source,
        })?;
        rows.push(SweepRow::new(c.label, eval));
    }
    Ok(SweepReport {
        version: REPORT_VERSION,
        axis: spec.axis,
        n_train: train_idx.len(),
        n_heldout: held.len(),
        rows,
    })
}
