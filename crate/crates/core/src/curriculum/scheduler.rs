//! Task-1 sampling probability over training steps.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Result, TrainError};
use crate::store::TaskKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchedulerKind {
    Static,
    Dynamic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchedulerCfg {
    pub kind: SchedulerKind,
    pub p0: f64,
    #[serde(default)]
    pub p_min: f64,
    /// Steps over which a dynamic schedule decays from `p0` to `p_min`.
    #[serde(default = "default_t_total", rename = "T", alias = "t_total")]
    pub t_total: usize,
}

fn default_t_total() -> usize {
    1
}

impl Default for SchedulerCfg {
    fn default() -> Self {
        Self::dynamic(0.95, 0.50, 10_000)
    }
}

impl SchedulerCfg {
    pub fn fixed(p0: f64) -> Self {
        Self {
            kind: SchedulerKind::Static,
            p0,
            p_min: p0,
            t_total: 1,
        }
    }

    pub fn dynamic(p0: f64, p_min: f64, t_total: usize) -> Self {
        Self {
            kind: SchedulerKind::Dynamic,
            p0,
            p_min,
            t_total,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let prob = |v: f64| (0.0..=1.0).contains(&v);
        if !prob(self.p0) {
            return Err(TrainError::Config(format!("scheduler p0 = {} not in [0, 1]", self.p0)));
        }
        if self.kind == SchedulerKind::Dynamic {
            if !prob(self.p_min) || self.p_min > self.p0 {
                return Err(TrainError::Config(format!(
                    "scheduler requires 0 <= p_min <= p0, got p_min = {}, p0 = {}",
                    self.p_min, self.p0
                )));
            }
            if self.t_total == 0 {
                return Err(TrainError::Config("dynamic scheduler requires T >= 1".into()));
            }
        }
        Ok(())
    }
}

/// `p_t`: `p0` for a static schedule, otherwise
/// `max(p_min, p0 - (t / T) (p0 - p_min))`.
pub fn task_prob(cfg: &SchedulerCfg, t: usize) -> f64 {
    match cfg.kind {
        SchedulerKind::Static => cfg.p0,
        SchedulerKind::Dynamic => {
            let frac = t as f64 / cfg.t_total as f64;
            (cfg.p0 - frac * (cfg.p0 - cfg.p_min)).max(cfg.p_min)
        }
    }
}

/// Task 1 with probability `task_prob(cfg, t)`, Task 2 otherwise. Consumes
/// exactly one `f64` from `rng`.
pub fn sample_task<R: Rng + ?Sized>(cfg: &SchedulerCfg, t: usize, rng: &mut R) -> TaskKind {
    let p = task_prob(cfg, t);
    let u: f64 = rng.random();
    if u < p {
        TaskKind::Task1
    } else {
        TaskKind::Task2
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dynamic_schedule_hand_values() {
        let cfg = SchedulerCfg::dynamic(0.95, 0.50, 10_000);
        assert_eq!(task_prob(&cfg, 0), 0.95);
        assert_eq!(task_prob(&cfg, 5_000), 0.725);
        assert_eq!(task_prob(&cfg, 10_000), 0.50);
        assert_eq!(task_prob(&cfg, 20_000), 0.50);
    }

    #[test]
    fn static_schedule_is_constant() {
        let cfg = SchedulerCfg::fixed(0.3);
        assert!((0..1000).step_by(97).all(|t| task_prob(&cfg, t) == 0.3));
    }

    #[test]
    fn degenerate_probabilities_are_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let one = SchedulerCfg::fixed(1.0);
        let zero = SchedulerCfg::fixed(0.0);
        for t in 0..500 {
            assert_eq!(sample_task(&one, t, &mut rng), TaskKind::Task1);
            assert_eq!(sample_task(&zero, t, &mut rng), TaskKind::Task2);
        }
    }

    #[test]
    fn half_probability_frequency() {
        let cfg = SchedulerCfg::fixed(0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let n = 10_000;
        let task1 = (0..n)
            .filter(|&t| sample_task(&cfg, t, &mut rng) == TaskKind::Task1)
            .count();
        let freq = task1 as f64 / n as f64;
        assert!((0.48..=0.52).contains(&freq), "{freq}");
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(SchedulerCfg::fixed(1.5).validate().is_err());
        assert!(SchedulerCfg::dynamic(0.4, 0.6, 10).validate().is_err());
        assert!(SchedulerCfg::dynamic(0.9, 0.1, 0).validate().is_err());
        assert!(SchedulerCfg::dynamic(0.9, 0.1, 1).validate().is_ok());
        // p_min is irrelevant to a static schedule.
        let s = SchedulerCfg {
            p_min: 0.9,
            ..SchedulerCfg::fixed(0.2)
        };
        assert!(s.validate().is_ok());
    }

    #[test]
    fn config_json_uses_capital_t() {
        let cfg: SchedulerCfg =
            serde_json::from_str(r#"{"kind":"dynamic","p0":0.95,"p_min":0.5,"T":300}"#).unwrap();
        assert_eq!(cfg, SchedulerCfg::dynamic(0.95, 0.5, 300));
        assert!(serde_json::from_str::<SchedulerCfg>(r#"{"kind":"static","p0":1,"x":1}"#).is_err());
    }
}
