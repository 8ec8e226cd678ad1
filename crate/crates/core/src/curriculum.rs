//! Segment-count phases and within-phase difficulty temperature.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::permutation::{enumerate_sn, BoltzmannSampler, Permutation};

pub const START_SEGMENTS: usize = 3;
pub const PHASES: usize = 5;
pub const DEFAULT_THRESHOLD: f64 = 0.99;

/// Phase machine. Passed thresholds latch, so the segment count never
/// decreases even if accuracy drops on the harder task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurriculumState {
    pub thresholds: [f64; PHASES],
    passed: [bool; PHASES],
    phase_start_epoch: usize,
    epoch: usize,
}

impl Default for CurriculumState {
    fn default() -> Self {
        Self::new([DEFAULT_THRESHOLD; PHASES]).expect("default thresholds are valid")
    }
}

/// What changed when a threshold was crossed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseTransition {
    pub epoch: usize,
    pub old_n: usize,
    pub new_n: usize,
    pub val_acc: f64,
    pub temperature: f64,
}

impl CurriculumState {
    pub fn new(thresholds: [f64; PHASES]) -> Result<Self> {
        if let Some(t) = thresholds.iter().find(|t| !(0.0..=1.0).contains(*t)) {
            return Err(Error::InvalidArgument(format!("threshold {t} is outside [0, 1]")));
        }
        Ok(Self { thresholds, passed: [false; PHASES], phase_start_epoch: 0, epoch: 0 })
    }

    pub fn current_n(&self) -> usize {
        START_SEGMENTS + self.passed.iter().filter(|&&p| p).count()
    }

    pub fn passed(&self) -> [bool; PHASES] {
        self.passed
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn phase_start_epoch(&self) -> usize {
        self.phase_start_epoch
    }

    pub fn is_final_phase(&self) -> bool {
        self.passed.iter().all(|&p| p)
    }

    /// Move the clock without evaluating.
    pub fn set_epoch(&mut self, epoch: usize) {
        self.epoch = epoch;
    }

    /// Record the accuracy measured at the end of the current epoch, then
    /// advance the clock by one. At most one threshold passes per call. A
    /// returned transition means the permutation head must be rebuilt.
    pub fn update(&mut self, val_acc: f64, schedule: &Schedule) -> Result<Option<PhaseTransition>> {
        if !(0.0..=1.0).contains(&val_acc) {
            return Err(Error::InvalidArgument(format!(
                "validation accuracy {val_acc} is outside [0, 1]"
            )));
        }
        let temperature = self.temperature(schedule);
        let old_n = self.current_n();
        let mut transition = None;
        if let Some(next) = self.passed.iter().position(|&p| !p) {
            if val_acc >= self.thresholds[next] {
                self.passed[next] = true;
                transition = Some(PhaseTransition {
                    epoch: self.epoch,
                    old_n,
                    new_n: self.current_n(),
                    val_acc,
                    temperature,
                });
            }
        }
        self.epoch += 1;
        if transition.is_some() {
            self.phase_start_epoch = self.epoch;
        }
        Ok(transition)
    }

    pub fn temperature(&self, schedule: &Schedule) -> f64 {
        schedule.temperature_at(self.epoch - self.phase_start_epoch)
    }

    pub fn task_spec(&self, schedule: &Schedule) -> Result<(usize, BoltzmannSampler)> {
        let n = self.current_n();
        Ok((n, BoltzmannSampler::new(n, self.temperature(schedule))?))
    }
}

/// Linear temperature ramp inside a phase.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub t_min: f64,
    pub t_max: f64,
    /// Epochs for the ramp to reach `t_max`.
    pub phase_length_hint: usize,
}

impl Default for Schedule {
    fn default() -> Self {
        Self { t_min: 1.0, t_max: 100.0, phase_length_hint: 10 }
    }
}

impl Schedule {
    pub fn new(t_min: f64, t_max: f64, phase_length_hint: usize) -> Result<Self> {
        if !(t_min > 0.0 && t_min.is_finite() && t_max.is_finite() && t_min <= t_max) {
            return Err(Error::InvalidArgument(format!(
                "need 0 < t_min <= t_max, got {t_min} and {t_max}"
            )));
        }
        if phase_length_hint == 0 {
            return Err(Error::InvalidArgument("phase length hint must be positive".into()));
        }
        Ok(Self { t_min, t_max, phase_length_hint })
    }

    pub fn temperature_at(&self, elapsed: usize) -> f64 {
        let frac = (elapsed as f64 / self.phase_length_hint as f64).min(1.0);
        self.t_min + (self.t_max - self.t_min) * frac
    }
}

/// Caches enumerations of S_n so that per-epoch samplers are cheap to build.
#[derive(Clone, Debug, Default)]
pub struct SamplerCache {
    tables: Vec<Option<Arc<Vec<Permutation>>>>,
}

impl SamplerCache {
    pub fn sampler(&mut self, n: usize, temperature: f64) -> Result<BoltzmannSampler> {
        if self.tables.len() <= n {
            self.tables.resize(n + 1, None);
        }
        let table = match &self.tables[n] {
            Some(t) => Arc::clone(t),
            None => {
                let t = Arc::new(enumerate_sn(n)?);
                self.tables[n] = Some(Arc::clone(&t));
                t
            }
        };
        BoltzmannSampler::with_table(table, temperature)
    }
}
