use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cubic gradual-pruning schedule.
///
/// Sparsity ramps from 0 at `start_step` to `final_sparsity` at
/// `start_step + events * interval`:
///
/// ```text
/// s(t) = s_f * (1 - (1 - (t - t_s) / (n * dt))^3)
/// ```
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub final_sparsity: f64,
    pub start_step: u64,
    pub interval: u64,
    pub events: u32,
}

impl ScheduleConfig {
    pub fn new(final_sparsity: f64, start_step: u64, interval: u64, events: u32) -> Result<Self> {
        let cfg = Self {
            final_sparsity,
            start_step,
            interval,
            events,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if !(0.0..1.0).contains(&self.final_sparsity) {
            errs.push(format!("final_sparsity {} not in [0, 1)", self.final_sparsity));
        }
        if self.events < 1 {
            errs.push("events must be >= 1".to_string());
        }
        if self.interval < 1 {
            errs.push("interval must be >= 1".to_string());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    /// Last pruning step, `t_s + n * dt`.
    pub fn end_step(&self) -> u64 {
        self.start_step + self.events as u64 * self.interval
    }

    pub fn sparsity_at(&self, step: u64) -> Result<f64> {
        let end = self.end_step();
        if step < self.start_step || step > end {
            return Err(Error::OutOfWindow {
                step,
                start: self.start_step,
                end,
            });
        }
        let span = (self.events as u64 * self.interval) as f64;
        let progress = (step - self.start_step) as f64 / span;
        let remaining = 1.0 - progress;
        Ok(self.final_sparsity * (1.0 - remaining * remaining * remaining))
    }

    /// `(k, step)` for the `n` pruning events `k = 1..=n`. The grid point at
    /// `t_s` itself has sparsity 0 and is not an event.
    pub fn event_steps(&self) -> impl Iterator<Item = (u32, u64)> + '_ {
        (1..=self.events).map(move |k| (k, self.start_step + k as u64 * self.interval))
    }

    /// Event index if `step` is a pruning step.
    pub fn event_at(&self, step: u64) -> Option<u32> {
        if step <= self.start_step || step > self.end_step() {
            return None;
        }
        let off = step - self.start_step;
        (off % self.interval == 0).then_some((off / self.interval) as u32)
    }
}
