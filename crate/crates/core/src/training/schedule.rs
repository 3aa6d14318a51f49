use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Linear warmup followed by cosine decay.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub lr_start: f64,
    pub lr_peak: f64,
    pub lr_final: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
}

impl Schedule {
    pub fn new(lr_start: f64, lr_peak: f64, lr_final: f64, warmup_steps: u64, total_steps: u64) -> Result<Self> {
        let s = Self {
            lr_start,
            lr_peak,
            lr_final,
            warmup_steps,
            total_steps,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr_start >= 0.0 && self.lr_start <= self.lr_peak && self.lr_final >= 0.0 && self.lr_final <= self.lr_peak) {
            return Err(Error::input("schedule needs 0 <= lr_start, lr_final <= lr_peak"));
        }
        if self.warmup_steps >= self.total_steps {
            return Err(Error::input(format!(
                "warmup_steps ({}) must be below total_steps ({})",
                self.warmup_steps, self.total_steps
            )));
        }
        Ok(())
    }

    /// Learning rate for step `t` in `0..=total_steps`.
    pub fn lr_at_step(&self, t: u64) -> Result<f64> {
        if t > self.total_steps {
            return Err(Error::input(format!("step {t} beyond schedule end {}", self.total_steps)));
        }
        // Written as convex combinations so both ends of each phase are exact.
        if t < self.warmup_steps {
            let f = t as f64 / self.warmup_steps as f64;
            return Ok(self.lr_start * (1.0 - f) + self.lr_peak * f);
        }
        let progress = (t - self.warmup_steps) as f64 / (self.total_steps - self.warmup_steps) as f64;
        let w = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
        Ok(self.lr_peak * w + self.lr_final * (1.0 - w))
    }
}

pub fn lr_at_step(s: &Schedule, t: u64) -> Result<f64> {
    s.lr_at_step(t)
}
