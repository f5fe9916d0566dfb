//! Learning-rate schedules.

use crate::error::{Error, Result};

/// Piecewise-constant decay: `base · γ^k` where `k` counts the boundaries
/// already reached.
#[derive(Clone, Debug, PartialEq)]
pub struct StepSchedule {
    pub base: f64,
    pub gamma: f64,
    pub boundaries: Vec<usize>,
}

impl Default for StepSchedule {
    fn default() -> Self {
        Self {
            base: 1e-3,
            gamma: 0.1,
            boundaries: vec![15, 35],
        }
    }
}

impl StepSchedule {
    pub fn lr(&self, epoch: usize) -> f64 {
        if *self == Self::default() {
            return step_lr(epoch);
        }
        let k = self.boundaries.iter().filter(|&&b| epoch >= b).count();
        self.base * self.gamma.powi(k as i32)
    }
}

/// `1e-3` before epoch 15, `1e-4` until epoch 35, `1e-5` from then on.
pub fn step_lr(epoch: usize) -> f64 {
    match epoch {
        0..15 => 1e-3,
        15..35 => 1e-4,
        _ => 1e-5,
    }
}

/// `H^-0.5 · min(s^-0.5, s · w^-1.5)` for step `s ≥ 1`.
pub fn noam_lr(s: u64, h: usize, w: u64) -> Result<f64> {
    if s == 0 {
        return Err(Error::Invalid("noam step counter starts at 1".into()));
    }
    if h == 0 || w == 0 {
        return Err(Error::Invalid("noam width and warmup must be positive".into()));
    }
    let s = s as f64;
    Ok((h as f64).powf(-0.5) * s.powf(-0.5).min(s * (w as f64).powf(-1.5)))
}

#[derive(Clone, Debug, PartialEq)]
pub enum LrSchedule {
    Constant(f64),
    Step(StepSchedule),
    Noam { width: usize, warmup: u64 },
}

impl LrSchedule {
    /// Rate for a given zero-based epoch and one-based global step.
    pub fn lr(&self, epoch: usize, step: u64) -> Result<f64> {
        match self {
            LrSchedule::Constant(lr) => Ok(*lr),
            LrSchedule::Step(s) => Ok(s.lr(epoch)),
            LrSchedule::Noam { width, warmup } => noam_lr(step, *width, *warmup),
        }
    }
}
