//! Adam and RMSprop over flattened parameter vectors.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::nn::params::Parameterized;
use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    Adam,
    RmsProp,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::RmsProp => "rmsprop",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "adam" => Ok(OptimizerKind::Adam),
            "rmsprop" => Ok(OptimizerKind::RmsProp),
            other => Err(Error::Config(format!("unknown optimizer '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub beta1: f64,
    /// Second-moment decay; the smoothing constant α for RMSprop.
    pub beta2: f64,
    pub eps: f64,
}

impl OptimizerConfig {
    pub fn adam() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// Adam settings used with the Noam schedule.
    pub fn noam_adam() -> Self {
        Self {
            beta2: 0.98,
            eps: 1e-9,
            ..Self::adam()
        }
    }

    pub fn rmsprop() -> Self {
        Self {
            kind: OptimizerKind::RmsProp,
            beta1: 0.0,
            beta2: 0.99,
            eps: 1e-8,
        }
    }
}

/// Moment accumulators mirroring a model's flattened parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<T> {
    pub cfg: OptimizerConfig,
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub t: u64,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(cfg: OptimizerConfig, n: usize) -> Self {
        Self {
            cfg,
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            t: 0,
        }
    }

    /// One update of `params` in place.
    pub fn update(&mut self, params: &mut [T], grads: &[T], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::dims(&[self.m.len()], &[params.len(), grads.len()]));
        }
        self.t += 1;
        let lr = T::of(lr);
        let eps = T::of(self.cfg.eps);
        let b2 = T::of(self.cfg.beta2);
        match self.cfg.kind {
            OptimizerKind::Adam => {
                let b1 = T::of(self.cfg.beta1);
                let c1 = T::one() - b1.powi(self.t as i32);
                let c2 = T::one() - b2.powi(self.t as i32);
                for i in 0..params.len() {
                    let g = grads[i];
                    self.m[i] = b1 * self.m[i] + (T::one() - b1) * g;
                    self.v[i] = b2 * self.v[i] + (T::one() - b2) * g * g;
                    let mh = self.m[i] / c1;
                    let vh = self.v[i] / c2;
                    params[i] -= lr * mh / (vh.sqrt() + eps);
                }
            }
            OptimizerKind::RmsProp => {
                for i in 0..params.len() {
                    let g = grads[i];
                    self.v[i] = b2 * self.v[i] + (T::one() - b2) * g * g;
                    params[i] -= lr * g / (self.v[i].sqrt() + eps);
                }
            }
        }
        Ok(())
    }

    pub fn step<M: Parameterized<T>>(&mut self, model: &mut M, grads: &M, lr: f64) -> Result<()> {
        let mut p = model.flat();
        self.update(&mut p, &grads.flat(), lr)?;
        model.set_flat(&p);
        Ok(())
    }
}

/// Rescales `grads` so their global L2 norm is at most `max_norm`; returns
/// the norm before clipping. `max_norm <= 0` disables clipping.
pub fn clip_grad_norm<T: Real, M: Parameterized<T>>(grads: &mut M, max_norm: f64) -> f64 {
    let norm = grads
        .flat()
        .iter()
        .map(|g| g.to_f64_lossy().powi(2))
        .sum::<f64>()
        .sqrt();
    if max_norm > 0.0 && norm > max_norm {
        grads.scale_all(T::of(max_norm / norm));
    }
    norm
}
