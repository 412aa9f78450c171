//! Annealing schedule `v(r) = v_max · tanh(κ · ⌊r / β⌋)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub max_value: f64,
    pub kappa: f64,
    pub beta: usize,
}

impl ScheduleConfig {
    pub fn new(max_value: f64, kappa: f64, beta: usize) -> Result<Self> {
        let s = Self { max_value, kappa, beta };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.max_value.is_finite() && self.max_value > 0.0) {
            return Err(Error::Config(format!("schedule max_value must be > 0, got {}", self.max_value)));
        }
        if !(self.kappa.is_finite() && self.kappa > 0.0) {
            return Err(Error::Config(format!("schedule kappa must be > 0, got {}", self.kappa)));
        }
        if self.beta == 0 {
            return Err(Error::Config("schedule beta must be >= 1".into()));
        }
        Ok(())
    }
}

pub fn schedule_value(cfg: &ScheduleConfig, epoch: usize) -> f64 {
    let steps = (epoch / cfg.beta) as f64;
    // tanh < 1 in exact arithmetic; the clamp keeps rounding from exceeding it.
    (cfg.max_value * (cfg.kappa * steps).tanh()).min(cfg.max_value)
}
