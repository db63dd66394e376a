//! On-board training cost under DVFS.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComputeConfig {
    /// Effective switched capacitance κ.
    pub kappa: f64,
    /// CPU cycles for one pass over the local data, |D|·r_cyc.
    pub cycles_per_round: f64,
    /// Round duration T, s.
    pub round_duration: f64,
    /// Upload budget t_max^Trans, s.
    pub max_trans_delay: f64,
    pub f_min: f64,
    pub f_max: f64,
}

impl Default for ComputeConfig {
    fn default() -> Self {
        Self { kappa: 1e-27, cycles_per_round: 1e7, round_duration: 0.5, max_trans_delay: 0.02, f_min: 5e7, f_max: 4e8 }
    }
}

impl ComputeConfig {
    pub fn validate(&self) -> Result<()> {
        ensure(self.f_min > 0.0 && self.f_min < self.f_max, || "need 0 < f_min < f_max".into())?;
        ensure(self.max_trans_delay > 0.0 && self.max_trans_delay < self.round_duration, || {
            "need 0 < max_trans_delay < round_duration".into()
        })?;
        ensure(self.cycles_per_round > 0.0, || "cycles_per_round must be > 0".into())?;
        ensure(self.kappa > 0.0, || "kappa must be > 0".into())
    }

    fn check(&self, f: f64) -> Result<()> {
        if (self.f_min..=self.f_max).contains(&f) {
            Ok(())
        } else {
            Err(Error::OutOfRange { name: "cpu frequency", value: f, min: self.f_min, max: self.f_max })
        }
    }
}

/// κ·f³, W.
pub fn compute_power(f: f64, cfg: &ComputeConfig) -> Result<f64> {
    cfg.check(f)?;
    Ok(cfg.kappa * f.powi(3))
}

/// Seconds for one local iteration.
pub fn compute_delay(f: f64, cfg: &ComputeConfig) -> f64 {
    cfg.cycles_per_round / f
}

/// κ·f²·cycles, J per local iteration.
pub fn compute_energy_per_iter(f: f64, cfg: &ComputeConfig) -> Result<f64> {
    cfg.check(f)?;
    Ok(cfg.kappa * f * f * cfg.cycles_per_round)
}

/// Local iterations that fit in the training window, one fewer than the
/// floor count and never negative.
pub fn iteration_count(f: f64, cfg: &ComputeConfig) -> usize {
    let window = cfg.round_duration - cfg.max_trans_delay;
    let whole = (window / compute_delay(f, cfg)).floor();
    if whole >= 1.0 {
        whole as usize - 1
    } else {
        0
    }
}

/// Inverse per-iteration energy.
pub fn frequency_utility(f: f64, cfg: &ComputeConfig) -> Result<f64> {
    Ok(1.0 / compute_energy_per_iter(f, cfg)?)
}
