//! Energy/delay objective, its per-vehicle reduction, and the closed-form
//! bandwidth split obtained from the KKT conditions.
//!
//! With powers and frequencies fixed, the cost is
//!
//! ```text
//!   Σ_n [ A_n/β_n + B f_n³ − C f_n² ] + max_n ( E_n/β_n + F/f_n )
//! ```
//!
//! and the closed form sets `β_n ∝ sqrt(A_n + τ_n E_n)` with
//! `τ_n = (3B f_n⁴ − 2C f_n³)/F`. [`oracle_beta`] minimises the same
//! expression numerically and is used to check the closed form.

use log::debug;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::channel::{self, ChannelConfig, ChannelRealization};
use crate::compute::{self, ComputeConfig};
use crate::error::{ensure, Error, Result};
use crate::rng::SimRng;

/// Floor applied to a negative or zero radicand `A + τE`.
pub const RADICAND_FLOOR: f64 = 1e-18;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveWeights {
    /// Weight on total energy.
    pub lambda1: f64,
    /// Weight on the worst-case delay.
    pub lambda2: f64,
}

impl Default for ObjectiveWeights {
    fn default() -> Self {
        Self { lambda1: 0.7, lambda2: 0.3 }
    }
}

impl ObjectiveWeights {
    pub fn validate(&self) -> Result<()> {
        ensure((0.0..=1.0).contains(&self.lambda1) && (0.0..=1.0).contains(&self.lambda2), || {
            "objective weights must lie in [0, 1]".into()
        })?;
        ensure((self.lambda1 + self.lambda2 - 1.0).abs() <= 1e-12, || "lambda1 + lambda2 must equal 1".into())
    }
}

/// The A–F coefficients of one vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReducedCoefficients {
    /// λ₁·p·Z / (B^U ln(1 + SINR)): transmission energy at β = 1.
    pub a: f64,
    /// λ₁·κ·(T − t_max).
    pub b: f64,
    /// λ₁·κ·cycles.
    pub c: f64,
    /// λ₂·Z / (B^U ln(1 + SINR)): transmission delay at β = 1.
    pub e: f64,
    /// λ₂·cycles.
    pub f: f64,
}

pub fn notations(
    p: f64,
    h: f64,
    i: f64,
    weights: &ObjectiveWeights,
    ch: &ChannelConfig,
    comp: &ComputeConfig,
) -> Result<ReducedCoefficients> {
    let log_term = channel::sinr(p, h, i, ch).ln_1p();
    if !(log_term > 0.0) {
        return Err(Error::DegenerateLink);
    }
    let bw = ch.uplink_bandwidth * log_term;
    Ok(ReducedCoefficients {
        a: weights.lambda1 * p * ch.model_size_bits / bw,
        b: weights.lambda1 * comp.kappa * (comp.round_duration - comp.max_trans_delay),
        c: weights.lambda1 * comp.kappa * comp.cycles_per_round,
        e: weights.lambda2 * ch.model_size_bits / bw,
        f: weights.lambda2 * comp.cycles_per_round,
    })
}

/// Multiplier τ of the max-coupling constraint, evaluated at frequency `f`.
pub fn kkt_tau(freq: f64, k: &ReducedCoefficients) -> f64 {
    (3.0 * k.b * freq.powi(4) - 2.0 * k.c * freq.powi(3)) / k.f
}

/// Closed-form bandwidth shares.
pub fn kkt_beta(coeffs: &[ReducedCoefficients], freqs: &[f64]) -> Result<Vec<f64>> {
    if coeffs.len() != freqs.len() {
        return Err(Error::DimensionMismatch { expected: coeffs.len(), got: freqs.len() });
    }
    if coeffs.is_empty() {
        return Err(Error::DegenerateInstance);
    }
    let mut any_positive = false;
    let roots: Vec<f64> = coeffs
        .iter()
        .zip(freqs)
        .enumerate()
        .map(|(n, (k, &freq))| {
            let rad = k.a + kkt_tau(freq, k) * k.e;
            if rad > 0.0 {
                any_positive = true;
                rad.sqrt()
            } else {
                debug!("vehicle {n}: radicand {rad:e} clamped to {RADICAND_FLOOR:e}");
                RADICAND_FLOOR.sqrt()
            }
        })
        .collect();
    if !any_positive {
        return Err(Error::DegenerateInstance);
    }
    let total: f64 = roots.iter().sum();
    Ok(roots.iter().map(|r| r / total).collect())
}

/// Reduced cost with `p` and `f` folded into the coefficients.
pub fn reduced_objective(betas: &[f64], coeffs: &[ReducedCoefficients], freqs: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut worst = f64::NEG_INFINITY;
    for ((beta, k), &freq) in betas.iter().zip(coeffs).zip(freqs) {
        sum += k.a / beta + k.b * freq.powi(3) - k.c * freq * freq;
        worst = worst.max(k.e / beta + k.f / freq);
    }
    sum + worst
}

/// Per-slot allocation for all vehicles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationAction {
    /// W
    pub powers: Vec<f64>,
    /// Hz
    pub frequencies: Vec<f64>,
    pub betas: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleCost {
    pub trans_delay: f64,
    pub trans_energy: f64,
    pub comp_delay: f64,
    pub comp_energy_per_iter: f64,
    pub iterations: usize,
    pub total_energy: f64,
    pub total_delay: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub vehicles: Vec<VehicleCost>,
    /// Σ_n E_total,n
    pub total_energy: f64,
    /// max_n T_total,n
    pub max_delay: f64,
    pub objective: f64,
}

const BOUND_TOL: f64 = 1e-9;

fn within(x: f64, lo: f64, hi: f64) -> bool {
    x >= lo * (1.0 - BOUND_TOL) && x <= hi * (1.0 + BOUND_TOL)
}

impl AllocationAction {
    /// Check the box, simplex and length constraints.
    pub fn validate(&self, ch: &ChannelConfig, comp: &ComputeConfig) -> Result<()> {
        let n = self.powers.len();
        if self.frequencies.len() != n || self.betas.len() != n {
            return Err(Error::ConstraintViolation(format!(
                "action lengths differ: {} powers, {} frequencies, {} betas",
                n,
                self.frequencies.len(),
                self.betas.len()
            )));
        }
        let (p_min, p_max) = (ch.p_min(), ch.p_max());
        for (idx, &p) in self.powers.iter().enumerate() {
            if !within(p, p_min, p_max) {
                return Err(Error::ConstraintViolation(format!("power[{idx}] = {p} W outside [{p_min}, {p_max}]")));
            }
        }
        for (idx, &f) in self.frequencies.iter().enumerate() {
            if !within(f, comp.f_min, comp.f_max) {
                return Err(Error::ConstraintViolation(format!(
                    "frequency[{idx}] = {f} Hz outside [{}, {}]",
                    comp.f_min, comp.f_max
                )));
            }
        }
        for (idx, &b) in self.betas.iter().enumerate() {
            if !(b > 0.0 && b <= 1.0) {
                return Err(Error::ConstraintViolation(format!("beta[{idx}] = {b} outside (0, 1]")));
            }
        }
        let total: f64 = self.betas.iter().sum();
        if total > 1.0 + 1e-9 {
            return Err(Error::ConstraintViolation(format!("sum of betas {total} exceeds 1")));
        }
        Ok(())
    }
}

/// Weighted energy plus worst-case delay of one slot.
pub fn objective(
    action: &AllocationAction,
    realizations: &[ChannelRealization],
    weights: &ObjectiveWeights,
    ch: &ChannelConfig,
    comp: &ComputeConfig,
) -> Result<(f64, CostBreakdown)> {
    action.validate(ch, comp)?;
    if realizations.len() != action.powers.len() {
        return Err(Error::DimensionMismatch { expected: action.powers.len(), got: realizations.len() });
    }
    let mut vehicles = Vec::with_capacity(realizations.len());
    for (n, r) in realizations.iter().enumerate() {
        let p = action.powers[n];
        let freq = action.frequencies[n].clamp(comp.f_min, comp.f_max);
        let (trans_delay, trans_energy) =
            channel::transmission_delay_energy(p, r.gain, r.interference, action.betas[n], ch)?;
        let comp_delay = compute::compute_delay(freq, comp);
        let comp_energy_per_iter = compute::compute_energy_per_iter(freq, comp)?;
        let iterations = compute::iteration_count(freq, comp);
        vehicles.push(VehicleCost {
            trans_delay,
            trans_energy,
            comp_delay,
            comp_energy_per_iter,
            iterations,
            total_energy: trans_energy + iterations as f64 * comp_energy_per_iter,
            total_delay: trans_delay + comp_delay,
        });
    }
    let total_energy: f64 = vehicles.iter().map(|v| v.total_energy).sum();
    let max_delay = vehicles.iter().map(|v| v.total_delay).fold(f64::NEG_INFINITY, f64::max);
    let value = weights.lambda1 * total_energy + weights.lambda2 * max_delay;
    Ok((value, CostBreakdown { vehicles, total_energy, max_delay, objective: value }))
}

/// Lower end of the feasible power interval, without the feasibility check.
pub fn p_star_unchecked(h: f64, i: f64, ch: &ChannelConfig) -> f64 {
    ch.p_min().max(channel::p_tau(h, i, ch))
}

/// `max(p_min, P^τ)`; fails when it exceeds `p_max`.
pub fn p_star(h: f64, i: f64, ch: &ChannelConfig) -> Result<f64> {
    let p = p_star_unchecked(h, i, ch);
    if p > ch.p_max() {
        return Err(Error::InfeasibleLink { p_star: p, p_max: ch.p_max() });
    }
    Ok(p)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleConfig {
    pub restarts: usize,
    pub iterations_per_stage: usize,
    /// Smoothing schedule of the max term, relative to its magnitude.
    pub smoothing: [f64; 6],
    /// Lower bound kept on every share.
    pub beta_floor: f64,
    pub seed: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            restarts: 8,
            iterations_per_stage: 400,
            smoothing: [1e-1, 1e-2, 1e-4, 1e-6, 1e-8, 1e-10],
            beta_floor: 1e-9,
            seed: 0x5eed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub betas: Vec<f64>,
    /// Reduced objective at `betas`.
    pub value: f64,
    pub converged: bool,
}

/// Euclidean projection onto `{x : x_i >= floor, Σ x_i = 1}`.
pub fn project_simplex(v: &[f64], floor: f64) -> Vec<f64> {
    let n = v.len();
    let radius = 1.0 - floor * n as f64;
    let shifted: Vec<f64> = v.iter().map(|x| x - floor).collect();
    let mut sorted = shifted.clone();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (k, &s) in sorted.iter().enumerate() {
        cum += s;
        let t = (cum - radius) / (k + 1) as f64;
        if s - t > 0.0 {
            theta = t;
        }
    }
    shifted.iter().map(|x| (x - theta).max(0.0) + floor).collect()
}

/// Smoothed reduced objective (log-sum-exp in place of the max) and its gradient.
fn smoothed(betas: &[f64], coeffs: &[ReducedCoefficients], freqs: &[f64], mu: f64) -> (f64, Vec<f64>) {
    let terms: Vec<f64> = betas.iter().zip(coeffs).zip(freqs).map(|((b, k), &f)| k.e / b + k.f / f).collect();
    let top = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let expo: Vec<f64> = terms.iter().map(|t| ((t - top) / mu).exp()).collect();
    let z: f64 = expo.iter().sum();
    let mut value = top + mu * z.ln();
    let mut grad = vec![0.0; betas.len()];
    for n in 0..betas.len() {
        let k = &coeffs[n];
        let b = betas[n];
        value += k.a / b + k.b * freqs[n].powi(3) - k.c * freqs[n] * freqs[n];
        grad[n] = -k.a / (b * b) - expo[n] / z * k.e / (b * b);
    }
    (value, grad)
}

/// Numerical minimiser of the reduced objective over the simplex.
///
/// Projected gradient with backtracking on a log-sum-exp smoothing of the
/// max term, tightened stage by stage, from several random starts. The best
/// iterate under the exact objective is returned.
pub fn oracle_beta(coeffs: &[ReducedCoefficients], freqs: &[f64], cfg: &OracleConfig) -> Result<OracleResult> {
    let n = coeffs.len();
    if n != freqs.len() {
        return Err(Error::DimensionMismatch { expected: n, got: freqs.len() });
    }
    if n == 0 {
        return Err(Error::DegenerateInstance);
    }
    if n == 1 {
        let betas = vec![1.0];
        let value = reduced_objective(&betas, coeffs, freqs);
        return Ok(OracleResult { betas, value, converged: true });
    }
    let mut rng = SimRng::seed_from_u64(cfg.seed);
    let mut best = OracleResult { betas: vec![1.0 / n as f64; n], value: f64::INFINITY, converged: false };

    for restart in 0..cfg.restarts.max(1) {
        let mut beta: Vec<f64> = if restart == 0 {
            vec![1.0 / n as f64; n]
        } else {
            let raw: Vec<f64> = (0..n).map(|_| Exp1.sample(&mut rng)).collect::<Vec<f64>>();
            let s: f64 = raw.iter().sum();
            project_simplex(&raw.iter().map(|x| x / s).collect::<Vec<_>>(), cfg.beta_floor)
        };
        let scale = reduced_objective(&beta, coeffs, freqs).abs().max(f64::MIN_POSITIVE);
        let mut converged = false;
        let mut step = 1e-3 / scale;
        for &rel in &cfg.smoothing {
            let mu = rel * scale;
            converged = false;
            for _ in 0..cfg.iterations_per_stage {
                let (value, grad) = smoothed(&beta, coeffs, freqs, mu);
                // Backtracking on the projected-gradient sufficient-decrease test.
                let mut accepted = None;
                for _ in 0..60 {
                    let trial: Vec<f64> = beta.iter().zip(&grad).map(|(b, g)| b - step * g).collect();
                    let cand = project_simplex(&trial, cfg.beta_floor);
                    let (cand_value, _) = smoothed(&cand, coeffs, freqs, mu);
                    let moved: f64 = cand.iter().zip(&beta).map(|(c, b)| (c - b).powi(2)).sum();
                    let lin: f64 = cand.iter().zip(&beta).zip(&grad).map(|((c, b), g)| g * (c - b)).sum();
                    if cand_value <= value + lin + moved / (2.0 * step) {
                        accepted = Some((cand, moved));
                        break;
                    }
                    step *= 0.5;
                }
                let Some((cand, moved)) = accepted else { break };
                beta = cand;
                let exact = reduced_objective(&beta, coeffs, freqs);
                if exact < best.value {
                    best.value = exact;
                    best.betas = beta.clone();
                }
                step *= 2.0;
                if moved.sqrt() < 1e-15 {
                    converged = true;
                    break;
                }
            }
        }
        let exact = reduced_objective(&beta, coeffs, freqs);
        if exact <= best.value {
            best.value = exact;
            best.betas = beta.clone();
        }
        best.converged |= converged;
    }
    Ok(best)
}

/// Helper for tests and benches: random coefficients drawn from the default
/// configuration's ranges.
pub fn random_instance<R: Rng + ?Sized>(
    n: usize,
    weights: &ObjectiveWeights,
    ch: &ChannelConfig,
    comp: &ComputeConfig,
    rng: &mut R,
) -> Result<(Vec<ReducedCoefficients>, Vec<f64>)> {
    let mut coeffs = Vec::with_capacity(n);
    let mut freqs = Vec::with_capacity(n);
    for _ in 0..n {
        let d = rng.random_range(10.0..250.0);
        let r = channel::realize_channel(d, ch, rng);
        let p = rng.random_range(ch.p_min()..=ch.p_max());
        freqs.push(rng.random_range(comp.f_min..=comp.f_max));
        coeffs.push(notations(p, r.gain, r.interference, weights, ch, comp)?);
    }
    Ok((coeffs, freqs))
}
