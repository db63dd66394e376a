//! Particle swarm minimiser over a box.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sac::ActionBounds;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsoConfig {
    pub max_iterations: usize,
    pub inertia: f64,
    pub personal_coeff: f64,
    pub social_coeff: f64,
    pub lower: f64,
    pub upper: f64,
    pub swarm_size: usize,
}

impl Default for PsoConfig {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            inertia: 0.2,
            personal_coeff: 0.1,
            social_coeff: 0.1,
            lower: 0.0001,
            upper: 1.0,
            swarm_size: 30,
        }
    }
}

impl PsoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 || self.swarm_size == 0 {
            return Err(Error::Config("PSO needs max_iterations >= 1 and swarm_size >= 1".into()));
        }
        if !(self.lower < self.upper) {
            return Err(Error::Config("PSO bounds must satisfy lower < upper".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PsoResult {
    pub position: Vec<f64>,
    pub value: f64,
    /// Best value after initialisation and after each iteration.
    pub trace: Vec<f64>,
}

/// Minimise `objective` over `[lower, upper]^dim`.
pub fn pso_optimize<F, R>(mut objective: F, dim: usize, cfg: &PsoConfig, rng: &mut R) -> Result<PsoResult>
where
    F: FnMut(&[f64]) -> f64,
    R: Rng + ?Sized,
{
    cfg.validate()?;
    let (lo, hi) = (cfg.lower, cfg.upper);
    let span = hi - lo;
    let mut pos: Vec<Vec<f64>> =
        (0..cfg.swarm_size).map(|_| (0..dim).map(|_| rng.random_range(lo..=hi)).collect()).collect();
    let mut vel: Vec<Vec<f64>> =
        (0..cfg.swarm_size).map(|_| (0..dim).map(|_| rng.random_range(-0.1 * span..=0.1 * span)).collect()).collect();
    let mut best_pos = pos.clone();
    let mut best_val: Vec<f64> = pos.iter().map(|p| objective(p)).collect();
    let mut g = 0;
    for i in 1..cfg.swarm_size {
        if best_val[i] < best_val[g] {
            g = i;
        }
    }
    let mut g_pos = best_pos[g].clone();
    let mut g_val = best_val[g];
    if !g_val.is_finite() {
        return Err(Error::NonFinite(format!("PSO objective {g_val}")));
    }
    let mut trace = Vec::with_capacity(cfg.max_iterations + 1);
    trace.push(g_val);
    for _ in 0..cfg.max_iterations {
        for i in 0..cfg.swarm_size {
            for d in 0..dim {
                let (r1, r2): (f64, f64) = (rng.random(), rng.random());
                vel[i][d] = cfg.inertia * vel[i][d]
                    + cfg.personal_coeff * r1 * (best_pos[i][d] - pos[i][d])
                    + cfg.social_coeff * r2 * (g_pos[d] - pos[i][d]);
                pos[i][d] = (pos[i][d] + vel[i][d]).clamp(lo, hi);
            }
            let v = objective(&pos[i]);
            if v < best_val[i] {
                best_val[i] = v;
                best_pos[i].clone_from(&pos[i]);
            }
        }
        // Global best from the personal bests in fixed order.
        for i in 0..cfg.swarm_size {
            if best_val[i] < g_val {
                g_val = best_val[i];
                g_pos.clone_from(&best_pos[i]);
            }
        }
        trace.push(g_val);
    }
    Ok(PsoResult { position: g_pos, value: g_val, trace })
}

/// Affine map of a swarm position (powers first, then frequencies) onto the
/// physical action box.
pub fn position_to_action(x: &[f64], cfg: &PsoConfig, bounds: &ActionBounds) -> (Vec<f64>, Vec<f64>) {
    let n = bounds.vehicles;
    let t = |v: f64| ((v - cfg.lower) / (cfg.upper - cfg.lower)).clamp(0.0, 1.0);
    let powers = x[..n].iter().map(|&v| bounds.p_min + t(v) * (bounds.p_max - bounds.p_min)).collect();
    let freqs = x[n..2 * n].iter().map(|&v| bounds.f_min + t(v) * (bounds.f_max - bounds.f_min)).collect();
    (powers, freqs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn converges_on_convex_bowl() {
        let target = [0.3, 0.7, 0.5, 0.2];
        let cfg = PsoConfig::default();
        let mut rng = stream(1, "pso");
        let mut visited_ok = true;
        let res = pso_optimize(
            |x| {
                visited_ok &= x.iter().all(|&v| (cfg.lower..=cfg.upper).contains(&v));
                x.iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum()
            },
            4,
            &cfg,
            &mut rng,
        )
        .unwrap();
        assert!(visited_ok);
        assert!(res.value < 1e-3, "best {}", res.value);
        assert_eq!(res.trace.len(), cfg.max_iterations + 1);
        assert!(res.trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn deterministic_under_seed() {
        let cfg = PsoConfig { max_iterations: 20, ..Default::default() };
        let f = |x: &[f64]| x.iter().map(|v| (v - 0.4).abs()).sum::<f64>();
        let a = pso_optimize(f, 3, &cfg, &mut stream(2, "pso")).unwrap();
        let b = pso_optimize(f, 3, &cfg, &mut stream(2, "pso")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn positions_map_into_action_box() {
        let cfg = PsoConfig::default();
        let bounds = ActionBounds { vehicles: 2, p_min: 0.003, p_max: 0.2, f_min: 5e7, f_max: 4e8 };
        let (p, f) = position_to_action(&[cfg.lower, 1.0, 0.5, cfg.lower], &cfg, &bounds);
        assert_eq!(p[0], bounds.p_min);
        assert_eq!(p[1], bounds.p_max);
        assert_eq!(f[1], bounds.f_min);
        assert!(f[0] > bounds.f_min && f[0] < bounds.f_max);
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = PsoConfig { lower: 1.0, upper: 1.0, ..Default::default() };
        assert!(pso_optimize(|_| 0.0, 2, &cfg, &mut stream(3, "pso")).is_err());
    }
}
