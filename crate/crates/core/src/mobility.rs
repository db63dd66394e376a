//! Vehicle kinematics around a single signalised intersection.
//!
//! The base station sits at the intersection centre. Vehicles approach along
//! one of the four axis-aligned roads, make one turn decision when they cross
//! the centre, and then keep driving straight until they leave coverage.
//! Velocities are redrawn every slot from a Gaussian truncated to
//! `[v_min, v_max]`.

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::erf::{erf, erfc, erfc_inv};
use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};

use crate::error::{ensure, Error, Result};

const KMH_TO_MS: f64 = 1.0 / 3.6;
const MAX_SAMPLER_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MobilityConfig {
    /// km/h
    pub v_min: f64,
    /// km/h
    pub v_max: f64,
    /// Mean of the parent Gaussian, km/h.
    pub mu: f64,
    /// Variance of the parent Gaussian, (km/h)².
    pub sigma2: f64,
    /// Probabilities of (left, right, straight) at the intersection.
    pub turn_probs: [f64; 3],
    pub bs_position: [f64; 2],
    /// Seconds per slot.
    pub slot_duration: f64,
    /// Distance from the centre at which new vehicles enter, m.
    pub spawn_radius: f64,
    /// Vehicles farther than this after turning are replaced, m.
    pub coverage_radius: f64,
    /// Lower clamp on the BS distance, m.
    pub d_floor: f64,
}

impl Default for MobilityConfig {
    fn default() -> Self {
        Self {
            v_min: 60.0,
            v_max: 150.0,
            mu: 105.0,
            sigma2: 8.0,
            turn_probs: [0.3, 0.3, 0.4],
            bs_position: [0.0, 0.0],
            slot_duration: 0.5,
            spawn_radius: 250.0,
            coverage_radius: 250.0,
            d_floor: 1.0,
        }
    }
}

impl MobilityConfig {
    pub fn validate(&self) -> Result<()> {
        ensure(self.v_min < self.v_max, || format!("v_min ({}) must be < v_max ({})", self.v_min, self.v_max))?;
        ensure(self.sigma2 > 0.0, || "sigma2 must be > 0".into())?;
        ensure(self.turn_probs.iter().all(|&p| p >= 0.0), || "turn probabilities must be non-negative".into())?;
        let sum: f64 = self.turn_probs.iter().sum();
        ensure((sum - 1.0).abs() <= 1e-12, || format!("turn probabilities must sum to 1, got {sum}"))?;
        ensure(self.slot_duration > 0.0, || "slot_duration must be > 0".into())?;
        ensure(self.spawn_radius > 0.0 && self.coverage_radius > 0.0, || {
            "spawn and coverage radii must be > 0".into()
        })?;
        ensure(self.d_floor > 0.0, || "d_floor must be > 0".into())
    }

    pub fn sigma(&self) -> f64 {
        self.sigma2.sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub id: usize,
    pub position: [f64; 2],
    /// Unit direction of travel.
    pub heading: [f64; 2],
    /// km/h
    pub velocity: f64,
    pub has_turned: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Turn {
    Left,
    Right,
    Straight,
}

impl Turn {
    fn apply(self, h: [f64; 2]) -> [f64; 2] {
        match self {
            Turn::Left => [-h[1], h[0]],
            Turn::Right => [h[1], -h[0]],
            Turn::Straight => h,
        }
    }
}

/// Density of the truncated Gaussian velocity law; zero outside the support.
pub fn velocity_pdf(cfg: &MobilityConfig, v: f64) -> f64 {
    if v < cfg.v_min || v > cfg.v_max {
        return 0.0;
    }
    let sigma = cfg.sigma();
    let z = (cfg.v_max - cfg.mu) / (sigma * SQRT_2);
    let w = (cfg.v_min - cfg.mu) / (sigma * SQRT_2);
    let norm = (2.0 * PI * cfg.sigma2).sqrt() * 0.5 * (erf(z) - erf(w));
    (-(v - cfg.mu).powi(2) / (2.0 * cfg.sigma2)).exp() / norm
}

/// Draw one velocity (km/h) from the truncated Gaussian.
pub fn sample_velocity<R: Rng + ?Sized>(cfg: &MobilityConfig, rng: &mut R) -> Result<f64> {
    let sigma = cfg.sigma();
    let a = (cfg.v_min - cfg.mu) / sigma;
    let b = (cfg.v_max - cfg.mu) / sigma;
    let z = standard_truncated(a, b, rng)?;
    Ok((cfg.mu + sigma * z).clamp(cfg.v_min, cfg.v_max))
}

/// Standard normal restricted to `[a, b]`.
fn standard_truncated<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> Result<f64> {
    if a >= 0.0 {
        upper_tail(a, b, rng)
    } else if b <= 0.0 {
        upper_tail(-b, -a, rng).map(|z| -z)
    } else {
        // Interval straddles the mode: invert the CDF directly.
        let lo = 0.5 * erfc(-a * FRAC_1_SQRT_2);
        let hi = 0.5 * erfc(-b * FRAC_1_SQRT_2);
        let u = lo + rng.random::<f64>() * (hi - lo);
        let z = -SQRT_2 * erfc_inv(2.0 * u);
        Ok(z.clamp(a, b))
    }
}

/// Standard normal restricted to `[a, b]` with `0 <= a < b`.
fn upper_tail<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> Result<f64> {
    let sa = 0.5 * erfc(a * FRAC_1_SQRT_2);
    let sb = 0.5 * erfc(b * FRAC_1_SQRT_2);
    if sa > 1e-280 && sa - sb > 1e-12 * sa {
        // Survival-function inversion keeps precision in the tail.
        let u = sb + rng.random::<f64>() * (sa - sb);
        let z = SQRT_2 * erfc_inv(2.0 * u);
        return Ok(z.clamp(a, b));
    }
    if !b.is_finite() || b - a > 1e-9 * a.max(1.0) {
        // Far tail: exponential proposal shifted to `a` (Robert, 1995).
        let lambda = 0.5 * (a + (a * a + 4.0).sqrt());
        for _ in 0..MAX_SAMPLER_ATTEMPTS {
            let u: f64 = 1.0 - rng.random::<f64>();
            let z = a - u.ln() / lambda;
            if z > b {
                continue;
            }
            let accept = (-(z - lambda).powi(2) / 2.0).exp();
            if rng.random::<f64>() <= accept {
                return Ok(z);
            }
        }
        return Err(Error::SamplerExhausted(MAX_SAMPLER_ATTEMPTS));
    }
    Ok(a)
}

pub fn sample_turn<R: Rng + ?Sized>(probs: &[f64; 3], rng: &mut R) -> Turn {
    let u: f64 = rng.random();
    if u < probs[0] {
        Turn::Left
    } else if u < probs[0] + probs[1] {
        Turn::Right
    } else {
        Turn::Straight
    }
}

/// Advance one slot: move at the current velocity, turn once at the centre,
/// then redraw the velocity for the next slot.
pub fn step_vehicle<R: Rng + ?Sized>(state: &VehicleState, cfg: &MobilityConfig, rng: &mut R) -> Result<VehicleState> {
    let mut next = state.clone();
    let travel = state.velocity * KMH_TO_MS * cfg.slot_duration;
    let rel = [state.position[0] - cfg.bs_position[0], state.position[1] - cfg.bs_position[1]];
    // Distance left to the centre along the heading.
    let ahead = -(rel[0] * state.heading[0] + rel[1] * state.heading[1]);
    if !state.has_turned && ahead >= 0.0 && ahead < travel {
        let turn = sample_turn(&cfg.turn_probs, rng);
        let heading = turn.apply(state.heading);
        let rest = travel - ahead;
        next.position = [cfg.bs_position[0] + heading[0] * rest, cfg.bs_position[1] + heading[1] * rest];
        next.heading = heading;
        next.has_turned = true;
    } else {
        next.position = [state.position[0] + state.heading[0] * travel, state.position[1] + state.heading[1] * travel];
    }
    next.velocity = sample_velocity(cfg, rng)?;
    Ok(next)
}

/// Euclidean distance to the BS, never below `d_floor`.
pub fn distance_to_bs(state: &VehicleState, cfg: &MobilityConfig) -> f64 {
    let dx = state.position[0] - cfg.bs_position[0];
    let dy = state.position[1] - cfg.bs_position[1];
    dx.hypot(dy).max(cfg.d_floor)
}

/// True once a vehicle has turned and driven out of coverage.
pub fn has_exited(state: &VehicleState, cfg: &MobilityConfig) -> bool {
    state.has_turned && distance_to_bs(state, cfg) > cfg.coverage_radius
}

const APPROACHES: [[f64; 2]; 4] = [[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]];

/// Place a vehicle on a random approach road heading to the centre.
///
/// With `at_edge` the vehicle enters at the spawn radius, otherwise at a
/// uniform distance along the approach.
pub fn spawn_vehicle<R: Rng + ?Sized>(
    id: usize,
    cfg: &MobilityConfig,
    at_edge: bool,
    rng: &mut R,
) -> Result<VehicleState> {
    let dir = APPROACHES[rng.random_range(0..APPROACHES.len())];
    let dist = if at_edge { cfg.spawn_radius } else { cfg.spawn_radius * rng.random::<f64>() };
    Ok(VehicleState {
        id,
        position: [cfg.bs_position[0] + dir[0] * dist, cfg.bs_position[1] + dir[1] * dist],
        heading: [-dir[0], -dir[1]],
        velocity: sample_velocity(cfg, rng)?,
        has_turned: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    /// Adaptive Simpson on an arbitrary integrand.
    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
        #[allow(clippy::too_many_arguments)]
        fn rec(
            f: &dyn Fn(f64) -> f64,
            a: f64,
            b: f64,
            fa: f64,
            fm: f64,
            fb: f64,
            whole: f64,
            tol: f64,
            depth: u32,
        ) -> f64 {
            let m = 0.5 * (a + b);
            let lm = 0.5 * (a + m);
            let rm = 0.5 * (m + b);
            let flm = f(lm);
            let frm = f(rm);
            let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
            let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
            if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
                return left + right + (left + right - whole) / 15.0;
            }
            rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
                + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
        }
        // Unit-width panels so narrow peaks are never stepped over.
        let panels = ((b - a).ceil() as usize).max(1);
        let h = (b - a) / panels as f64;
        (0..panels)
            .map(|k| {
                let (lo, hi) = (a + k as f64 * h, a + (k + 1) as f64 * h);
                let (fa, fm, fb) = (f(lo), f(0.5 * (lo + hi)), f(hi));
                let whole = (hi - lo) / 6.0 * (fa + 4.0 * fm + fb);
                rec(f, lo, hi, fa, fm, fb, whole, tol / panels as f64, 50)
            })
            .sum()
    }

    #[test]
    fn pdf_zero_outside_support() {
        let cfg = MobilityConfig::default();
        assert_eq!(velocity_pdf(&cfg, cfg.v_max + 1.0), 0.0);
        assert_eq!(velocity_pdf(&cfg, cfg.v_min - 1.0), 0.0);
    }

    #[test]
    fn pdf_integrates_to_one() {
        for (mu, sigma2) in [(105.0, 8.0), (70.0, 400.0), (140.0, 900.0)] {
            let cfg = MobilityConfig { mu, sigma2, ..Default::default() };
            let total = simpson(&|v| velocity_pdf(&cfg, v), cfg.v_min, cfg.v_max, 1e-12);
            assert!((total - 1.0).abs() < 1e-8, "mu={mu}: {total}");
        }
    }

    #[test]
    fn pdf_mode_at_interior_mean() {
        let cfg = MobilityConfig::default();
        let best = (0..=9000)
            .map(|i| 60.0 + i as f64 * 0.01)
            .max_by(|a, b| velocity_pdf(&cfg, *a).total_cmp(&velocity_pdf(&cfg, *b)))
            .unwrap();
        assert!((best - 105.0).abs() < 1e-9);
    }

    #[test]
    fn degenerate_width_collapses_to_mean() {
        let cfg = MobilityConfig { mu: 100.0, sigma2: 1e-12, ..Default::default() };
        let mut rng = stream(1, "t");
        for _ in 0..1000 {
            let v = sample_velocity(&cfg, &mut rng).unwrap();
            assert!((v - 100.0).abs() < 1e-3);
        }
    }

    #[test]
    fn samples_stay_in_bounds() {
        let mut rng = stream(2, "t");
        for cfg in [
            MobilityConfig::default(),
            // mean of 0.5 km/h: the support sits ~20 sigma above the mean
            MobilityConfig { mu: 0.5, ..Default::default() },
            MobilityConfig { mu: 300.0, sigma2: 4.0, ..Default::default() },
        ] {
            for _ in 0..100_000 {
                let v = sample_velocity(&cfg, &mut rng).unwrap();
                assert!((cfg.v_min..=cfg.v_max).contains(&v), "{v}");
            }
        }
    }

    #[test]
    fn sample_mean_matches_quadrature() {
        let cfg = MobilityConfig { mu: 90.0, sigma2: 900.0, ..Default::default() };
        // Oracle: normalise the unnormalised Gaussian kernel numerically.
        let kernel = |v: f64| (-(v - cfg.mu).powi(2) / (2.0 * cfg.sigma2)).exp();
        let z = simpson(&kernel, cfg.v_min, cfg.v_max, 1e-12);
        let mean = simpson(&|v| v * kernel(v), cfg.v_min, cfg.v_max, 1e-10) / z;
        let second = simpson(&|v| v * v * kernel(v), cfg.v_min, cfg.v_max, 1e-8) / z;
        let stderr = ((second - mean * mean) / 1e6).sqrt();

        let mut rng = stream(3, "t");
        let n = 1_000_000;
        let emp = (0..n).map(|_| sample_velocity(&cfg, &mut rng).unwrap()).sum::<f64>() / n as f64;
        assert!((emp - mean).abs() < 3.0 * stderr, "emp {emp} vs {mean} (se {stderr})");
    }

    #[test]
    fn straight_step_displacement() {
        let cfg = MobilityConfig::default();
        let state =
            VehicleState { id: 0, position: [-200.0, 0.0], heading: [1.0, 0.0], velocity: 72.0, has_turned: false };
        let next = step_vehicle(&state, &cfg, &mut stream(4, "t")).unwrap();
        assert!((next.position[0] - (-190.0)).abs() < 1e-12);
        assert_eq!(next.position[1], 0.0);
        assert_eq!(next.heading, state.heading);
    }

    #[test]
    fn turned_vehicle_keeps_heading() {
        let cfg = MobilityConfig::default();
        let mut state =
            VehicleState { id: 0, position: [-5.0, 0.0], heading: [1.0, 0.0], velocity: 100.0, has_turned: true };
        let mut rng = stream(5, "t");
        for _ in 0..50 {
            let next = step_vehicle(&state, &cfg, &mut rng).unwrap();
            assert_eq!(next.heading, [1.0, 0.0]);
            state = next;
        }
    }

    #[test]
    fn crossing_the_centre_turns_exactly_once() {
        let cfg = MobilityConfig::default();
        let state = VehicleState {
            id: 0,
            position: [-5.0, 0.0],
            heading: [1.0, 0.0],
            velocity: 108.0, // 15 m per slot
            has_turned: false,
        };
        let next = step_vehicle(&state, &cfg, &mut stream(6, "t")).unwrap();
        assert!(next.has_turned);
        let norm = next.heading[0].hypot(next.heading[1]);
        assert!((norm - 1.0).abs() < 1e-9);
        // 10 m past the centre along the new heading
        assert!((next.position[0].hypot(next.position[1]) - 10.0).abs() < 1e-9);
    }

    #[test]
    fn turn_frequencies_match_probabilities() {
        let cfg = MobilityConfig::default();
        let mut rng = stream(7, "t");
        let n = 100_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            let state =
                VehicleState { id: 0, position: [-1.0, 0.0], heading: [1.0, 0.0], velocity: 100.0, has_turned: false };
            let next = step_vehicle(&state, &cfg, &mut rng).unwrap();
            match next.heading {
                [0.0, 1.0] => counts[0] += 1,
                [0.0, -1.0] => counts[1] += 1,
                [1.0, 0.0] => counts[2] += 1,
                h => panic!("unexpected heading {h:?}"),
            }
        }
        for (c, p) in counts.iter().zip(cfg.turn_probs) {
            assert!((*c as f64 / n as f64 - p).abs() < 0.01);
        }
    }

    #[test]
    fn distance_cases() {
        let cfg = MobilityConfig { bs_position: [10.0, 10.0], ..Default::default() };
        let mut s =
            VehicleState { id: 0, position: [13.0, 14.0], heading: [1.0, 0.0], velocity: 80.0, has_turned: false };
        assert!((distance_to_bs(&s, &cfg) - 5.0).abs() < 1e-12);
        s.position = cfg.bs_position;
        assert_eq!(distance_to_bs(&s, &cfg), cfg.d_floor);
    }

    #[test]
    fn rejects_bad_config() {
        let bad = MobilityConfig { turn_probs: [0.3, 0.3, 0.5], ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = MobilityConfig { v_min: 150.0, v_max: 60.0, ..Default::default() };
        assert!(bad.validate().is_err());
        assert!(MobilityConfig::default().validate().is_ok());
    }

    proptest::proptest! {
        #[test]
        fn distance_is_translation_invariant(x in -500.0..500.0f64, y in -500.0..500.0f64, sx in -100.0..100.0f64, sy in -100.0..100.0f64) {
            let cfg = MobilityConfig::default();
            let s = VehicleState { id: 0, position: [x, y], heading: [1.0, 0.0], velocity: 80.0, has_turned: false };
            let shifted_cfg = MobilityConfig { bs_position: [sx, sy], ..cfg.clone() };
            let shifted = VehicleState { position: [x + sx, y + sy], ..s.clone() };
            let d0 = distance_to_bs(&s, &cfg);
            let d1 = distance_to_bs(&shifted, &shifted_cfg);
            proptest::prop_assert!((d0 - d1).abs() < 1e-9);
            proptest::prop_assert!(d0 >= cfg.d_floor);
        }
    }
}
