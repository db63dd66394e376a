//! Uplink channel: path loss, shadowing, fast fading, Shannon rate,
//! transmission cost, and the CRC data-error model.

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    /// B^U, Hz.
    pub uplink_bandwidth: f64,
    /// Noise power over the whole uplink band, dBm.
    pub noise_dbm: f64,
    /// Shadow-fading standard deviation, dB.
    pub shadow_std_db: f64,
    /// Waterfall threshold `m`.
    pub waterfall_threshold: f64,
    /// Cap on the data-error probability.
    pub error_cap: f64,
    /// Uploaded model size, bits.
    pub model_size_bits: f64,
    pub p_min_dbm: f64,
    pub p_max_dbm: f64,
    pub interferer_count: usize,
    /// Transmit power of each interferer, W.
    pub interferer_power: f64,
    /// Distance of the interferers from the BS, m.
    pub interferer_distance: f64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            uplink_bandwidth: 2e6,
            noise_dbm: -114.0,
            shadow_std_db: 8.0,
            waterfall_threshold: 0.023,
            error_cap: 0.2,
            model_size_bits: 11.2e6,
            p_min_dbm: 5.0,
            p_max_dbm: 23.0,
            interferer_count: 0,
            interferer_power: 0.2,
            interferer_distance: 1500.0,
        }
    }
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<()> {
        ensure(self.uplink_bandwidth > 0.0, || "uplink_bandwidth must be > 0".into())?;
        ensure(self.error_cap > 0.0 && self.error_cap < 1.0, || {
            format!("error_cap must lie in (0, 1), got {}", self.error_cap)
        })?;
        ensure(self.p_min_dbm < self.p_max_dbm, || "p_min must be < p_max".into())?;
        ensure(self.waterfall_threshold > 0.0, || "waterfall_threshold must be > 0".into())?;
        ensure(self.model_size_bits > 0.0, || "model_size_bits must be > 0".into())?;
        ensure(self.shadow_std_db >= 0.0, || "shadow_std_db must be >= 0".into())?;
        ensure(self.interferer_power >= 0.0, || "interferer_power must be >= 0".into())?;
        ensure(self.interferer_distance > 0.0, || "interferer_distance must be > 0".into())
    }

    /// N0 in W/Hz.
    pub fn noise_psd(&self) -> f64 {
        self.noise_power() / self.uplink_bandwidth
    }

    /// B^U·N0 in W.
    pub fn noise_power(&self) -> f64 {
        dbm_to_watts(self.noise_dbm)
    }

    pub fn p_min(&self) -> f64 {
        dbm_to_watts(self.p_min_dbm)
    }

    pub fn p_max(&self) -> f64 {
        dbm_to_watts(self.p_max_dbm)
    }
}

/// One vehicle's channel in one slot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelRealization {
    pub path_loss_db: f64,
    pub shadow_db: f64,
    /// Exponential fast-fading power `g`.
    pub fast_fading: f64,
    /// Linear attenuation 𝒥 = 10^((PL + shadow)/10).
    pub attenuation: f64,
    /// Channel power gain h = g / 𝒥.
    pub gain: f64,
    /// Interference power at the BS, W.
    pub interference: f64,
}

impl ChannelRealization {
    /// Assemble a realization from explicit fading values.
    pub fn from_parts(distance: f64, shadow_db: f64, fast_fading: f64, interference: f64) -> Self {
        let path_loss_db = path_loss_db(distance);
        let attenuation = db_to_linear(path_loss_db + shadow_db);
        Self { path_loss_db, shadow_db, fast_fading, attenuation, gain: fast_fading / attenuation, interference }
    }
}

/// Large-scale path loss in dB, distance in metres.
pub fn path_loss_db(distance: f64) -> f64 {
    128.1 + 37.6 * (distance / 1000.0).log10()
}

/// Draw shadowing, fast fading and interference for one link.
///
/// The interferer draws are consumed even when there are no interferers so
/// that changing `interferer_count` leaves the other draws aligned.
pub fn realize_channel<R: Rng + ?Sized>(distance: f64, cfg: &ChannelConfig, rng: &mut R) -> ChannelRealization {
    let shadow_db = cfg.shadow_std_db * Distribution::<f64>::sample(&StandardNormal, rng);
    let fast: f64 = Exp1.sample(rng);
    let int_shadow_db = cfg.shadow_std_db * Distribution::<f64>::sample(&StandardNormal, rng);
    let int_fast: f64 = Exp1.sample(rng);
    let int_gain = int_fast / db_to_linear(path_loss_db(cfg.interferer_distance) + int_shadow_db);
    let interference = cfg.interferer_count as f64 * cfg.interferer_power * int_gain;
    ChannelRealization::from_parts(distance, shadow_db, fast, interference)
}

/// Noise-plus-interference seen by the BS, W.
fn disturbance(i: f64, cfg: &ChannelConfig) -> f64 {
    i + cfg.noise_power()
}

pub fn sinr(p: f64, h: f64, i: f64, cfg: &ChannelConfig) -> f64 {
    p * h / disturbance(i, cfg)
}

/// Shannon rate in bit/s for bandwidth share `beta`.
pub fn transmission_rate(p: f64, h: f64, i: f64, beta: f64, cfg: &ChannelConfig) -> f64 {
    beta * cfg.uplink_bandwidth * sinr(p, h, i, cfg).ln_1p()
}

/// Upload delay (s) and energy (J) for one model.
pub fn transmission_delay_energy(p: f64, h: f64, i: f64, beta: f64, cfg: &ChannelConfig) -> Result<(f64, f64)> {
    let rate = transmission_rate(p, h, i, beta, cfg);
    if !(rate > 0.0) {
        return Err(Error::UnreachableLink);
    }
    let delay = cfg.model_size_bits / rate;
    Ok((delay, p * delay))
}

/// Probability that the BS receives a corrupted model.
pub fn error_probability(p: f64, h: f64, i: f64, cfg: &ChannelConfig) -> f64 {
    -(-cfg.waterfall_threshold * disturbance(i, cfg) / (p * h)).exp_m1()
}

/// Power at which the error probability equals the cap.
pub fn p_tau(h: f64, i: f64, cfg: &ChannelConfig) -> f64 {
    -cfg.waterfall_threshold * disturbance(i, cfg) / (h * (-cfg.error_cap).ln_1p())
}

/// Bernoulli(1 - ε) upload outcome; `true` means received.
pub fn success_indicator<R: Rng + ?Sized>(p: f64, h: f64, i: f64, cfg: &ChannelConfig, rng: &mut R) -> bool {
    success_with_error(error_probability(p, h, i, cfg), rng)
}

pub fn success_with_error<R: Rng + ?Sized>(eps: f64, rng: &mut R) -> bool {
    rng.random::<f64>() >= eps
}
