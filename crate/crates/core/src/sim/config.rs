//! Run configuration and its flat TOML file format.
//!
//! Every key is optional in the file; missing keys keep their defaults and
//! unknown keys are rejected. [`RunConfig::to_toml`] writes the fully
//! resolved form, which is also what the config hash covers.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channel::ChannelConfig;
use crate::compute::ComputeConfig;
use crate::error::{Error, Result};
use crate::kkt::ObjectiveWeights;
use crate::mobility::MobilityConfig;
use crate::nn::OptimizerKind;
use crate::pso::PsoConfig;
use crate::sac::{ActionBounds, SacConfig};
use crate::simco::{Augmentation, SimcoConfig};

/// Who picks transmit powers and CPU frequencies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Allocator {
    Sac,
    Pso,
    Random,
}

/// How the base station merges received models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregator {
    Bfssl,
    Uniform,
    DropBlurred,
}

/// Named comparison runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Baseline {
    Pso,
    UniformAgg,
    DropAgg,
    RandomAlloc,
}

impl Baseline {
    pub const ALL: [Baseline; 4] = [Baseline::Pso, Baseline::UniformAgg, Baseline::DropAgg, Baseline::RandomAlloc];

    pub fn name(self) -> &'static str {
        match self {
            Baseline::Pso => "pso",
            Baseline::UniformAgg => "uniform-agg",
            Baseline::DropAgg => "drop-agg",
            Baseline::RandomAlloc => "random-alloc",
        }
    }

    /// Substitute this baseline's allocator or aggregator into `cfg`.
    pub fn apply(self, cfg: &mut RunConfig) {
        match self {
            Baseline::Pso => cfg.allocator = Allocator::Pso,
            Baseline::UniformAgg => cfg.aggregator = Aggregator::Uniform,
            Baseline::DropAgg => cfg.aggregator = Aggregator::DropBlurred,
            Baseline::RandomAlloc => cfg.allocator = Allocator::Random,
        }
    }
}

impl std::str::FromStr for Baseline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Baseline::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown baseline {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    /// N
    pub vehicles: usize,
    /// K_max
    pub episodes: usize,
    /// S_max
    pub slots: usize,
    /// Slots replayed in test mode.
    pub test_slots: usize,
    pub allocator: Allocator,
    pub aggregator: Aggregator,
    pub mobility: MobilityConfig,
    pub channel: ChannelConfig,
    pub compute: ComputeConfig,
    pub weights: ObjectiveWeights,
    pub sac: SacConfig,
    pub simco: SimcoConfig,
    pub pso: PsoConfig,
    /// ϑ₁
    pub penalty_power: f64,
    /// ϑ₂
    pub penalty_iterations: f64,
    /// s·H/Q, h/km.
    pub blur_coeff: f64,
    /// Velocity above which captured data is blurred, km/h.
    pub blur_threshold: f64,
    /// Share of a blurred vehicle's samples that are corrupted.
    pub corrupt_fraction: f64,
    /// Blend towards the mean per unit blur level.
    pub blur_blend: f64,
    /// Noise std per unit blur level.
    pub blur_noise: f64,
    pub samples_per_vehicle: usize,
    pub pool_samples: usize,
    pub data_separation: f64,
    pub data_noise: f64,
    /// Seeds the augmentations used when scoring the global model.
    pub eval_seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            vehicles: 2,
            episodes: 200,
            slots: 20,
            test_slots: 50,
            allocator: Allocator::Sac,
            aggregator: Aggregator::Bfssl,
            mobility: MobilityConfig::default(),
            channel: ChannelConfig::default(),
            compute: ComputeConfig::default(),
            weights: ObjectiveWeights::default(),
            sac: SacConfig::default(),
            simco: SimcoConfig::default(),
            pso: PsoConfig::default(),
            penalty_power: 0.05,
            penalty_iterations: 5e-5,
            blur_coeff: 0.01,
            blur_threshold: 100.0,
            corrupt_fraction: 0.2,
            blur_blend: 0.5,
            blur_noise: 0.5,
            samples_per_vehicle: 256,
            pool_samples: 4096,
            data_separation: 6.0,
            data_noise: 1.0,
            eval_seed: 12345,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.vehicles == 0 || self.episodes == 0 || self.slots == 0 {
            return bad("vehicles, episodes and slots must all be >= 1".into());
        }
        if self.sac.update_every == 0 || self.sac.target_every == 0 {
            return bad("update cadences must be >= 1".into());
        }
        if self.samples_per_vehicle < 2 {
            return bad("local datasets need at least two samples".into());
        }
        if self.pool_samples < self.samples_per_vehicle {
            return bad(format!(
                "pool_samples ({}) must be >= samples_per_vehicle ({})",
                self.pool_samples, self.samples_per_vehicle
            ));
        }
        if !(0.0..=1.0).contains(&self.corrupt_fraction) {
            return bad(format!("corrupt_fraction must lie in [0, 1], got {}", self.corrupt_fraction));
        }
        if !(self.blur_coeff >= 0.0 && self.blur_blend >= 0.0 && self.blur_noise >= 0.0) {
            return bad("blur parameters must be >= 0".into());
        }
        if !(self.penalty_power >= 0.0 && self.penalty_iterations >= 0.0) {
            return bad("penalty coefficients must be >= 0".into());
        }
        if !(self.data_noise >= 0.0 && self.data_separation >= 0.0) {
            return bad("data_noise and data_separation must be >= 0".into());
        }
        self.mobility.validate()?;
        self.channel.validate()?;
        self.compute.validate()?;
        self.weights.validate()?;
        self.sac.validate()?;
        self.simco.validate()?;
        self.pso.validate()
    }

    pub fn bounds(&self) -> ActionBounds {
        ActionBounds {
            vehicles: self.vehicles,
            p_min: self.channel.p_min(),
            p_max: self.channel.p_max(),
            f_min: self.compute.f_min,
            f_max: self.compute.f_max,
        }
    }

    pub fn total_rounds(&self) -> usize {
        self.episodes * self.slots
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: ConfigFile = toml::from_str(text).map_err(|e| Error::ConfigParse(e.to_string()))?;
        let mut cfg = RunConfig::default();
        file.apply(&mut cfg);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    /// Fully resolved flat TOML.
    pub fn to_toml(&self) -> String {
        toml::to_string(&ConfigFile::from_run(self)).expect("flat config always serialises")
    }

    /// SHA-256 of the resolved TOML, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }
}

macro_rules! flat_config {
    ($($key:ident : $ty:ty => $($path:ident).+ ;)*) => {
        /// On-disk form: one optional key per setting.
        #[derive(Debug, Default, Serialize, Deserialize)]
        #[serde(deny_unknown_fields)]
        pub struct ConfigFile {
            $(
                #[serde(default, skip_serializing_if = "Option::is_none")]
                pub $key: Option<$ty>,
            )*
        }

        impl ConfigFile {
            pub fn apply(self, cfg: &mut RunConfig) {
                $(if let Some(v) = self.$key { cfg.$($path).+ = v; })*
            }

            pub fn from_run(cfg: &RunConfig) -> Self {
                Self { $($key: Some(cfg.$($path).+.clone()),)* }
            }
        }
    };
}

flat_config! {
    seed: u64 => seed;
    vehicles: usize => vehicles;
    episodes: usize => episodes;
    slots: usize => slots;
    test_slots: usize => test_slots;
    allocator: Allocator => allocator;
    aggregator: Aggregator => aggregator;

    v_min: f64 => mobility.v_min;
    v_max: f64 => mobility.v_max;
    velocity_mu: f64 => mobility.mu;
    velocity_sigma2: f64 => mobility.sigma2;
    turn_probs: [f64; 3] => mobility.turn_probs;
    bs_position: [f64; 2] => mobility.bs_position;
    slot_duration: f64 => mobility.slot_duration;
    spawn_radius: f64 => mobility.spawn_radius;
    coverage_radius: f64 => mobility.coverage_radius;
    d_floor: f64 => mobility.d_floor;

    uplink_bandwidth: f64 => channel.uplink_bandwidth;
    noise_dbm: f64 => channel.noise_dbm;
    shadow_std_db: f64 => channel.shadow_std_db;
    waterfall_threshold: f64 => channel.waterfall_threshold;
    error_cap: f64 => channel.error_cap;
    model_size_bits: f64 => channel.model_size_bits;
    p_min_dbm: f64 => channel.p_min_dbm;
    p_max_dbm: f64 => channel.p_max_dbm;
    interferer_count: usize => channel.interferer_count;
    interferer_power: f64 => channel.interferer_power;
    interferer_distance: f64 => channel.interferer_distance;

    kappa: f64 => compute.kappa;
    cycles_per_round: f64 => compute.cycles_per_round;
    round_duration: f64 => compute.round_duration;
    max_trans_delay: f64 => compute.max_trans_delay;
    f_min: f64 => compute.f_min;
    f_max: f64 => compute.f_max;

    lambda1: f64 => weights.lambda1;
    lambda2: f64 => weights.lambda2;
    penalty_power: f64 => penalty_power;
    penalty_iterations: f64 => penalty_iterations;

    sac_hidden_layers: usize => sac.hidden_layers;
    sac_hidden_width: usize => sac.hidden_width;
    sac_gamma: f64 => sac.gamma;
    sac_tau: f64 => sac.tau;
    sac_actor_lr: f64 => sac.actor_lr;
    sac_critic_lr: f64 => sac.critic_lr;
    sac_alpha_lr: f64 => sac.alpha_lr;
    sac_optimizer: OptimizerKind => sac.optimizer;
    sac_initial_alpha: f64 => sac.initial_alpha;
    sac_target_entropy: Option<f64> => sac.target_entropy;
    sac_batch_size: usize => sac.batch_size;
    sac_replay_capacity: usize => sac.replay_capacity;
    sac_update_every: usize => sac.update_every;
    sac_target_every: usize => sac.target_every;
    sac_gradient_steps: Option<usize> => sac.gradient_steps;
    sac_log_std_min: f64 => sac.log_std_min;
    sac_log_std_max: f64 => sac.log_std_max;
    sac_attenuation_log_scale: f64 => sac.attenuation_log_scale;
    sac_velocity_scale: f64 => sac.velocity_scale;

    ssl_tau_alpha: f64 => simco.tau_alpha;
    ssl_tau_beta: f64 => simco.tau_beta;
    ssl_negatives: usize => simco.negatives;
    ssl_input_dim: usize => simco.input_dim;
    ssl_hidden_dim: usize => simco.hidden_dim;
    ssl_feature_dim: usize => simco.feature_dim;
    ssl_proj_hidden_dim: usize => simco.proj_hidden_dim;
    ssl_embed_dim: usize => simco.embed_dim;
    ssl_lr: f64 => simco.lr;
    ssl_momentum: f64 => simco.momentum;
    ssl_lr_stages: usize => simco.lr_stages;
    ssl_anchor_aug: Augmentation => simco.anchor_aug;
    ssl_positive_aug: Augmentation => simco.positive_aug;
    ssl_aug_noise_std: f64 => simco.aug_noise_std;
    ssl_aug_mask_prob: f64 => simco.aug_mask_prob;
    ssl_grad_clip: f64 => simco.grad_clip;

    pso_max_iterations: usize => pso.max_iterations;
    pso_inertia: f64 => pso.inertia;
    pso_personal_coeff: f64 => pso.personal_coeff;
    pso_social_coeff: f64 => pso.social_coeff;
    pso_lower: f64 => pso.lower;
    pso_upper: f64 => pso.upper;
    pso_swarm_size: usize => pso.swarm_size;

    blur_coeff: f64 => blur_coeff;
    blur_threshold: f64 => blur_threshold;
    corrupt_fraction: f64 => corrupt_fraction;
    blur_blend: f64 => blur_blend;
    blur_noise: f64 => blur_noise;
    samples_per_vehicle: usize => samples_per_vehicle;
    pool_samples: usize => pool_samples;
    data_separation: f64 => data_separation;
    data_noise: f64 => data_noise;
    eval_seed: u64 => eval_seed;
}
