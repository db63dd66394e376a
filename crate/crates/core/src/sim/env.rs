//! The vehicular federated-learning environment stepped once per slot.

use log::{debug, info};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rayon::prelude::*;

use super::config::{Aggregator, RunConfig};
use crate::aggregate::{self, BlurOperator, BlurRecord, ModelParams};
use crate::channel::{self, ChannelRealization};
use crate::error::{Error, Result};
use crate::kkt::{self, AllocationAction, CostBreakdown};
use crate::mobility::{self, VehicleState};
use crate::rng::SimRng;
use crate::sac::{self, SacState};
use crate::simco::{self, Dataset, ToyEncoder};

/// Cost and reward of one allocation on fixed channels.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotOutcome {
    pub betas: Vec<f64>,
    pub cost: CostBreakdown,
    pub p_stars: Vec<f64>,
    pub iterations: Vec<usize>,
    pub reward: f64,
}

/// Price an allocation: closed-form bandwidth shares, slot objective and
/// the shaped reward.
pub fn evaluate_allocation(
    cfg: &RunConfig,
    powers: &[f64],
    freqs: &[f64],
    channels: &[ChannelRealization],
) -> Result<SlotOutcome> {
    let n = channels.len();
    if powers.len() != n || freqs.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: powers.len().min(freqs.len()) });
    }
    let coeffs = channels
        .iter()
        .zip(powers)
        .map(|(r, &p)| kkt::notations(p, r.gain, r.interference, &cfg.weights, &cfg.channel, &cfg.compute))
        .collect::<Result<Vec<_>>>()?;
    let betas = match kkt::kkt_beta(&coeffs, freqs) {
        Ok(b) => b,
        Err(Error::DegenerateInstance) => {
            debug!("degenerate bandwidth instance, sharing equally");
            vec![1.0 / n as f64; n]
        }
        Err(e) => return Err(e),
    };
    let action = AllocationAction { powers: powers.to_vec(), frequencies: freqs.to_vec(), betas };
    let (value, cost) = kkt::objective(&action, channels, &cfg.weights, &cfg.channel, &cfg.compute)?;
    let p_stars: Vec<f64> =
        channels.iter().map(|r| kkt::p_star_unchecked(r.gain, r.interference, &cfg.channel)).collect();
    let iterations: Vec<usize> = cost.vehicles.iter().map(|v| v.iterations).collect();
    let reward =
        sac::reward(value, &p_stars, &iterations, (cfg.penalty_power, cfg.penalty_iterations), cfg.channel.p_min());
    Ok(SlotOutcome { betas: action.betas, cost, p_stars, iterations, reward })
}

#[derive(Debug, Clone)]
pub struct Vehicle {
    pub state: VehicleState,
    /// Velocity during the previous slot; drives the blur of the data the
    /// vehicle trains on.
    pub prev_velocity: f64,
    pub data: Dataset,
}

/// Random streams consumed by the environment.
#[derive(Debug, Clone)]
pub struct EnvStreams {
    pub mobility: SimRng,
    pub channel: SimRng,
    pub success: SimRng,
    pub ssl: SimRng,
    pub data: SimRng,
}

/// What happened in one slot.
#[derive(Debug, Clone)]
pub struct SlotReport {
    pub outcome: SlotOutcome,
    pub successes: Vec<bool>,
    pub blurs: Vec<BlurRecord>,
    pub empty_round: bool,
    pub global_loss: f64,
}

impl SlotReport {
    pub fn mean_blur(&self) -> f64 {
        self.blurs.iter().map(|b| b.blur_level).sum::<f64>() / self.blurs.len() as f64
    }
}

#[derive(Debug, Clone)]
pub struct Environment {
    cfg: RunConfig,
    streams: EnvStreams,
    pub vehicles: Vec<Vehicle>,
    pub channels: Vec<ChannelRealization>,
    pool: Dataset,
    pub global: ModelParams,
    next_id: usize,
}

impl Environment {
    pub fn new(cfg: &RunConfig, mut streams: EnvStreams, init_rng: &mut SimRng) -> Result<Self> {
        cfg.validate()?;
        let (pool, _) = simco::two_cluster_dataset(
            cfg.pool_samples,
            cfg.simco.input_dim,
            cfg.data_separation,
            cfg.data_noise,
            &mut streams.data,
        )?;
        let global = ToyEncoder::new(&cfg.simco, init_rng)?.params();
        let mut env = Self {
            cfg: cfg.clone(),
            pool,
            streams,
            vehicles: Vec::with_capacity(cfg.vehicles),
            channels: Vec::with_capacity(cfg.vehicles),
            global,
            next_id: 0,
        };
        for _ in 0..cfg.vehicles {
            let v = env.spawn(false)?;
            env.vehicles.push(v);
        }
        env.channels = env.realize();
        Ok(env)
    }

    fn spawn(&mut self, at_edge: bool) -> Result<Vehicle> {
        let state = mobility::spawn_vehicle(self.next_id, &self.cfg.mobility, at_edge, &mut self.streams.mobility)?;
        self.next_id += 1;
        let mut idx = index::sample(&mut self.streams.data, self.pool.len(), self.cfg.samples_per_vehicle).into_vec();
        idx.sort_unstable();
        Ok(Vehicle { prev_velocity: state.velocity, state, data: self.pool.subset(&idx) })
    }

    fn realize(&mut self) -> Vec<ChannelRealization> {
        let mob = &self.cfg.mobility;
        self.vehicles
            .iter()
            .map(|v| {
                channel::realize_channel(
                    mobility::distance_to_bs(&v.state, mob),
                    &self.cfg.channel,
                    &mut self.streams.channel,
                )
            })
            .collect()
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn state(&self) -> SacState {
        SacState {
            attenuation: self.channels.iter().map(|c| c.attenuation).collect(),
            velocities: self.vehicles.iter().map(|v| v.state.velocity).collect(),
        }
    }

    pub fn evaluate(&self, powers: &[f64], freqs: &[f64]) -> Result<SlotOutcome> {
        evaluate_allocation(&self.cfg, powers, freqs, &self.channels)
    }

    /// Apply an allocation for global round `round` (1-based): train, upload,
    /// aggregate, then move the vehicles and redraw their channels.
    pub fn step(&mut self, powers: &[f64], freqs: &[f64], round: usize) -> Result<SlotReport> {
        let cfg = &self.cfg;
        let outcome = self.evaluate(powers, freqs)?;
        let successes: Vec<bool> = self
            .channels
            .iter()
            .zip(powers)
            .map(|(c, &p)| {
                channel::success_indicator(p, c.gain, c.interference, &cfg.channel, &mut self.streams.success)
            })
            .collect();
        let blurs: Vec<BlurRecord> = self
            .vehicles
            .iter()
            .zip(&successes)
            .map(|(v, &success)| BlurRecord {
                vehicle: v.state.id,
                blur_level: aggregate::blur_level(v.prev_velocity, cfg.blur_coeff),
                velocity: v.prev_velocity,
                success,
            })
            .collect();

        let lr = cfg.simco.lr_at(round.saturating_sub(1), cfg.total_rounds());
        let seeds: Vec<u64> = self.vehicles.iter().map(|_| self.streams.ssl.random()).collect();
        let global = &self.global;
        let locals = self
            .vehicles
            .par_iter()
            .zip(&blurs)
            .zip(&outcome.iterations)
            .zip(&seeds)
            .map(|(((v, b), &iters), &seed)| {
                let mut rng = SimRng::seed_from_u64(seed);
                let data = if b.velocity > cfg.blur_threshold {
                    let op = BlurOperator {
                        blend: (cfg.blur_blend * b.blur_level).min(1.0),
                        noise_std: cfg.blur_noise * b.blur_level,
                    };
                    aggregate::corrupt_fraction(&v.data, cfg.corrupt_fraction, &op, &mut rng)?.0
                } else {
                    v.data.clone()
                };
                let params = simco::local_train(global, &data, iters, lr, &cfg.simco, &mut rng)?.params;
                Ok((params, data))
            })
            .collect::<Result<Vec<(ModelParams, Dataset)>>>()?;
        let (locals, train_sets): (Vec<ModelParams>, Vec<Dataset>) = locals.into_iter().unzip();

        let merged = match cfg.aggregator {
            Aggregator::Bfssl => aggregate::aggregate_bfssl(&locals, &blurs),
            Aggregator::Uniform => aggregate::aggregate_uniform(&locals, &successes),
            Aggregator::DropBlurred => aggregate::aggregate_drop_blurred(&locals, &blurs, cfg.blur_threshold),
        };
        let empty_round = match merged {
            Ok(m) => {
                self.global = m;
                false
            }
            Err(Error::EmptyRound) => {
                info!("round {round}: no usable upload, keeping the global model");
                true
            }
            Err(e) => return Err(e),
        };
        // Loss of the new global model on the data the vehicles trained on
        // this slot, blurred samples included.
        let global_loss = train_sets
            .iter()
            .map(|d| simco::eval_loss(&self.global, d, &cfg.simco, cfg.eval_seed))
            .sum::<Result<f64>>()?
            / train_sets.len() as f64;

        for i in 0..self.vehicles.len() {
            let v = &self.vehicles[i];
            let moved = mobility::step_vehicle(&v.state, &self.cfg.mobility, &mut self.streams.mobility)?;
            if mobility::has_exited(&moved, &self.cfg.mobility) {
                self.vehicles[i] = self.spawn(true)?;
            } else {
                let v = &mut self.vehicles[i];
                v.prev_velocity = v.state.velocity;
                v.state = moved;
            }
        }
        self.channels = self.realize();
        Ok(SlotReport { outcome, successes, blurs, empty_round, global_loss })
    }
}
