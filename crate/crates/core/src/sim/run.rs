//! Training, test and baseline loops.

use std::path::Path;

use log::info;
use rand::Rng;

use super::clock::SlotClock;
use super::config::{Allocator, Baseline, RunConfig};
use super::env::{EnvStreams, Environment, SlotReport};
use super::metrics::{self, MetricsRow, Summary};
use crate::aggregate::ModelParams;
use crate::checkpoint;
use crate::error::{Error, Result};
use crate::nn::Mlp;
use crate::pso;
use crate::rng::{stream, SimRng, Streams};
use crate::sac::{self, ActionMode, ReplayBuffer, SacAction, SacAgent, Transition};

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub global: ModelParams,
    /// Present when the SAC allocator was used.
    pub agent: Option<SacAgent>,
    pub metrics: Vec<MetricsRow>,
    pub summary: Summary,
}

enum Policy<'a> {
    Learn(Box<SacAgent>),
    Frozen(&'a Mlp),
    Pso,
    Random,
}

fn split_streams(seed: u64) -> (EnvStreams, SimRng, SimRng) {
    let s = Streams::new(seed);
    let env = EnvStreams {
        mobility: s.mobility,
        channel: s.channel,
        success: s.success,
        ssl: s.ssl,
        data: stream(seed, "data"),
    };
    (env, s.sac, s.allocator)
}

fn row(clock: SlotClock, report: &SlotReport) -> MetricsRow {
    let cost = &report.outcome.cost;
    MetricsRow {
        episode: clock.episode,
        slot: clock.slot,
        round: clock.round,
        objective: cost.objective,
        total_energy: cost.total_energy,
        max_delay: cost.max_delay,
        reward: report.outcome.reward,
        total_iterations: report.outcome.iterations.iter().sum(),
        successes: report.successes.iter().filter(|&&s| s).count(),
        mean_blur: report.mean_blur(),
        global_loss: report.global_loss,
    }
}

fn run_loop(cfg: &RunConfig, mode: &str, mut policy: Policy<'_>, total_slots: usize) -> Result<RunOutput> {
    cfg.validate()?;
    let (env_streams, mut sac_rng, mut alloc_rng) = split_streams(cfg.seed);
    let mut env = Environment::new(cfg, env_streams, &mut stream(cfg.seed, "model-init"))?;
    let bounds = cfg.bounds();
    let mut buffer = ReplayBuffer::new(cfg.sac.replay_capacity);
    let mut rows = Vec::with_capacity(total_slots);
    let mut empty_rounds = 0;

    for i in 0..total_slots {
        let clock = SlotClock::nth(i, cfg.slots);
        let state = env.state();
        let action = match &mut policy {
            Policy::Learn(agent) => agent.act(&state, ActionMode::Stochastic, &mut sac_rng)?.0,
            Policy::Frozen(actor) => {
                sac::select_action(&state, actor, ActionMode::Deterministic, &bounds, &cfg.sac, &mut sac_rng)?.0
            }
            Policy::Pso => {
                let best = pso::pso_optimize(
                    |x| {
                        let (p, f) = pso::position_to_action(x, &cfg.pso, &bounds);
                        env.evaluate(&p, &f).map_or(f64::INFINITY, |o| -o.reward)
                    },
                    bounds.dim(),
                    &cfg.pso,
                    &mut alloc_rng,
                )?;
                let (p, f) = pso::position_to_action(&best.position, &cfg.pso, &bounds);
                SacAction::from_physical(p, f, &bounds)
            }
            Policy::Random => {
                let y: Vec<f64> = (0..bounds.dim()).map(|_| alloc_rng.random_range(-1.0..=1.0)).collect();
                let (p, f) = bounds.to_physical(&y);
                SacAction::from_physical(p, f, &bounds)
            }
        };
        let report = env.step(&action.powers, &action.frequencies, clock.round)?;
        empty_rounds += usize::from(report.empty_round);
        let r = row(clock, &report);
        if !r.is_finite() {
            return Err(Error::NonFinite(format!("metrics row {r:?}")));
        }
        rows.push(r);

        if let Policy::Learn(agent) = &mut policy {
            buffer.push(Transition { state, action, reward: report.outcome.reward, next_state: env.state() })?;
            let episode_done = clock.slot == cfg.slots;
            if episode_done && clock.episode % cfg.sac.update_every == 0 {
                let steps = cfg.sac.gradient_steps.unwrap_or(cfg.slots);
                let mut last = None;
                for _ in 0..steps {
                    last = Some(agent.update_step(&buffer, &mut sac_rng)?);
                }
                if let Some(s) = last {
                    info!(
                        "episode {}: reward {:.4}, actor loss {:.4}, critic loss {:.4}, alpha {:.4}",
                        clock.episode,
                        metrics::mean_tail_reward(&rows, cfg.slots),
                        s.actor_loss,
                        s.critic_loss[0],
                        s.alpha
                    );
                }
            }
        }
    }

    let (agent, updates) = match policy {
        Policy::Learn(agent) => {
            let n = agent.iterations;
            (Some(*agent), n)
        }
        _ => (None, 0),
    };
    let summary = Summary::new(mode, cfg.hash(), &rows, cfg.slots, empty_rounds, updates);
    Ok(RunOutput { global: env.global, agent, metrics: rows, summary })
}

fn allocator_policy<'a>(cfg: &RunConfig) -> Result<Policy<'a>> {
    Ok(match cfg.allocator {
        Allocator::Sac => {
            let agent = SacAgent::new(cfg.sac.clone(), cfg.bounds(), &mut stream(cfg.seed, "sac-init"))?;
            Policy::Learn(Box::new(agent))
        }
        Allocator::Pso => Policy::Pso,
        Allocator::Random => Policy::Random,
    })
}

/// Full training run with the configured allocator and aggregator.
pub fn run_training(cfg: &RunConfig) -> Result<RunOutput> {
    cfg.validate()?;
    run_loop(cfg, "train", allocator_policy(cfg)?, cfg.total_rounds())
}

/// Training loop with one component swapped for a baseline.
pub fn run_baseline(cfg: &RunConfig, which: Baseline) -> Result<RunOutput> {
    let mut cfg = cfg.clone();
    which.apply(&mut cfg);
    cfg.validate()?;
    let policy = allocator_policy(&cfg)?;
    run_loop(&cfg, &format!("baseline:{}", which.name()), policy, cfg.total_rounds())
}

/// Replay a trained actor deterministically for `test_slots` slots, without
/// any network update.
pub fn run_test(cfg: &RunConfig, actor: &Mlp) -> Result<RunOutput> {
    cfg.validate()?;
    let (sd, ad) = (2 * cfg.vehicles, 2 * cfg.bounds().dim());
    if actor.input_dim() != sd || actor.output_dim() != ad {
        return Err(Error::ArchitectureMismatch(format!(
            "actor maps {} -> {}, configuration needs {sd} -> {ad}",
            actor.input_dim(),
            actor.output_dim()
        )));
    }
    run_loop(cfg, "test", Policy::Frozen(actor), cfg.test_slots)
}

/// Write metrics, summary, resolved config and checkpoints into `dir`.
pub fn write_outputs(out: &RunOutput, cfg: &RunConfig, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    metrics::write_csv_file(&out.metrics, &dir.join("metrics.csv"))?;
    out.summary.write_json(&dir.join("summary.json"))?;
    std::fs::write(dir.join("config.toml"), cfg.to_toml())?;
    checkpoint::save_params(&out.global, &dir.join("global.ckpt"))?;
    if let Some(agent) = &out.agent {
        checkpoint::save_mlp(&agent.actor, &dir.join("actor.ckpt"))?;
        checkpoint::save_mlp(&agent.critic1, &dir.join("critic1.ckpt"))?;
        checkpoint::save_mlp(&agent.critic2, &dir.join("critic2.ckpt"))?;
    }
    Ok(())
}
