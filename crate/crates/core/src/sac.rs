//! Soft actor-critic over per-vehicle transmit power and CPU frequency.
//!
//! The actor maps the normalised state to a mean and log-std per action
//! dimension. Actions are squashed with `tanh` into `[-1, 1]` and mapped
//! affinely onto the physical bounds; log-probabilities and critic inputs
//! use the squashed value `y`.

use std::f64::consts::{LN_2, PI};

use log::warn;
use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Mlp, Optimizer, OptimizerKind, Tape};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SacConfig {
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub gamma: f64,
    /// Soft-update rate δ of the target critics.
    pub tau: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub alpha_lr: f64,
    pub optimizer: OptimizerKind,
    pub initial_alpha: f64,
    /// Defaults to `-dim(action)` when unset.
    pub target_entropy: Option<f64>,
    pub batch_size: usize,
    pub replay_capacity: usize,
    /// Episodes between update events (K_u).
    pub update_every: usize,
    /// Update iterations between target refreshes (K_t).
    pub target_every: usize,
    /// Gradient steps per update event; defaults to the slots per episode.
    pub gradient_steps: Option<usize>,
    pub log_std_min: f64,
    pub log_std_max: f64,
    /// Attenuation enters the network as log10(𝒥) / this.
    pub attenuation_log_scale: f64,
    /// Velocity enters the network as v / this.
    pub velocity_scale: f64,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            hidden_layers: 4,
            hidden_width: 512,
            gamma: 0.99,
            tau: 0.001,
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            alpha_lr: 3e-4,
            optimizer: OptimizerKind::Sgd,
            initial_alpha: 1.0,
            target_entropy: None,
            batch_size: 256,
            replay_capacity: 100_000,
            update_every: 2,
            target_every: 80,
            gradient_steps: None,
            log_std_min: -20.0,
            log_std_max: 2.0,
            attenuation_log_scale: 15.0,
            velocity_scale: 150.0,
        }
    }
}

impl SacConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.hidden_width == 0 {
            return bad("hidden_width must be >= 1");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau must lie in (0, 1]");
        }
        if !(self.initial_alpha > 0.0) {
            return bad("initial_alpha must be > 0");
        }
        if self.batch_size == 0 || self.replay_capacity == 0 {
            return bad("batch_size and replay_capacity must be >= 1");
        }
        if self.update_every == 0 || self.target_every == 0 {
            return bad("update_every and target_every must be >= 1");
        }
        if self.log_std_min >= self.log_std_max {
            return bad("log_std_min must be below log_std_max");
        }
        if !(self.attenuation_log_scale > 0.0 && self.velocity_scale > 0.0) {
            return bad("state scales must be > 0");
        }
        Ok(())
    }

    fn layer_dims(&self, input: usize, output: usize) -> Vec<usize> {
        let mut dims = vec![input];
        dims.extend(std::iter::repeat(self.hidden_width).take(self.hidden_layers));
        dims.push(output);
        dims
    }
}

/// Physical action box for `n` vehicles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionBounds {
    pub vehicles: usize,
    pub p_min: f64,
    pub p_max: f64,
    pub f_min: f64,
    pub f_max: f64,
}

impl ActionBounds {
    pub fn dim(&self) -> usize {
        2 * self.vehicles
    }

    /// Map squashed values (powers first, then frequencies) to physical units.
    pub fn to_physical(&self, y: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let map = |y: f64, lo: f64, hi: f64| (lo + 0.5 * (y + 1.0) * (hi - lo)).clamp(lo, hi);
        let n = self.vehicles;
        let powers = y[..n].iter().map(|&v| map(v, self.p_min, self.p_max)).collect();
        let freqs = y[n..2 * n].iter().map(|&v| map(v, self.f_min, self.f_max)).collect();
        (powers, freqs)
    }

    /// Inverse of [`to_physical`](Self::to_physical).
    pub fn to_normalized(&self, powers: &[f64], freqs: &[f64]) -> Vec<f64> {
        let inv = |x: f64, lo: f64, hi: f64| 2.0 * (x - lo) / (hi - lo) - 1.0;
        powers
            .iter()
            .map(|&p| inv(p, self.p_min, self.p_max))
            .chain(freqs.iter().map(|&f| inv(f, self.f_min, self.f_max)))
            .collect()
    }
}

/// Observation: per-vehicle attenuation 𝒥 and velocity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SacState {
    pub attenuation: Vec<f64>,
    /// km/h
    pub velocities: Vec<f64>,
}

impl SacState {
    pub fn dim(&self) -> usize {
        self.attenuation.len() + self.velocities.len()
    }

    /// Network input: log10(𝒥)/scale followed by v/scale.
    pub fn features(&self, cfg: &SacConfig) -> Vec<f64> {
        self.attenuation
            .iter()
            .map(|a| a.log10() / cfg.attenuation_log_scale)
            .chain(self.velocities.iter().map(|v| v / cfg.velocity_scale))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SacAction {
    /// W
    pub powers: Vec<f64>,
    /// Hz
    pub frequencies: Vec<f64>,
    /// Pre-squash values.
    pub raw: Vec<f64>,
}

impl SacAction {
    /// Squashed values in `[-1, 1]`, as fed to the critics.
    pub fn squashed(&self) -> Vec<f64> {
        self.raw.iter().map(|u| u.tanh()).collect()
    }

    /// Build an action from physical values (for transitions produced by
    /// other allocators).
    pub fn from_physical(powers: Vec<f64>, frequencies: Vec<f64>, bounds: &ActionBounds) -> Self {
        let raw = bounds
            .to_normalized(&powers, &frequencies)
            .into_iter()
            .map(|y| y.clamp(-1.0 + 1e-12, 1.0 - 1e-12).atanh())
            .collect();
        Self { powers, frequencies, raw }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: SacState,
    pub action: SacAction,
    pub reward: f64,
    pub next_state: SacState,
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    items: Vec<Transition>,
    capacity: usize,
    cursor: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self { items: Vec::with_capacity(capacity.min(4096)), capacity: capacity.max(1), cursor: 0 }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Store a transition, overwriting the oldest once full.
    pub fn push(&mut self, t: Transition) -> Result<()> {
        if !t.reward.is_finite() {
            return Err(Error::NonFinite(format!("reward {}", t.reward)));
        }
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.cursor] = t;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
        Ok(())
    }

    /// Distinct indices, at most `size` of them.
    pub fn sample_indices<R: Rng + ?Sized>(&self, size: usize, rng: &mut R) -> Vec<usize> {
        let size = size.min(self.items.len());
        index::sample(rng, self.items.len(), size).into_vec()
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.items[i]
    }

    pub fn sample<R: Rng + ?Sized>(&self, size: usize, cfg: &SacConfig, rng: &mut R) -> Batch {
        let idx = self.sample_indices(size, rng);
        Batch::from_transitions(idx.iter().map(|&i| &self.items[i]), cfg)
    }
}

/// Row-major minibatch of features.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub size: usize,
    pub state_dim: usize,
    pub action_dim: usize,
    pub states: Vec<f64>,
    /// Squashed actions.
    pub actions: Vec<f64>,
    pub rewards: Vec<f64>,
    pub next_states: Vec<f64>,
}

impl Batch {
    pub fn from_transitions<'a>(items: impl Iterator<Item = &'a Transition>, cfg: &SacConfig) -> Self {
        let mut b = Batch {
            size: 0,
            state_dim: 0,
            action_dim: 0,
            states: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            next_states: Vec::new(),
        };
        for t in items {
            let s = t.state.features(cfg);
            let a = t.action.squashed();
            b.state_dim = s.len();
            b.action_dim = a.len();
            b.states.extend(s);
            b.actions.extend(a);
            b.rewards.push(t.reward);
            b.next_states.extend(t.next_state.features(cfg));
            b.size += 1;
        }
        b
    }
}

/// `−ln(1 − tanh(u)²)`, stable for large |u|.
fn squash_correction(u: f64) -> f64 {
    let softplus = |x: f64| if x > 30.0 { x } else { x.exp().ln_1p() };
    -2.0 * (LN_2 - u - softplus(-2.0 * u))
}

/// A reparameterised draw from the policy for a batch of states.
#[derive(Debug, Clone)]
pub struct PolicySample {
    pub tape: Tape,
    pub batch: usize,
    pub dim: usize,
    pub eps: Vec<f64>,
    pub log_std: Vec<f64>,
    /// Whether the log-std was clamped (no gradient flows).
    pub clamped: Vec<bool>,
    pub raw: Vec<f64>,
    pub y: Vec<f64>,
    pub log_prob: Vec<f64>,
}

/// Log-density of `y = tanh(μ + σε)` in squashed space.
pub fn squashed_log_prob(eps: f64, log_std: f64, u: f64) -> f64 {
    -0.5 * eps * eps - log_std - 0.5 * (2.0 * PI).ln() + squash_correction(u)
}

/// Run the actor and draw one action per state. With `noise = None` the
/// mean action is returned (ε = 0).
pub fn policy_sample<R: Rng + ?Sized>(
    actor: &Mlp,
    states: &[f64],
    batch: usize,
    cfg: &SacConfig,
    rng: Option<&mut R>,
) -> Result<PolicySample> {
    let dim = actor.output_dim() / 2;
    let tape = actor.forward_tape(states, batch)?;
    let out = tape.output();
    if let Some(bad) = out.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("actor output {bad}")));
    }
    let mut eps = vec![0.0; batch * dim];
    if let Some(rng) = rng {
        for e in &mut eps {
            *e = StandardNormal.sample(rng);
        }
    }
    let mut log_std = vec![0.0; batch * dim];
    let mut clamped = vec![false; batch * dim];
    let mut raw = vec![0.0; batch * dim];
    let mut y = vec![0.0; batch * dim];
    let mut log_prob = vec![0.0; batch];
    for b in 0..batch {
        let row = &out[b * 2 * dim..(b + 1) * 2 * dim];
        for i in 0..dim {
            let k = b * dim + i;
            let ls_raw = row[dim + i];
            let ls = ls_raw.clamp(cfg.log_std_min, cfg.log_std_max);
            clamped[k] = ls != ls_raw;
            log_std[k] = ls;
            raw[k] = row[i] + ls.exp() * eps[k];
            y[k] = raw[k].tanh();
            log_prob[b] += squashed_log_prob(eps[k], ls, raw[k]);
        }
    }
    Ok(PolicySample { tape, batch, dim, eps, log_std, clamped, raw, y, log_prob })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionMode {
    Stochastic,
    Deterministic,
}

/// Choose an allocation for one state.
pub fn select_action<R: Rng + ?Sized>(
    state: &SacState,
    actor: &Mlp,
    mode: ActionMode,
    bounds: &ActionBounds,
    cfg: &SacConfig,
    rng: &mut R,
) -> Result<(SacAction, f64)> {
    let x = state.features(cfg);
    if x.len() != actor.input_dim() {
        return Err(Error::DimensionMismatch { expected: actor.input_dim(), got: x.len() });
    }
    let s = match mode {
        ActionMode::Stochastic => policy_sample(actor, &x, 1, cfg, Some(rng))?,
        ActionMode::Deterministic => policy_sample::<R>(actor, &x, 1, cfg, None)?,
    };
    let (powers, frequencies) = bounds.to_physical(&s.y);
    Ok((SacAction { powers, frequencies, raw: s.raw }, s.log_prob[0]))
}

fn critic_input(states: &[f64], actions: &[f64], batch: usize) -> Vec<f64> {
    let sd = states.len() / batch.max(1);
    let ad = actions.len() / batch.max(1);
    let mut x = Vec::with_capacity(batch * (sd + ad));
    for b in 0..batch {
        x.extend_from_slice(&states[b * sd..(b + 1) * sd]);
        x.extend_from_slice(&actions[b * ad..(b + 1) * ad]);
    }
    x
}

/// `r + γ (min Q_target(s', a') − α log π(a'|s'))` with `a' ~ π(·|s')`.
#[allow(clippy::too_many_arguments)]
pub fn critic_target<R: Rng + ?Sized>(
    next_states: &[f64],
    rewards: &[f64],
    actor: &Mlp,
    targets: (&Mlp, &Mlp),
    alpha: f64,
    gamma: f64,
    cfg: &SacConfig,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let batch = rewards.len();
    if batch == 0 {
        return Err(Error::Config("empty batch".into()));
    }
    if gamma == 0.0 {
        return Ok(rewards.to_vec());
    }
    let s = policy_sample(actor, next_states, batch, cfg, Some(rng))?;
    let x = critic_input(next_states, &s.y, batch);
    let q1 = targets.0.forward(&x, batch)?;
    let q2 = targets.1.forward(&x, batch)?;
    Ok((0..batch).map(|b| rewards[b] + gamma * (q1[b].min(q2[b]) - alpha * s.log_prob[b])).collect())
}

/// One descent step of a critic on the mean squared TD error; returns the
/// loss before the step.
pub fn critic_step(
    critic: &mut Mlp,
    opt: &mut Optimizer,
    states: &[f64],
    actions: &[f64],
    targets: &[f64],
) -> Result<f64> {
    let batch = targets.len();
    let x = critic_input(states, actions, batch);
    let tape = critic.forward_tape(&x, batch)?;
    let q = tape.output();
    let mut loss = 0.0;
    let mut up = vec![0.0; batch];
    for b in 0..batch {
        let d = q[b] - targets[b];
        loss += d * d / batch as f64;
        up[b] = 2.0 * d / batch as f64;
    }
    let mut grad = vec![0.0; critic.num_params()];
    critic.backward(&tape, &up, &mut grad)?;
    opt.step(&mut critic.params, &grad);
    Ok(loss)
}

/// Update both critics towards shared targets.
pub fn update_critics(
    batch: &Batch,
    critics: (&mut Mlp, &mut Mlp),
    opts: (&mut Optimizer, &mut Optimizer),
    targets: &[f64],
) -> Result<[f64; 2]> {
    let l1 = critic_step(critics.0, opts.0, &batch.states, &batch.actions, targets)?;
    let l2 = critic_step(critics.1, opts.1, &batch.states, &batch.actions, targets)?;
    Ok([l1, l2])
}

/// `∂ min(Q1, Q2) / ∂a` and the minimum itself, per row.
pub fn min_q_action_grad(
    critics: (&Mlp, &Mlp),
    states: &[f64],
    actions: &[f64],
    batch: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let x = critic_input(states, actions, batch);
    let in_dim = x.len() / batch;
    let sd = states.len() / batch;
    let ad = actions.len() / batch;
    let t1 = critics.0.forward_tape(&x, batch)?;
    let t2 = critics.1.forward_tape(&x, batch)?;
    let (q1, q2) = (t1.output(), t2.output());
    let mut up1 = vec![0.0; batch];
    let mut up2 = vec![0.0; batch];
    let mut qmin = vec![0.0; batch];
    for b in 0..batch {
        if q1[b] <= q2[b] {
            up1[b] = 1.0;
            qmin[b] = q1[b];
        } else {
            up2[b] = 1.0;
            qmin[b] = q2[b];
        }
    }
    let mut scratch1 = vec![0.0; critics.0.num_params()];
    let mut scratch2 = vec![0.0; critics.1.num_params()];
    let d1 = critics.0.backward(&t1, &up1, &mut scratch1)?;
    let d2 = critics.1.backward(&t2, &up2, &mut scratch2)?;
    let mut ga = vec![0.0; batch * ad];
    for b in 0..batch {
        for i in 0..ad {
            ga[b * ad + i] = d1[b * in_dim + sd + i] + d2[b * in_dim + sd + i];
        }
    }
    Ok((ga, qmin))
}

/// Actor loss `mean[α log π(a'|s) − min Q(s, a')]` and its gradient with
/// respect to the actor parameters, holding the critics fixed.
pub fn actor_loss_grad(
    actor: &Mlp,
    critics: (&Mlp, &Mlp),
    states: &[f64],
    sample: &PolicySample,
    alpha: f64,
) -> Result<(f64, Vec<f64>)> {
    let (batch, dim) = (sample.batch, sample.dim);
    let (gq, qmin) = min_q_action_grad(critics, states, &sample.y, batch)?;
    let inv = 1.0 / batch as f64;
    let mut loss = 0.0;
    let mut up = vec![0.0; batch * 2 * dim];
    for b in 0..batch {
        loss += inv * (alpha * sample.log_prob[b] - qmin[b]);
        for i in 0..dim {
            let k = b * dim + i;
            let y = sample.y[k];
            let dy_du = 1.0 - y * y;
            let sig_eps = sample.log_std[k].exp() * sample.eps[k];
            up[b * 2 * dim + i] = inv * (alpha * 2.0 * y - gq[k] * dy_du);
            if !sample.clamped[k] {
                up[b * 2 * dim + dim + i] = inv * (alpha * (-1.0 + 2.0 * y * sig_eps) - gq[k] * dy_du * sig_eps);
            }
        }
    }
    let mut grad = vec![0.0; actor.num_params()];
    actor.backward(&sample.tape, &up, &mut grad)?;
    Ok((loss, grad))
}

/// One actor descent step with a fresh reparameterised draw. Returns the
/// loss and the batch-mean log-probability.
#[allow(clippy::too_many_arguments)]
pub fn update_actor<R: Rng + ?Sized>(
    states: &[f64],
    batch: usize,
    actor: &mut Mlp,
    opt: &mut Optimizer,
    critics: (&Mlp, &Mlp),
    alpha: f64,
    cfg: &SacConfig,
    rng: &mut R,
) -> Result<(f64, f64)> {
    let sample = policy_sample(actor, states, batch, cfg, Some(rng))?;
    let (loss, grad) = actor_loss_grad(actor, critics, states, &sample, alpha)?;
    opt.step(&mut actor.params, &grad);
    let mean_lp = sample.log_prob.iter().sum::<f64>() / batch as f64;
    Ok((loss, mean_lp))
}

/// Descend `J(α) = mean[−α (log π + H̃)]` in log-space; returns the new α.
pub fn update_alpha(log_alpha: &mut f64, opt: &mut Optimizer, log_probs: &[f64], target_entropy: f64) -> f64 {
    let alpha = log_alpha.exp();
    let mean = log_probs.iter().map(|lp| lp + target_entropy).sum::<f64>() / log_probs.len().max(1) as f64;
    let grad = -alpha * mean;
    let mut p = [*log_alpha];
    opt.step(&mut p, &[grad]);
    *log_alpha = p[0];
    log_alpha.exp()
}

/// `target ← δ·source + (1−δ)·target`.
pub fn soft_update(target: &mut Mlp, source: &Mlp, delta: f64) -> Result<()> {
    if !target.same_architecture(source) {
        return Err(Error::ArchitectureMismatch(format!("{:?} vs {:?}", target.dims(), source.dims())));
    }
    if delta == 1.0 {
        target.params.copy_from_slice(&source.params);
        return Ok(());
    }
    for (t, s) in target.params.iter_mut().zip(&source.params) {
        *t += delta * (s - *t);
    }
    Ok(())
}

/// Losses and diagnostics of one update iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub critic_loss: [f64; 2],
    pub actor_loss: f64,
    pub alpha: f64,
    pub mean_log_prob: f64,
}

/// Actor, twin critics, twin targets and the entropy temperature.
#[derive(Debug, Clone)]
pub struct SacAgent {
    pub cfg: SacConfig,
    pub bounds: ActionBounds,
    pub actor: Mlp,
    pub critic1: Mlp,
    pub critic2: Mlp,
    pub target1: Mlp,
    pub target2: Mlp,
    pub log_alpha: f64,
    opt_actor: Optimizer,
    opt_critic1: Optimizer,
    opt_critic2: Optimizer,
    opt_alpha: Optimizer,
    /// Completed update iterations.
    pub iterations: u64,
}

impl SacAgent {
    pub fn new<R: Rng + ?Sized>(cfg: SacConfig, bounds: ActionBounds, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let sd = 2 * bounds.vehicles;
        let ad = bounds.dim();
        let actor = Mlp::new(&cfg.layer_dims(sd, 2 * ad), 0.1, rng)?;
        let critic1 = Mlp::new(&cfg.layer_dims(sd + ad, 1), 1.0, rng)?;
        let critic2 = Mlp::new(&cfg.layer_dims(sd + ad, 1), 1.0, rng)?;
        Ok(Self::from_networks(cfg, bounds, actor, critic1, critic2))
    }

    /// Assemble an agent around existing networks; targets start as copies
    /// of the critics.
    pub fn from_networks(cfg: SacConfig, bounds: ActionBounds, actor: Mlp, critic1: Mlp, critic2: Mlp) -> Self {
        let kind = cfg.optimizer;
        Self {
            opt_actor: Optimizer::new(kind, cfg.actor_lr, actor.num_params()),
            opt_critic1: Optimizer::new(kind, cfg.critic_lr, critic1.num_params()),
            opt_critic2: Optimizer::new(kind, cfg.critic_lr, critic2.num_params()),
            opt_alpha: Optimizer::new(kind, cfg.alpha_lr, 1),
            log_alpha: cfg.initial_alpha.ln(),
            target1: critic1.clone(),
            target2: critic2.clone(),
            actor,
            critic1,
            critic2,
            cfg,
            bounds,
            iterations: 0,
        }
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    pub fn target_entropy(&self) -> f64 {
        self.cfg.target_entropy.unwrap_or(-(self.bounds.dim() as f64))
    }

    pub fn act<R: Rng + ?Sized>(&self, state: &SacState, mode: ActionMode, rng: &mut R) -> Result<(SacAction, f64)> {
        select_action(state, &self.actor, mode, &self.bounds, &self.cfg, rng)
    }

    /// One update iteration on a sampled minibatch: temperature, actor,
    /// critics, then targets every `target_every` iterations.
    pub fn update_step<R: Rng + ?Sized>(&mut self, buffer: &ReplayBuffer, rng: &mut R) -> Result<UpdateStats> {
        if buffer.is_empty() {
            return Err(Error::Config("replay buffer is empty".into()));
        }
        let batch = buffer.sample(self.cfg.batch_size, &self.cfg, rng);
        self.update_on_batch(&batch, rng)
    }

    pub fn update_on_batch<R: Rng + ?Sized>(&mut self, batch: &Batch, rng: &mut R) -> Result<UpdateStats> {
        let n = batch.size;
        let probe = policy_sample(&self.actor, &batch.states, n, &self.cfg, Some(&mut *rng))?;
        let entropy = self.target_entropy();
        let alpha = update_alpha(&mut self.log_alpha, &mut self.opt_alpha, &probe.log_prob, entropy);

        let (actor_loss, grad) =
            actor_loss_grad(&self.actor, (&self.critic1, &self.critic2), &batch.states, &probe, alpha)?;
        self.opt_actor.step(&mut self.actor.params, &grad);
        let mean_log_prob = probe.log_prob.iter().sum::<f64>() / n as f64;

        let targets = critic_target(
            &batch.next_states,
            &batch.rewards,
            &self.actor,
            (&self.target1, &self.target2),
            alpha,
            self.cfg.gamma,
            &self.cfg,
            rng,
        )?;
        let critic_loss = update_critics(
            batch,
            (&mut self.critic1, &mut self.critic2),
            (&mut self.opt_critic1, &mut self.opt_critic2),
            &targets,
        )?;

        self.iterations += 1;
        if self.iterations % self.cfg.target_every as u64 == 0 {
            soft_update(&mut self.target1, &self.critic1, self.cfg.tau)?;
            soft_update(&mut self.target2, &self.critic2, self.cfg.tau)?;
        }
        if !(actor_loss.is_finite() && critic_loss.iter().all(|l| l.is_finite())) {
            warn!("non-finite SAC loss at iteration {}", self.iterations);
            return Err(Error::NonFinite(format!("actor {actor_loss}, critics {critic_loss:?}")));
        }
        Ok(UpdateStats { critic_loss, actor_loss, alpha, mean_log_prob })
    }
}

/// Shaped per-slot reward: negative cost, power-floor penalty, iteration bonus.
pub fn reward(objective: f64, p_stars: &[f64], iteration_counts: &[usize], penalties: (f64, f64), p_min: f64) -> f64 {
    let floor_gap: f64 = p_stars.iter().map(|p| p - p_min).sum();
    let iters: f64 = iteration_counts.iter().map(|&n| n as f64).sum();
    -(objective + penalties.0 * floor_gap) + penalties.1 * iters
}
