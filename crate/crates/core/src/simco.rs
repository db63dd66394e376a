//! Toy SimCo: encoder with projection head, dual-temperature contrastive
//! loss with stop-gradient reweighting, and local momentum-SGD training.
//!
//! For anchor `i` of a batch, the positive is a second augmented view of the
//! same sample and the negatives are the other samples of the batch passed
//! through the encoder without augmentation.

use std::f64::consts::PI;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::aggregate::ModelParams;
use crate::error::{Error, Result};
use crate::nn::{Activation, Mlp, Tape};
use crate::rng::SimRng;

/// Row-major set of input vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub dim: usize,
    pub data: Vec<f64>,
}

impl Dataset {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(Error::DimensionMismatch { expected: dim, got: data.len() });
        }
        Ok(Self { dim, data })
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for i in 0..self.len() {
            for (a, b) in m.iter_mut().zip(self.row(i)) {
                *a += b;
            }
        }
        let n = self.len().max(1) as f64;
        m.iter_mut().for_each(|v| *v /= n);
        m
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        let mut data = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Dataset { dim: self.dim, data }
    }
}

/// Two Gaussian clusters at `±separation/2` along a random unit direction.
/// Returns the samples and their cluster labels.
pub fn two_cluster_dataset<R: Rng + ?Sized>(
    n: usize,
    dim: usize,
    separation: f64,
    noise_std: f64,
    rng: &mut R,
) -> Result<(Dataset, Vec<usize>)> {
    let mut dir: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
    let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
    dir.iter_mut().for_each(|v| *v /= norm);
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % 2;
        let sign = if label == 0 { 0.5 } else { -0.5 };
        for d in &dir {
            let z: f64 = StandardNormal.sample(rng);
            data.push(sign * separation * d + noise_std * z);
        }
        labels.push(label);
    }
    Ok((Dataset::new(dim, data)?, labels))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Augmentation {
    None,
    /// Additive Gaussian noise.
    Noise,
    /// Zero each coordinate independently.
    Mask,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimcoConfig {
    pub tau_alpha: f64,
    pub tau_beta: f64,
    /// Negatives per anchor; the batch holds `negatives + 1` samples.
    pub negatives: usize,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub feature_dim: usize,
    pub proj_hidden_dim: usize,
    /// Dimension of the normalised embedding.
    pub embed_dim: usize,
    pub lr: f64,
    pub momentum: f64,
    /// Number of steps in the stepped cosine schedule.
    pub lr_stages: usize,
    pub anchor_aug: Augmentation,
    pub positive_aug: Augmentation,
    pub aug_noise_std: f64,
    pub aug_mask_prob: f64,
    /// Local gradients are rescaled to at most this norm; 0 disables.
    pub grad_clip: f64,
}

impl Default for SimcoConfig {
    fn default() -> Self {
        Self {
            tau_alpha: 0.1,
            tau_beta: 1.0,
            negatives: 31,
            input_dim: 16,
            hidden_dim: 64,
            feature_dim: 64,
            proj_hidden_dim: 64,
            embed_dim: 128,
            lr: 0.06,
            momentum: 0.9,
            lr_stages: 10,
            anchor_aug: Augmentation::Noise,
            positive_aug: Augmentation::Mask,
            aug_noise_std: 0.1,
            aug_mask_prob: 0.2,
            grad_clip: 10.0,
        }
    }
}

impl SimcoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.tau_alpha > 0.0 && self.tau_beta > 0.0) {
            return bad("temperatures must be > 0");
        }
        if self.negatives == 0 {
            return bad("negatives must be >= 1");
        }
        if [self.input_dim, self.hidden_dim, self.feature_dim, self.proj_hidden_dim, self.embed_dim].contains(&0) {
            return bad("encoder dimensions must be >= 1");
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return bad("need lr > 0 and momentum in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.aug_mask_prob) || self.aug_noise_std < 0.0 {
            return bad("invalid augmentation parameters");
        }
        if !(self.grad_clip >= 0.0) {
            return bad("grad_clip must be >= 0");
        }
        Ok(())
    }

    /// Stepped cosine decay of the learning rate over `total` rounds.
    pub fn lr_at(&self, round: usize, total: usize) -> f64 {
        if total == 0 || self.lr_stages == 0 {
            return self.lr;
        }
        let stages = self.lr_stages as f64;
        let stage = ((round.min(total) as f64 / total as f64) * stages).floor().min(stages - 1.0);
        self.lr * 0.5 * (1.0 + (PI * stage / stages).cos())
    }
}

/// Encoder followed by the projection head; the parameter layout is that of
/// the underlying [`Mlp`] (layer by layer, weights then biases).
#[derive(Debug, Clone, PartialEq)]
pub struct ToyEncoder {
    pub net: Mlp,
}

impl ToyEncoder {
    fn arch(cfg: &SimcoConfig) -> (Vec<usize>, Vec<Activation>) {
        (
            vec![cfg.input_dim, cfg.hidden_dim, cfg.feature_dim, cfg.proj_hidden_dim, cfg.embed_dim],
            vec![Activation::Relu, Activation::Relu, Activation::Relu, Activation::Identity],
        )
    }

    pub fn new<R: Rng + ?Sized>(cfg: &SimcoConfig, rng: &mut R) -> Result<Self> {
        let (dims, _) = Self::arch(cfg);
        Ok(Self { net: Mlp::new(&dims, 1.0, rng)? })
    }

    pub fn from_params(cfg: &SimcoConfig, params: &ModelParams) -> Result<Self> {
        let (dims, acts) = Self::arch(cfg);
        let mut net = Mlp::zeros(&dims, &acts)?;
        if params.dim() != net.num_params() {
            return Err(Error::DimensionMismatch { expected: net.num_params(), got: params.dim() });
        }
        net.params.copy_from_slice(&params.values);
        Ok(Self { net })
    }

    pub fn params(&self) -> ModelParams {
        ModelParams::new(self.net.params.clone())
    }
}

/// Apply an augmentation to every row.
pub fn augment<R: Rng + ?Sized>(data: &Dataset, aug: Augmentation, cfg: &SimcoConfig, rng: &mut R) -> Dataset {
    let mut out = data.clone();
    match aug {
        Augmentation::None => {}
        Augmentation::Noise => {
            for v in &mut out.data {
                let z: f64 = StandardNormal.sample(rng);
                *v += cfg.aug_noise_std * z;
            }
        }
        Augmentation::Mask => {
            for v in &mut out.data {
                if rng.random::<f64>() < cfg.aug_mask_prob {
                    *v = 0.0;
                }
            }
        }
    }
    out
}

fn normalize_rows(v: &[f64], dim: usize) -> (Vec<f64>, Vec<f64>) {
    let mut z = v.to_vec();
    let mut norms = Vec::with_capacity(v.len() / dim);
    for row in z.chunks_exact_mut(dim) {
        let n = row.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        row.iter_mut().for_each(|x| *x /= n);
        norms.push(n);
    }
    (z, norms)
}

/// Backpropagate through row normalisation `z = v / ‖v‖`.
fn normalize_backward(z: &[f64], norms: &[f64], dz: &[f64], dim: usize) -> Vec<f64> {
    let mut dv = vec![0.0; z.len()];
    for (r, &n) in norms.iter().enumerate() {
        let zr = &z[r * dim..(r + 1) * dim];
        let dzr = &dz[r * dim..(r + 1) * dim];
        let dot: f64 = zr.iter().zip(dzr).map(|(a, b)| a * b).sum();
        for k in 0..dim {
            dv[r * dim + k] = (dzr[k] - zr[k] * dot) / n;
        }
    }
    dv
}

/// Unit-norm embeddings of (optionally augmented) inputs.
pub fn encode<R: Rng + ?Sized>(
    inputs: &Dataset,
    net: &Mlp,
    aug: Augmentation,
    cfg: &SimcoConfig,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if inputs.dim != net.input_dim() {
        return Err(Error::DimensionMismatch { expected: net.input_dim(), got: inputs.dim });
    }
    let x = augment(inputs, aug, cfg, rng);
    let out = net.forward(&x.data, x.len())?;
    Ok(normalize_rows(&out, net.output_dim()).0)
}

/// One anchor with its positive and negatives.
#[derive(Debug, Clone, PartialEq)]
pub struct SimcoBatch {
    pub q: Vec<f64>,
    pub k_pos: Vec<f64>,
    pub k_neg: Vec<Vec<f64>>,
}

/// Softmax statistics of one anchor at one temperature.
struct AnchorTerms {
    /// −log p(positive)
    nll: f64,
    /// ln(1 − p(positive))
    ln_w: f64,
    p_pos: f64,
    p_neg: Vec<f64>,
}

fn anchor_terms(s_pos: f64, s_neg: &[f64], tau: f64) -> AnchorTerms {
    // Logits relative to the positive; the positive contributes exp(0) = 1.
    let rel: Vec<f64> = s_neg.iter().map(|s| (s - s_pos) / tau).collect();
    let top = rel.iter().cloned().fold(0.0f64, f64::max);
    let neg_exp: Vec<f64> = rel.iter().map(|r| (r - top).exp()).collect();
    let neg_sum: f64 = neg_exp.iter().sum();
    let sum = (-top).exp() + neg_sum;
    let nll = top + sum.ln();
    // log Σ exp over the negatives alone stays finite when they underflow.
    let neg_top = rel.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let neg_lse = neg_top + rel.iter().map(|r| (r - neg_top).exp()).sum::<f64>().ln();
    let ln_w = neg_lse - nll;
    AnchorTerms { nll, ln_w, p_pos: (-top).exp() / sum, p_neg: neg_exp.iter().map(|e| e / sum).collect() }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Coefficient `W_β / W_α` and the anchor's `−log p` at `τ_α`.
fn anchor_loss(s_pos: f64, s_neg: &[f64], cfg: &SimcoConfig) -> (f64, f64, AnchorTerms) {
    let a = anchor_terms(s_pos, s_neg, cfg.tau_alpha);
    let coeff = if cfg.tau_alpha == cfg.tau_beta {
        1.0
    } else {
        let b = anchor_terms(s_pos, s_neg, cfg.tau_beta);
        (b.ln_w - a.ln_w).min(700.0).exp()
    };
    (coeff * a.nll, coeff, a)
}

/// `(loss, coefficient)` for one anchor.
pub fn dual_temperature_loss(batch: &SimcoBatch, cfg: &SimcoConfig) -> (f64, f64) {
    let s_pos = dot(&batch.q, &batch.k_pos);
    let s_neg: Vec<f64> = batch.k_neg.iter().map(|k| dot(&batch.q, k)).collect();
    let (loss, coeff, _) = anchor_loss(s_pos, &s_neg, cfg);
    (loss, coeff)
}

/// Gradients of the loss with respect to `q`, `k⁺` and each `k⁻`, with the
/// coefficient held constant.
#[derive(Debug, Clone, PartialEq)]
pub struct SimcoGrad {
    pub q: Vec<f64>,
    pub k_pos: Vec<f64>,
    pub k_neg: Vec<Vec<f64>>,
}

pub fn dual_temperature_grad(batch: &SimcoBatch, cfg: &SimcoConfig) -> SimcoGrad {
    let s_pos = dot(&batch.q, &batch.k_pos);
    let s_neg: Vec<f64> = batch.k_neg.iter().map(|k| dot(&batch.q, k)).collect();
    let (_, coeff, a) = anchor_loss(s_pos, &s_neg, cfg);
    let g_pos = coeff * (a.p_pos - 1.0) / cfg.tau_alpha;
    let mut gq: Vec<f64> = batch.k_pos.iter().map(|k| g_pos * k).collect();
    let mut k_neg = Vec::with_capacity(batch.k_neg.len());
    for (k, p) in batch.k_neg.iter().zip(&a.p_neg) {
        let g = coeff * p / cfg.tau_alpha;
        for (acc, kv) in gq.iter_mut().zip(k) {
            *acc += g * kv;
        }
        k_neg.push(batch.q.iter().map(|qv| g * qv).collect());
    }
    SimcoGrad { q: gq, k_pos: batch.q.iter().map(|qv| g_pos * qv).collect(), k_neg }
}

/// Mean loss over all anchors of a batch of embeddings, the per-anchor
/// coefficients, and gradients with respect to the three embedding sets.
/// With `frozen` the given coefficients replace the computed ones.
#[allow(clippy::type_complexity)]
pub fn batch_loss(
    q: &[f64],
    k_pos: &[f64],
    k_neg: &[f64],
    dim: usize,
    cfg: &SimcoConfig,
    frozen: Option<&[f64]>,
) -> (f64, Vec<f64>, [Vec<f64>; 3]) {
    let b = q.len() / dim;
    let row = |m: &[f64], i: usize| -> Vec<f64> { m[i * dim..(i + 1) * dim].to_vec() };
    let mut dq = vec![0.0; q.len()];
    let mut dkp = vec![0.0; k_pos.len()];
    let mut dkn = vec![0.0; k_neg.len()];
    let mut coeffs = Vec::with_capacity(b);
    let mut loss = 0.0;
    let inv = 1.0 / b as f64;
    for i in 0..b {
        let qi = row(q, i);
        let s_pos = dot(&qi, &k_pos[i * dim..(i + 1) * dim]);
        let others: Vec<usize> = (0..b).filter(|&j| j != i).collect();
        let s_neg: Vec<f64> = others.iter().map(|&j| dot(&qi, &k_neg[j * dim..(j + 1) * dim])).collect();
        let (_, mut coeff, a) = anchor_loss(s_pos, &s_neg, cfg);
        if let Some(f) = frozen {
            coeff = f[i];
        }
        coeffs.push(coeff);
        loss += inv * coeff * a.nll;
        let g_pos = inv * coeff * (a.p_pos - 1.0) / cfg.tau_alpha;
        for k in 0..dim {
            dq[i * dim + k] += g_pos * k_pos[i * dim + k];
            dkp[i * dim + k] += g_pos * qi[k];
        }
        for (&j, p) in others.iter().zip(&a.p_neg) {
            let g = inv * coeff * p / cfg.tau_alpha;
            for k in 0..dim {
                dq[i * dim + k] += g * k_neg[j * dim + k];
                dkn[j * dim + k] += g * qi[k];
            }
        }
    }
    (loss, coeffs, [dq, dkp, dkn])
}

/// The three augmented views of a batch.
#[derive(Debug, Clone)]
pub struct Views {
    pub anchor: Dataset,
    pub positive: Dataset,
    pub negative: Dataset,
}

impl Views {
    pub fn draw<R: Rng + ?Sized>(data: &Dataset, cfg: &SimcoConfig, rng: &mut R) -> Self {
        Self {
            anchor: augment(data, cfg.anchor_aug, cfg, rng),
            positive: augment(data, cfg.positive_aug, cfg, rng),
            negative: data.clone(),
        }
    }
}

/// Loss of the network on fixed views and its parameter gradient.
pub fn views_loss_grad(
    net: &Mlp,
    views: &Views,
    cfg: &SimcoConfig,
    frozen: Option<&[f64]>,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let b = views.anchor.len();
    let dim = net.output_dim();
    let run = |d: &Dataset| -> Result<(Tape, Vec<f64>, Vec<f64>)> {
        let tape = net.forward_tape(&d.data, b)?;
        let (z, n) = normalize_rows(tape.output(), dim);
        Ok((tape, z, n))
    };
    let (ta, za, na) = run(&views.anchor)?;
    let (tp, zp, np) = run(&views.positive)?;
    let (tn, zn, nn) = run(&views.negative)?;
    let (loss, coeffs, [dq, dkp, dkn]) = batch_loss(&za, &zp, &zn, dim, cfg, frozen);
    let mut grad = vec![0.0; net.num_params()];
    net.backward(&ta, &normalize_backward(&za, &na, &dq, dim), &mut grad)?;
    net.backward(&tp, &normalize_backward(&zp, &np, &dkp, dim), &mut grad)?;
    net.backward(&tn, &normalize_backward(&zn, &nn, &dkn, dim), &mut grad)?;
    Ok((loss, coeffs, grad))
}

/// Result of local training.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalOutcome {
    pub params: ModelParams,
    /// Batch loss before each step.
    pub losses: Vec<f64>,
}

/// Momentum SGD with one step per entry of `lrs`.
pub fn local_train_schedule<R: Rng + ?Sized>(
    model: &ModelParams,
    data: &Dataset,
    lrs: &[f64],
    cfg: &SimcoConfig,
    rng: &mut R,
) -> Result<LocalOutcome> {
    if lrs.is_empty() {
        return Ok(LocalOutcome { params: model.clone(), losses: Vec::new() });
    }
    if data.len() < 2 {
        return Err(Error::Config("local dataset needs at least two samples".into()));
    }
    let mut enc = ToyEncoder::from_params(cfg, model)?;
    let batch_size = (cfg.negatives + 1).min(data.len());
    let mut velocity = vec![0.0; enc.net.num_params()];
    let mut losses = Vec::with_capacity(lrs.len());
    for &lr in lrs {
        let batch = if batch_size == data.len() {
            data.clone()
        } else {
            let mut idx = index::sample(rng, data.len(), batch_size).into_vec();
            idx.sort_unstable();
            data.subset(&idx)
        };
        let views = Views::draw(&batch, cfg, rng);
        let (loss, _, mut grad) = views_loss_grad(&enc.net, &views, cfg, None)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("simco loss {loss}")));
        }
        losses.push(loss);
        // An input near the origin maps to a near-zero embedding, where the
        // normalisation gradient is unbounded.
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if cfg.grad_clip > 0.0 && norm > cfg.grad_clip {
            grad.iter_mut().for_each(|g| *g *= cfg.grad_clip / norm);
        }
        for ((p, g), u) in enc.net.params.iter_mut().zip(&grad).zip(velocity.iter_mut()) {
            *u = cfg.momentum * *u + g;
            *p -= lr * *u;
        }
    }
    Ok(LocalOutcome { params: enc.params(), losses })
}

/// `iterations` momentum-SGD steps at a fixed rate.
pub fn local_train<R: Rng + ?Sized>(
    model: &ModelParams,
    data: &Dataset,
    iterations: usize,
    lr: f64,
    cfg: &SimcoConfig,
    rng: &mut R,
) -> Result<LocalOutcome> {
    local_train_schedule(model, data, &vec![lr; iterations], cfg, rng)
}

/// Loss of a model on a dataset with augmentations drawn from a fixed seed.
pub fn eval_loss(model: &ModelParams, data: &Dataset, cfg: &SimcoConfig, seed: u64) -> Result<f64> {
    let enc = ToyEncoder::from_params(cfg, model)?;
    let mut rng = SimRng::seed_from_u64(seed);
    let views = Views::draw(data, cfg, &mut rng);
    let (loss, _, _) = views_loss_grad(&enc.net, &views, cfg, None)?;
    Ok(loss)
}
