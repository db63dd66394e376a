//! Motion-blur levels and federated aggregation of local models.

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simco::Dataset;

/// Flat parameter vector of a local or global model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub values: Vec<f64>,
}

impl ModelParams {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlurRecord {
    pub vehicle: usize,
    pub blur_level: f64,
    /// Velocity (km/h) that produced the blur.
    pub velocity: f64,
    pub success: bool,
}

/// `s·H/Q` from focal length, exposure time and pixel size.
pub fn blur_coeff(focal_length: f64, exposure: f64, pixel: f64) -> Result<f64> {
    if !(focal_length > 0.0 && exposure > 0.0 && pixel > 0.0) {
        return Err(Error::Config("focal length, exposure and pixel size must be > 0".into()));
    }
    Ok(focal_length * exposure / pixel)
}

/// Blur level of an image taken at `velocity` km/h.
pub fn blur_level(velocity: f64, coeff: f64) -> f64 {
    coeff * velocity
}

fn check_models(models: &[ModelParams], count: usize) -> Result<usize> {
    if models.len() != count {
        return Err(Error::DimensionMismatch { expected: count, got: models.len() });
    }
    let dim = models.first().map(ModelParams::dim).ok_or(Error::EmptyRound)?;
    if dim == 0 {
        return Err(Error::Config("model dimension must be > 0".into()));
    }
    if let Some(m) = models.iter().find(|m| m.dim() != dim) {
        return Err(Error::DimensionMismatch { expected: dim, got: m.dim() });
    }
    Ok(dim)
}

fn weighted_sum(models: &[ModelParams], weights: &[f64], dim: usize) -> ModelParams {
    let mut out = vec![0.0; dim];
    for (m, &w) in models.iter().zip(weights) {
        if w == 0.0 {
            continue;
        }
        for (o, v) in out.iter_mut().zip(&m.values) {
            *o += w * v;
        }
    }
    ModelParams::new(out)
}

fn uniform_weights(mask: &[bool]) -> Result<Vec<f64>> {
    let count = mask.iter().filter(|&&s| s).count();
    if count == 0 {
        return Err(Error::EmptyRound);
    }
    Ok(mask.iter().map(|&s| if s { 1.0 / count as f64 } else { 0.0 }).collect())
}

/// Blur-based weights, renormalised over successful uploads.
///
/// Each successful vehicle gets `Σ_m 𝓑_m − 𝓑_n`. If those all vanish (a lone
/// vehicle, or zero blur everywhere) the successful vehicles share equally.
pub fn bfssl_weights(blurs: &[BlurRecord]) -> Result<Vec<f64>> {
    let total: f64 = blurs.iter().map(|b| b.blur_level).sum();
    let raw: Vec<f64> = blurs.iter().map(|b| if b.success { (total - b.blur_level).max(0.0) } else { 0.0 }).collect();
    let norm: f64 = raw.iter().sum();
    if norm > 0.0 {
        Ok(raw.iter().map(|w| w / norm).collect())
    } else {
        uniform_weights(&blurs.iter().map(|b| b.success).collect::<Vec<_>>())
    }
}

pub fn aggregate_bfssl(models: &[ModelParams], blurs: &[BlurRecord]) -> Result<ModelParams> {
    let dim = check_models(models, blurs.len())?;
    let w = bfssl_weights(blurs)?;
    Ok(weighted_sum(models, &w, dim))
}

/// Plain average of the successful uploads.
pub fn aggregate_uniform(models: &[ModelParams], successes: &[bool]) -> Result<ModelParams> {
    let dim = check_models(models, successes.len())?;
    let w = uniform_weights(successes)?;
    Ok(weighted_sum(models, &w, dim))
}

/// Average of the successful uploads whose source velocity is at most
/// `threshold` km/h.
pub fn aggregate_drop_blurred(models: &[ModelParams], blurs: &[BlurRecord], threshold: f64) -> Result<ModelParams> {
    let dim = check_models(models, blurs.len())?;
    let mask: Vec<bool> = blurs.iter().map(|b| b.success && b.velocity <= threshold).collect();
    let w = uniform_weights(&mask)?;
    Ok(weighted_sum(models, &w, dim))
}

/// Toy blur operator: convex blend with the dataset mean plus Gaussian noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlurOperator {
    /// Blend weight towards the mean, in [0, 1].
    pub blend: f64,
    pub noise_std: f64,
}

/// Number of samples hit by a corruption fraction.
pub fn corrupted_count(fraction: f64, count: usize) -> usize {
    // Shave rounding noise such as 0.6 * 5 = 3.0000000000000004.
    ((fraction * count as f64 - 1e-9).ceil().max(0.0) as usize).min(count)
}

/// Corrupt `⌈fraction · count⌉` randomly chosen samples. Returns the new
/// dataset and a per-sample flag.
pub fn corrupt_fraction<R: Rng + ?Sized>(
    data: &Dataset,
    fraction: f64,
    op: &BlurOperator,
    rng: &mut R,
) -> Result<(Dataset, Vec<bool>)> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::OutOfRange { name: "corruption fraction", value: fraction, min: 0.0, max: 1.0 });
    }
    let n = data.len();
    let hit = corrupted_count(fraction, n);
    let mut flags = vec![false; n];
    let mut out = data.clone();
    if hit == 0 {
        return Ok((out, flags));
    }
    let mean = data.mean();
    let blend = op.blend.clamp(0.0, 1.0);
    for i in index::sample(rng, n, hit).into_iter() {
        flags[i] = true;
        for (x, m) in out.row_mut(i).iter_mut().zip(&mean) {
            let z: f64 = StandardNormal.sample(rng);
            *x = (1.0 - blend) * *x + blend * m + op.noise_std * z;
        }
    }
    Ok((out, flags))
}
