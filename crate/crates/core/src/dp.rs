//! Sensitivity-bounding primitives: norm clipping, per-agent Gaussian
//! noising, and the distortion estimate for the clip+noise pipeline.

use alloc::format;
#[allow(unused_imports)]
use num_traits::Float;
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::params::ParamVector;
use crate::rng::next_standard_normal;

/// Privacy knobs for one experiment.
///
/// Exactly one of `noise_multiplier` and `target_epsilon` must be set; a
/// target epsilon is resolved to a multiplier by the accountant before any
/// round runs.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DpConfig {
    /// Clipping threshold S on the l2 norm of uploaded updates.
    pub clip_threshold: f64,
    pub noise_multiplier: Option<f64>,
    pub target_epsilon: Option<f64>,
    /// Per-round agent sampling probability.
    pub sample_prob: f64,
    pub delta: f64,
}

impl DpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip_threshold > 0.0) {
            return Err(Error::config("privacy.clip_threshold must be positive"));
        }
        if !(self.sample_prob > 0.0 && self.sample_prob <= 1.0) {
            return Err(Error::config("privacy.sample_prob must be in (0, 1]"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::config("privacy.delta must be in (0, 1)"));
        }
        match (self.noise_multiplier, self.target_epsilon) {
            (Some(sigma), None) => {
                if sigma < 0.0 {
                    return Err(Error::config("privacy.noise_multiplier must be >= 0"));
                }
            }
            (None, Some(eps)) => {
                if !(eps > 0.0) {
                    return Err(Error::config("privacy.target_epsilon must be positive"));
                }
            }
            (Some(_), Some(_)) | (None, None) => {
                return Err(Error::config(
                    "privacy: exactly one of noise_multiplier and target_epsilon must be set",
                ));
            }
        }
        Ok(())
    }
}

/// Rescales `update` so its l2 norm is at most `clip_threshold`.
///
/// Returns the clipped vector and the applied factor
/// `1 / max(1, norm / clip_threshold)`. Inside the ball the input is
/// returned unchanged, bit for bit.
pub fn clip(update: &ParamVector, clip_threshold: f64) -> Result<(ParamVector, f64)> {
    if !(clip_threshold > 0.0) {
        return Err(Error::config("clip threshold must be positive"));
    }
    if !update.is_finite() {
        return Err(Error::data("clip: update contains non-finite values"));
    }
    let norm = update.l2_norm();
    // The 1e-12 relative slack absorbs the one-ulp overshoot of rescaling,
    // making clip exactly idempotent.
    if norm <= clip_threshold * (1.0 + 1e-12) {
        Ok((update.clone(), 1.0))
    } else {
        let factor = clip_threshold / norm;
        Ok((update.scale(factor), factor))
    }
}

/// Adds iid Gaussian noise with per-coordinate variance
/// `clip_threshold^2 * sigma^2 / cohort_size`, the per-agent share of the
/// round's noise. With `sigma == 0` the input is returned unchanged.
pub fn add_gaussian_noise(
    update: &ParamVector,
    clip_threshold: f64,
    sigma: f64,
    cohort_size: usize,
    rng: &mut ChaCha12Rng,
) -> Result<ParamVector> {
    if sigma < 0.0 {
        return Err(Error::config("noise multiplier must be >= 0"));
    }
    if cohort_size == 0 {
        return Err(Error::config("cohort size must be at least 1"));
    }
    if sigma == 0.0 {
        return Ok(update.clone());
    }
    let std_dev = clip_threshold * sigma / (cohort_size as f64).sqrt();
    let mut noised = update.clone();
    for layer in noised.layers_mut() {
        for v in &mut layer.values {
            *v += std_dev * next_standard_normal(rng);
        }
    }
    Ok(noised)
}

/// Expected mean-square distortion of the clip+noise estimate of an update
/// with norm `raw_norm`: `(1/d) max(0, raw_norm - S)^2 + sigma^2 S^2 / cohort`.
pub fn mse_bound(
    raw_norm: f64,
    clip_threshold: f64,
    sigma: f64,
    cohort_size: usize,
    dim: usize,
) -> Result<f64> {
    if !(raw_norm >= 0.0) || !(clip_threshold > 0.0) || sigma < 0.0 {
        return Err(Error::config(format!(
            "mse_bound: invalid arguments (norm {raw_norm}, S {clip_threshold}, sigma {sigma})"
        )));
    }
    if cohort_size == 0 || dim == 0 {
        return Err(Error::config(
            "mse_bound: cohort and dimension must be >= 1",
        ));
    }
    let clip_term = (raw_norm - clip_threshold).max(0.0).powi(2) / dim as f64;
    let noise_term = sigma * sigma * clip_threshold * clip_threshold / cohort_size as f64;
    Ok(clip_term + noise_term)
}
