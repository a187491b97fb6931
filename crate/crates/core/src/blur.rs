//! Bounded local update regularization.
//!
//! The local objective gains a penalty `(lambda/2) * max(0, |w - w_anchor|^2 - S^2)`
//! that activates once the local iterate drifts further than the clipping
//! threshold from the round's anchor (the downloaded global model). Its
//! gradient contribution is `lambda * (w - w_anchor)` while active and zero
//! otherwise; at the kink the inactive branch is used, which keeps the
//! lambda = 0 configuration bit-identical to an unregularized run.

use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::params::ParamVector;

/// Regularization knobs shared with the clipping stage.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BlurConfig {
    /// Regularization factor lambda; zero disables the penalty.
    pub lambda: f64,
    /// The clipping threshold S that bounds the penalty-free ball.
    pub clip_threshold: f64,
}

impl BlurConfig {
    /// Checks `lambda * local_lr < 1`, the stability precondition of the
    /// discounted update recursion.
    pub fn validate(&self, local_lr: f64) -> Result<()> {
        if self.lambda < 0.0 {
            return Err(Error::config("blur lambda must be >= 0"));
        }
        if !(self.clip_threshold > 0.0) {
            return Err(Error::config("blur clip_threshold must be positive"));
        }
        if self.lambda * local_lr >= 1.0 {
            return Err(Error::config(
                "blur requires lambda * local_lr < 1 for a stable local update",
            ));
        }
        Ok(())
    }
}

/// Penalty value `max(0, |w - w_anchor|^2 - S^2)`.
///
/// The caller assembles the regularized objective as
/// `f(w) + (lambda/2) * blur_penalty(w, anchor, s)`.
pub fn blur_penalty(w: &ParamVector, w_anchor: &ParamVector, clip_threshold: f64) -> Result<f64> {
    w.check_layout(w_anchor, "blur_penalty")?;
    let dist = w.sub(w_anchor)?.l2_norm();
    Ok((dist * dist - clip_threshold * clip_threshold).max(0.0))
}

/// Gradient contribution of `(lambda/2) * blur_penalty`: `lambda * (w - w_anchor)`
/// outside the ball, the zero vector inside and on the boundary.
pub fn blur_gradient(
    w: &ParamVector,
    w_anchor: &ParamVector,
    clip_threshold: f64,
    lambda: f64,
) -> Result<ParamVector> {
    w.check_layout(w_anchor, "blur_gradient")?;
    let offset = w.sub(w_anchor)?;
    if offset.l2_norm() > clip_threshold {
        Ok(offset.scale(lambda))
    } else {
        Ok(offset.zeros_like())
    }
}

/// Per-step discount factors `(1 - lambda * local_lr)^q` for steps whose
/// pre-update distance to the anchor exceeds the threshold, 1 otherwise.
///
/// `step_norms[q]` is the distance before local step `q` (0-based). This is
/// a per-round diagnostic mirroring the update-rule attenuation.
pub fn discount_trace(
    step_norms: &[f64],
    clip_threshold: f64,
    lambda: f64,
    local_lr: f64,
) -> Result<Vec<f64>> {
    if lambda * local_lr >= 1.0 {
        return Err(Error::config(
            "discount_trace requires lambda * local_lr < 1",
        ));
    }
    let base = 1.0 - lambda * local_lr;
    Ok(step_norms
        .iter()
        .enumerate()
        .map(|(q, &norm)| {
            if norm > clip_threshold {
                base.powi(q as i32)
            } else {
                1.0
            }
        })
        .collect())
}
