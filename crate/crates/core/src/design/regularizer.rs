//! Binary regularizer `R(W) = Σ σ(γw)² (σ(γw) − 1)²`.
//!
//! With the identity activation the realized value is `w` itself and the
//! same polynomial is applied to it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optics::aperture::ApertureWeights;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinaryRegConfig {
    pub mu_b: f64,
}

impl BinaryRegConfig {
    pub fn new(mu_b: f64) -> Result<Self> {
        if !mu_b.is_finite() || mu_b < 0.0 {
            return Err(Error::Config(format!("mu_b must be finite and >= 0, got {mu_b}")));
        }
        Ok(Self { mu_b })
    }
}

#[inline]
fn penalty(s: f64) -> f64 {
    let t = s * (s - 1.0);
    t * t
}

/// `d/ds [s²(s−1)²] = 2s(s−1)(2s−1)`
#[inline]
fn penalty_slope(s: f64) -> f64 {
    2.0 * s * (s - 1.0) * (2.0 * s - 1.0)
}

pub fn binary_regularizer(w: &ApertureWeights) -> f64 {
    w.weights().iter().map(|&v| penalty(w.realize_one(v))).sum()
}

/// Elementwise gradient of [`binary_regularizer`] with respect to the raw
/// weights; for the sigmoid this is `2σ(σ−1)(2σ−1)·γσ(1−σ)`.
pub fn binary_regularizer_grad(w: &ApertureWeights) -> Vec<f64> {
    w.weights()
        .iter()
        .map(|&v| penalty_slope(w.realize_one(v)) * w.derivative_one(v))
        .collect()
}
