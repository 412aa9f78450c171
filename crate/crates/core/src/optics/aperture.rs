//! Trainable coded apertures and their binary realization.
//!
//! `APTR v1` file: magic `41 50 54 52`, one arm byte (0 = CASSI, 1 = MCFA),
//! rows/cols/bands as u32 LE (bands = 1 for CASSI), γ as f32 LE, then the raw
//! weights as f32 LE in band-major planar order.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{dim_u32, put_f32, put_u32, read_file, write_file, Reader};

pub const APERTURE_MAGIC: [u8; 4] = *b"APTR";

/// Distance to {0, 1} under which a realized entry counts as binary.
pub const BINARY_TOLERANCE: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arm {
    Cassi,
    Mcfa,
}

impl Arm {
    pub fn tag(self) -> u8 {
        match self {
            Arm::Cassi => 0,
            Arm::Mcfa => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Arm::Cassi),
            1 => Some(Arm::Mcfa),
            _ => None,
        }
    }
}

/// How raw weights become transmittances.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    /// `σ(γ·w)`
    #[default]
    Sigmoid,
    /// `w` itself; binarization is left to the regularizer alone.
    Identity,
}

/// Numerically stable logistic.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ApertureWeights {
    arm: Arm,
    rows: usize,
    cols: usize,
    bands: usize,
    w: Vec<f64>,
    gamma: f64,
    activation: Activation,
}

impl ApertureWeights {
    pub fn new(arm: Arm, rows: usize, cols: usize, bands: usize, w: Vec<f64>, gamma: f64) -> Result<Self> {
        if rows == 0 || cols == 0 || bands == 0 {
            return Err(Error::dim(format!("aperture dims must be >= 1, got {rows}x{cols}x{bands}")));
        }
        if arm == Arm::Cassi && bands != 1 {
            return Err(Error::dim(format!("CASSI aperture must have one band, got {bands}")));
        }
        if w.len() != rows * cols * bands {
            return Err(Error::dim(format!("aperture {rows}x{cols}x{bands} needs {} weights, got {}", rows * cols * bands, w.len())));
        }
        if let Some(v) = w.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidValue(format!("non-finite aperture weight {v}")));
        }
        check_gamma(gamma)?;
        Ok(Self { arm, rows, cols, bands, w, gamma, activation: Activation::Sigmoid })
    }

    pub fn constant(arm: Arm, rows: usize, cols: usize, bands: usize, value: f64, gamma: f64) -> Result<Self> {
        Self::new(arm, rows, cols, bands, vec![value; rows * cols * bands], gamma)
    }

    /// Uniform on `[-a, a]` for the sigmoid, `0.5 + U[-a, a]` for identity.
    pub fn random(arm: Arm, rows: usize, cols: usize, bands: usize, a: f64, gamma: f64, activation: Activation, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let offset = match activation {
            Activation::Sigmoid => 0.0,
            Activation::Identity => 0.5,
        };
        let w = (0..rows * cols * bands)
            .map(|_| offset + if a > 0.0 { rng.random_range(-a..=a) } else { 0.0 })
            .collect();
        Ok(Self::new(arm, rows, cols, bands, w, gamma)?.with_activation(activation))
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn arm(&self) -> Arm {
        self.arm
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.rows, self.cols, self.bands)
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.w
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.w
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// γ = 0 is accepted: it realizes the flat 0.5 aperture that an annealing
    /// schedule starts from.
    pub fn set_gamma(&mut self, gamma: f64) -> Result<()> {
        check_gamma(gamma)?;
        self.gamma = gamma;
        Ok(())
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    /// Realized transmittance of one raw weight.
    #[inline]
    pub fn realize_one(&self, w: f64) -> f64 {
        match self.activation {
            Activation::Sigmoid => sigmoid(self.gamma * w),
            Activation::Identity => w,
        }
    }

    /// Derivative of the realized transmittance with respect to the raw weight.
    #[inline]
    pub fn derivative_one(&self, w: f64) -> f64 {
        match self.activation {
            Activation::Sigmoid => {
                let s = sigmoid(self.gamma * w);
                self.gamma * s * (1.0 - s)
            }
            Activation::Identity => 1.0,
        }
    }

    pub fn derivative(&self) -> Vec<f64> {
        self.w.iter().map(|&w| self.derivative_one(w)).collect()
    }

    /// Fraction of realized entries within [`BINARY_TOLERANCE`] of 0 or 1.
    pub fn binary_fraction(&self) -> f64 {
        let h = realize_aperture(self);
        let n = h.iter().filter(|&&v| v.abs() <= BINARY_TOLERANCE || (1.0 - v).abs() <= BINARY_TOLERANCE).count();
        n as f64 / h.len() as f64
    }

    /// Hard 0/1 mask: realized value above one half.
    pub fn binarized(&self) -> Vec<bool> {
        realize_aperture(self).into_iter().map(|v| v > 0.5).collect()
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(25 + 4 * self.w.len());
        out.extend_from_slice(&APERTURE_MAGIC);
        out.push(self.arm.tag());
        put_u32(&mut out, dim_u32(self.rows, "rows")?);
        put_u32(&mut out, dim_u32(self.cols, "cols")?);
        put_u32(&mut out, dim_u32(self.bands, "bands")?);
        put_f32(&mut out, self.gamma as f32);
        for &w in &self.w {
            put_f32(&mut out, w as f32);
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(&APERTURE_MAGIC)?;
        let tag = r.u8("arm tag")?;
        let arm = Arm::from_tag(tag).ok_or_else(|| Error::format(4, format!("unknown arm tag {tag}")))?;
        let rows = r.u32("rows")? as usize;
        let cols = r.u32("cols")? as usize;
        let bands = r.u32("bands")? as usize;
        let gamma_at = r.offset();
        let gamma = r.finite_f32("gamma")? as f64;
        if gamma < 0.0 {
            return Err(Error::format(gamma_at, format!("negative gamma {gamma}")));
        }
        let count = rows
            .checked_mul(cols)
            .and_then(|v| v.checked_mul(bands))
            .ok_or_else(|| Error::format(5, "header dims overflow"))?;
        let w = r.f32_vec(count, "weight")?.into_iter().map(f64::from).collect();
        r.finish()?;
        Self::new(arm, rows, cols, bands, w, gamma).map_err(|e| Error::format(5, e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), &self.encode()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&read_file(path.as_ref())?)
    }

    /// One binary PGM (P5, maxval 255) per band, values 0 or 255.
    pub fn to_pgm_bands(&self) -> Vec<Vec<u8>> {
        let px: Vec<u8> = self.binarized().into_iter().map(|on| if on { 255 } else { 0 }).collect();
        self.pgm_planes(&px)
    }

    /// One 8-bit grayscale PGM per band of the realized aperture.
    pub fn to_pgm_gray_bands(&self) -> Vec<Vec<u8>> {
        let px: Vec<u8> = realize_aperture(self).into_iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
        self.pgm_planes(&px)
    }

    fn pgm_planes(&self, px: &[u8]) -> Vec<Vec<u8>> {
        let plane = self.rows * self.cols;
        (0..self.bands)
            .map(|b| {
                let mut out = format!("P5\n{} {}\n255\n", self.cols, self.rows).into_bytes();
                out.extend_from_slice(&px[b * plane..(b + 1) * plane]);
                out
            })
            .collect()
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !gamma.is_finite() || gamma < 0.0 {
        return Err(Error::InvalidValue(format!("sigmoid slope must be finite and >= 0, got {gamma}")));
    }
    Ok(())
}

/// Elementwise realized aperture, `σ(γ·w)` for the sigmoid activation.
pub fn realize_aperture(w: &ApertureWeights) -> Vec<f64> {
    w.w.iter().map(|&v| w.realize_one(v)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(w: f64, gamma: f64) -> ApertureWeights {
        ApertureWeights::new(Arm::Cassi, 1, 1, 1, vec![w], gamma).unwrap()
    }

    #[test]
    fn logistic_values() {
        assert_eq!(realize_aperture(&single(0.0, 35.0)), vec![0.5]);
        // 1 / (1 + e^-7) evaluated in high precision: 0.99908894880559940...
        let hi = realize_aperture(&single(0.2, 35.0))[0];
        assert!((hi - 0.999_088_948_805_599_4).abs() < 1e-12);
        let lo = realize_aperture(&single(-0.2, 35.0))[0];
        assert!((lo - (1.0 - 0.999_088_948_805_599_4)).abs() < 1e-12);
        assert!((hi + lo - 1.0).abs() < 1e-15);
    }

    #[test]
    fn stable_at_extremes() {
        assert_eq!(sigmoid(-800.0), 0.0);
        assert_eq!(sigmoid(800.0), 1.0);
        assert!(sigmoid(-30.0) > 0.0);
    }

    #[test]
    fn derivative_at_midpoint_is_quarter_gamma() {
        for gamma in [1.0, 5.0, 35.0] {
            assert_eq!(single(0.0, gamma).derivative(), vec![gamma / 4.0]);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(ApertureWeights::new(Arm::Cassi, 1, 1, 1, vec![f64::NAN], 1.0).is_err());
        assert!(ApertureWeights::new(Arm::Cassi, 1, 1, 1, vec![0.0], -1.0).is_err());
        assert!(ApertureWeights::new(Arm::Cassi, 1, 1, 2, vec![0.0; 2], 1.0).is_err());
        assert!(ApertureWeights::new(Arm::Mcfa, 2, 2, 2, vec![0.0; 7], 1.0).is_err());
    }

    #[test]
    fn binary_fraction_counts_saturated_entries() {
        let w = ApertureWeights::new(Arm::Mcfa, 1, 2, 2, vec![1.0, -1.0, 0.0, 0.01], 35.0).unwrap();
        assert_eq!(w.binary_fraction(), 0.5);
    }

    #[test]
    fn aptr_round_trip() {
        let w = ApertureWeights::new(Arm::Mcfa, 2, 3, 2, (0..12).map(|k| k as f64 * 0.125 - 0.5).collect(), 35.0).unwrap();
        let bytes = w.encode().unwrap();
        assert_eq!(&bytes[..5], &[0x41, 0x50, 0x54, 0x52, 1]);
        assert_eq!(bytes.len(), 4 + 1 + 12 + 4 + 12 * 4);
        assert_eq!(ApertureWeights::decode(&bytes).unwrap(), w);
    }

    #[test]
    fn aptr_rejects_truncation_and_tag() {
        let w = ApertureWeights::constant(Arm::Cassi, 2, 2, 1, 0.25, 10.0).unwrap();
        let bytes = w.encode().unwrap();
        assert!(matches!(ApertureWeights::decode(&bytes[..bytes.len() - 1]), Err(Error::Format { .. })));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(ApertureWeights::decode(&bad), Err(Error::Format { offset: 4, .. })));
    }

    #[test]
    fn pgm_payload_is_binary() {
        let w = ApertureWeights::new(Arm::Mcfa, 2, 2, 2, vec![1.0, -1.0, 0.3, -0.01, 5.0, 5.0, -5.0, 0.2], 35.0).unwrap();
        let pgms = w.to_pgm_bands();
        assert_eq!(pgms.len(), 2);
        let header = b"P5\n2 2\n255\n";
        assert_eq!(&pgms[0][..header.len()], header);
        assert_eq!(&pgms[0][header.len()..], &[255, 0, 255, 0]);
        assert_eq!(&pgms[1][header.len()..], &[255, 255, 0, 255]);
    }
}
