//! Matrix-free CASSI and MCFA sensing operators.
//!
//! CASSI: `g_c = P · diag(H_c) · D_s · f`. The mask `H_c` is a single
//! `(m/d_s) × (n/d_s)` plane applied to every band of the spatially decimated
//! cube. Band `b` (zero-based) is then sheared right by `b` columns and each
//! voxel spreads over columns `c + b + u`, `u ∈ {0, 1, 2}`, with weights
//! `q[u]`.
//!
//! MCFA: `g_m = diag(H_m) · D_λ · f` summed over the reduced bands, with
//! `H_m` an `m × n × (l/d_λ)` colored mask.

use crate::cube::{spatial_decimate, spatial_decimate_adjoint, spectral_decimate, spectral_decimate_adjoint, Cube, GeometryConfig};
use crate::error::{Error, Result};
use crate::optics::aperture::{realize_aperture, ApertureWeights, Arm};
use crate::optics::dispersion::DispersionModel;
use crate::optics::measurement::Measurement;

#[derive(Clone, Debug)]
pub struct FusionOperator {
    geometry: GeometryConfig,
    dims: (usize, usize, usize),
    cassi: ApertureWeights,
    mcfa: ApertureWeights,
    dispersion: DispersionModel,
    truncate_detector: bool,
    hc: Vec<f64>,
    hm: Vec<f64>,
}

impl FusionOperator {
    /// `dims` are the target cube dims `(m, n, l)`.
    pub fn new(
        dims: (usize, usize, usize),
        geometry: GeometryConfig,
        cassi: ApertureWeights,
        mcfa: ApertureWeights,
        dispersion: DispersionModel,
        truncate_detector: bool,
    ) -> Result<Self> {
        let (m, n, l) = dims;
        geometry.check_dims(m, n, l)?;
        let (mr, nr) = (m / geometry.d_s, n / geometry.d_s);
        if cassi.arm() != Arm::Cassi || cassi.dims() != (mr, nr, 1) {
            return Err(Error::dim(format!("CASSI aperture must be {mr}x{nr}x1, got {:?} ({:?})", cassi.dims(), cassi.arm())));
        }
        let lr = l / geometry.d_lambda;
        if mcfa.arm() != Arm::Mcfa || mcfa.dims() != (m, n, lr) {
            return Err(Error::dim(format!("MCFA aperture must be {m}x{n}x{lr}, got {:?} ({:?})", mcfa.dims(), mcfa.arm())));
        }
        dispersion.check_dims(mr, nr, l)?;
        let hc = realize_aperture(&cassi);
        let hm = realize_aperture(&mcfa);
        Ok(Self { geometry, dims, cassi, mcfa, dispersion, truncate_detector, hc, hm })
    }

    pub fn geometry(&self) -> GeometryConfig {
        self.geometry
    }

    pub fn cube_dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    pub fn cassi(&self) -> &ApertureWeights {
        &self.cassi
    }

    pub fn mcfa(&self) -> &ApertureWeights {
        &self.mcfa
    }

    pub fn dispersion(&self) -> &DispersionModel {
        &self.dispersion
    }

    pub fn truncate_detector(&self) -> bool {
        self.truncate_detector
    }

    /// Realized CASSI mask `H_c`, row-major.
    pub fn cassi_mask(&self) -> &[f64] {
        &self.hc
    }

    /// Realized MCFA mask `H_m`, band-major planar.
    pub fn mcfa_mask(&self) -> &[f64] {
        &self.hm
    }

    /// Mutates the aperture weights and re-realizes both masks.
    pub fn update_apertures(&mut self, f: impl FnOnce(&mut ApertureWeights, &mut ApertureWeights)) {
        f(&mut self.cassi, &mut self.mcfa);
        self.hc = realize_aperture(&self.cassi);
        self.hm = realize_aperture(&self.mcfa);
    }

    pub fn set_gamma(&mut self, gamma: f64) -> Result<()> {
        self.cassi.set_gamma(gamma)?;
        self.mcfa.set_gamma(gamma)?;
        self.hc = realize_aperture(&self.cassi);
        self.hm = realize_aperture(&self.mcfa);
        Ok(())
    }

    fn reduced(&self) -> (usize, usize) {
        (self.dims.0 / self.geometry.d_s, self.dims.1 / self.geometry.d_s)
    }

    /// CASSI detector shape `(m/d_s, width)`; width is `n/d_s + l − 1` for pure
    /// shear or truncated detectors and `n/d_s + l + 1` otherwise.
    pub fn cassi_shape(&self) -> (usize, usize) {
        let (mr, nr) = self.reduced();
        let l = self.dims.2;
        let width = if self.dispersion.is_enabled() && !self.truncate_detector { nr + l + 1 } else { nr + l - 1 };
        (mr, width)
    }

    pub fn mcfa_shape(&self) -> (usize, usize) {
        (self.dims.0, self.dims.1)
    }

    fn check_cube(&self, f: &Cube) -> Result<()> {
        if f.dims() != self.dims {
            return Err(Error::dim(format!("operator expects a {:?} cube, got {:?}", self.dims, f.dims())));
        }
        Ok(())
    }

    fn check_measurement(&self, g: &Measurement, arm: Arm) -> Result<()> {
        let shape = match arm {
            Arm::Cassi => self.cassi_shape(),
            Arm::Mcfa => self.mcfa_shape(),
        };
        if g.arm() != arm || g.shape() != shape {
            return Err(Error::dim(format!("expected {arm:?} measurement {shape:?}, got {:?} {:?}", g.arm(), g.shape())));
        }
        Ok(())
    }

    /// `P^T a`, evaluated on the decimated cube grid.
    fn unshear(&self, a: &Measurement) -> Cube {
        let (mr, nr) = self.reduced();
        let l = self.dims.2;
        let width = a.cols();
        let spread = self.dispersion.spread();
        Cube::from_fn(mr, nr, l, |i, c, b| {
            let q = self.dispersion.taps(i, c, b);
            (0..spread)
                .filter(|u| c + b + u < width)
                .map(|u| q[u] * a.get(i, c + b + u))
                .sum()
        })
    }

    pub fn cassi_forward(&self, f: &Cube) -> Result<Measurement> {
        self.check_cube(f)?;
        let dec = spatial_decimate(f, self.geometry.d_s)?;
        let (mr, nr) = self.reduced();
        let (rows, width) = self.cassi_shape();
        let spread = self.dispersion.spread();
        let mut g = Measurement::zeros(Arm::Cassi, rows, width);
        let out = g.data_mut();
        for b in 0..self.dims.2 {
            for i in 0..mr {
                for c in 0..nr {
                    let v = self.hc[i * nr + c] * dec.get(i, c, b);
                    if v == 0.0 {
                        continue;
                    }
                    let q = self.dispersion.taps(i, c, b);
                    for (u, qu) in q.iter().enumerate().take(spread) {
                        let col = c + b + u;
                        if col < width {
                            out[i * width + col] += qu * v;
                        }
                    }
                }
            }
        }
        Ok(g)
    }

    pub fn cassi_adjoint(&self, g: &Measurement) -> Result<Cube> {
        self.check_measurement(g, Arm::Cassi)?;
        let mut z = self.unshear(g);
        for b in 0..z.bands() {
            for (v, h) in z.band_mut(b).iter_mut().zip(&self.hc) {
                *v *= h;
            }
        }
        spatial_decimate_adjoint(&z, self.geometry.d_s)
    }

    pub fn mcfa_forward(&self, f: &Cube) -> Result<Measurement> {
        self.check_cube(f)?;
        let dec = spectral_decimate(f, self.geometry.d_lambda)?;
        let (m, n) = self.mcfa_shape();
        let mut g = Measurement::zeros(Arm::Mcfa, m, n);
        let plane = m * n;
        let out = g.data_mut();
        for b in 0..dec.bands() {
            let mask = &self.hm[b * plane..(b + 1) * plane];
            for ((o, h), v) in out.iter_mut().zip(mask).zip(dec.band(b)) {
                *o += h * v;
            }
        }
        Ok(g)
    }

    pub fn mcfa_adjoint(&self, g: &Measurement) -> Result<Cube> {
        self.check_measurement(g, Arm::Mcfa)?;
        let (m, n) = self.mcfa_shape();
        let lr = self.dims.2 / self.geometry.d_lambda;
        let plane = m * n;
        let mut z = Cube::zeros(m, n, lr);
        for b in 0..lr {
            let mask = &self.hm[b * plane..(b + 1) * plane];
            for ((o, h), v) in z.band_mut(b).iter_mut().zip(mask).zip(g.data()) {
                *o = h * v;
            }
        }
        spectral_decimate_adjoint(&z, self.geometry.d_lambda)
    }

    pub fn forward(&self, f: &Cube) -> Result<(Measurement, Measurement)> {
        Ok((self.cassi_forward(f)?, self.mcfa_forward(f)?))
    }

    /// `∂⟨a, Φ_c x⟩ / ∂H_c`, one entry per CASSI mask pixel.
    ///
    /// The same bilinear form gives the mask gradient of `⟨x, Φ_cᵀ a⟩`.
    pub fn cassi_mask_grad(&self, x: &Cube, a: &Measurement) -> Result<Vec<f64>> {
        self.check_cube(x)?;
        self.check_measurement(a, Arm::Cassi)?;
        let dec = spatial_decimate(x, self.geometry.d_s)?;
        let back = self.unshear(a);
        let plane = dec.plane();
        let mut grad = vec![0.0; plane];
        for b in 0..dec.bands() {
            for ((gk, d), p) in grad.iter_mut().zip(dec.band(b)).zip(back.band(b)) {
                *gk += d * p;
            }
        }
        Ok(grad)
    }

    /// `∂⟨a, Φ_m x⟩ / ∂H_m`, band-major planar like the mask.
    pub fn mcfa_mask_grad(&self, x: &Cube, a: &Measurement) -> Result<Vec<f64>> {
        self.check_cube(x)?;
        self.check_measurement(a, Arm::Mcfa)?;
        let dec = spectral_decimate(x, self.geometry.d_lambda)?;
        let mut grad = Vec::with_capacity(dec.len());
        for b in 0..dec.bands() {
            grad.extend(dec.band(b).iter().zip(a.data()).map(|(d, v)| d * v));
        }
        Ok(grad)
    }

    /// Chain rule from upstream `∂L/∂g_c`, `∂L/∂g_m` to the raw weights
    /// `∂L/∂W_c`, `∂L/∂W_m` for the measurement of cube `f`.
    pub fn aperture_gradients(&self, f: &Cube, upstream_c: &Measurement, upstream_m: &Measurement) -> Result<(Vec<f64>, Vec<f64>)> {
        let gc = self.cassi_mask_grad(f, upstream_c)?;
        let gm = self.mcfa_mask_grad(f, upstream_m)?;
        Ok((self.chain_cassi(&gc), self.chain_mcfa(&gm)))
    }

    /// Maps a gradient with respect to `H_c` onto `W_c`.
    pub fn chain_cassi(&self, grad_h: &[f64]) -> Vec<f64> {
        grad_h.iter().zip(self.cassi.weights()).map(|(g, &w)| g * self.cassi.derivative_one(w)).collect()
    }

    /// Maps a gradient with respect to `H_m` onto `W_m`.
    pub fn chain_mcfa(&self, grad_h: &[f64]) -> Vec<f64> {
        grad_h.iter().zip(self.mcfa.weights()).map(|(g, &w)| g * self.mcfa.derivative_one(w)).collect()
    }
}

/// Operator with constant weights on both arms; handy for all-ones or
/// all-zeros masks.
pub fn constant_operator(
    dims: (usize, usize, usize),
    geometry: GeometryConfig,
    weight: f64,
    gamma: f64,
    dispersion: DispersionModel,
    truncate_detector: bool,
) -> Result<FusionOperator> {
    let (m, n, l) = dims;
    geometry.check_dims(m, n, l)?;
    let cassi = ApertureWeights::constant(Arm::Cassi, m / geometry.d_s, n / geometry.d_s, 1, weight, gamma)?;
    let mcfa = ApertureWeights::constant(Arm::Mcfa, m, n, l / geometry.d_lambda, weight, gamma)?;
    FusionOperator::new(dims, geometry, cassi, mcfa, dispersion, truncate_detector)
}
