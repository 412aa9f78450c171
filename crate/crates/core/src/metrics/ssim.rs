//! Gaussian-window SSIM and MS-SSIM on single image planes, with exact
//! reverse-mode gradients with respect to the estimate.
//!
//! Filtering is "valid": for a `k`-tap window the statistic maps are
//! `(rows − k + 1) × (cols − k + 1)`.
//! MS-SSIM halves the resolution between levels with 2×2 average pooling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Canonical five-scale MS-SSIM weights; shorter pyramids renormalize a prefix.
pub const CANONICAL_LEVEL_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

const POW_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MsSsimConfig {
    pub levels: usize,
    pub window: usize,
    pub sigma: f64,
    /// Defaults to the renormalized canonical prefix when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level_weights: Option<Vec<f64>>,
    #[serde(default = "default_peak")]
    pub peak: f64,
}

fn default_peak() -> f64 {
    1.0
}

impl Default for MsSsimConfig {
    fn default() -> Self {
        Self { levels: 3, window: 11, sigma: 1.5, level_weights: None, peak: 1.0 }
    }
}

impl MsSsimConfig {
    pub fn single_scale() -> Self {
        Self { levels: 1, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 {
            return Err(Error::Config("ms-ssim levels must be >= 1".into()));
        }
        if self.window == 0 || self.window % 2 == 0 {
            return Err(Error::Config(format!("ms-ssim window must be odd, got {}", self.window)));
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::Config(format!("ms-ssim sigma must be > 0, got {}", self.sigma)));
        }
        if !(self.peak.is_finite() && self.peak > 0.0) {
            return Err(Error::Config(format!("peak must be > 0, got {}", self.peak)));
        }
        if self.levels > CANONICAL_LEVEL_WEIGHTS.len() && self.level_weights.is_none() {
            return Err(Error::Config(format!("{} levels need explicit level_weights", self.levels)));
        }
        if let Some(w) = &self.level_weights {
            if w.len() != self.levels || w.iter().any(|v| !v.is_finite() || *v < 0.0) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(Error::Config(format!("level_weights {w:?} must be a simplex vector of length {}", self.levels)));
            }
        }
        Ok(())
    }

    pub fn weights(&self) -> Vec<f64> {
        match &self.level_weights {
            Some(w) => w.clone(),
            None => {
                let prefix = &CANONICAL_LEVEL_WEIGHTS[..self.levels.min(CANONICAL_LEVEL_WEIGHTS.len())];
                let s: f64 = prefix.iter().sum();
                prefix.iter().map(|w| w / s).collect()
            }
        }
    }

    /// Smallest image side the pyramid accepts.
    pub fn min_side(&self) -> usize {
        self.window << (self.levels - 1)
    }

    pub fn check_image(&self, rows: usize, cols: usize) -> Result<()> {
        self.validate()?;
        if rows.min(cols) < self.min_side() {
            return Err(Error::dim(format!(
                "{rows}x{cols} image is too small for {} level(s) with window {} (need side >= {})",
                self.levels,
                self.window,
                self.min_side()
            )));
        }
        Ok(())
    }

    pub fn c1(&self) -> f64 {
        (0.01 * self.peak).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (0.03 * self.peak).powi(2)
    }
}

/// Normalized 1-D Gaussian taps.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let taps: Vec<f64> = (0..size).map(|k| (-((k as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / s).collect()
}

/// Row-major plane.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    fn mul(&self, other: &Plane) -> Plane {
        Plane::new(self.rows, self.cols, self.data.iter().zip(&other.data).map(|(a, b)| a * b).collect())
    }

    /// 2×2 average pooling, dropping a trailing odd row/column.
    pub fn downsample(&self) -> Plane {
        let (r, c) = (self.rows / 2, self.cols / 2);
        let mut out = Plane::zeros(r, c);
        for i in 0..r {
            for j in 0..c {
                let at = |di: usize, dj: usize| self.data[(2 * i + di) * self.cols + 2 * j + dj];
                out.data[i * c + j] = 0.25 * (at(0, 0) + at(0, 1) + at(1, 0) + at(1, 1));
            }
        }
        out
    }

    /// Adjoint of [`Plane::downsample`] onto a `rows × cols` grid.
    fn downsample_adjoint(&self, rows: usize, cols: usize) -> Plane {
        let mut out = Plane::zeros(rows, cols);
        for i in 0..self.rows {
            for j in 0..self.cols {
                let g = 0.25 * self.data[i * self.cols + j];
                for (di, dj) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    out.data[(2 * i + di) * cols + 2 * j + dj] += g;
                }
            }
        }
        out
    }
}

/// Separable valid correlation with a square window.
fn filter_valid(p: &Plane, taps: &[f64]) -> Plane {
    let w = taps.len();
    let (orows, ocols) = (p.rows - w + 1, p.cols - w + 1);
    let mut tmp = Plane::zeros(p.rows, ocols);
    for i in 0..p.rows {
        for j in 0..ocols {
            tmp.data[i * ocols + j] = (0..w).map(|k| taps[k] * p.data[i * p.cols + j + k]).sum();
        }
    }
    let mut out = Plane::zeros(orows, ocols);
    for i in 0..orows {
        for j in 0..ocols {
            out.data[i * ocols + j] = (0..w).map(|k| taps[k] * tmp.data[(i + k) * ocols + j]).sum();
        }
    }
    out
}

/// Adjoint of [`filter_valid`]: scatter back onto the input grid.
fn filter_valid_adjoint(g: &Plane, taps: &[f64], rows: usize, cols: usize) -> Plane {
    let w = taps.len();
    let mut tmp = Plane::zeros(rows, g.cols);
    for i in 0..g.rows {
        for j in 0..g.cols {
            let v = g.data[i * g.cols + j];
            for k in 0..w {
                tmp.data[(i + k) * g.cols + j] += taps[k] * v;
            }
        }
    }
    let mut out = Plane::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..g.cols {
            let v = tmp.data[i * g.cols + j];
            for k in 0..w {
                out.data[i * cols + j + k] += taps[k] * v;
            }
        }
    }
    out
}

/// Per-position intermediates of one SSIM evaluation.
struct SsimMaps {
    mu_x: Plane,
    mu_y: Plane,
    a1: Vec<f64>,
    a2: Vec<f64>,
    b1: Vec<f64>,
    b2: Vec<f64>,
}

/// Mean SSIM and mean contrast-structure term of one level.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SsimLevel {
    pub ssim: f64,
    pub cs: f64,
}

fn ssim_maps(x: &Plane, y: &Plane, taps: &[f64], c1: f64, c2: f64) -> SsimMaps {
    let mu_x = filter_valid(x, taps);
    let mu_y = filter_valid(y, taps);
    let sxx = filter_valid(&x.mul(x), taps);
    let syy = filter_valid(&y.mul(y), taps);
    let sxy = filter_valid(&x.mul(y), taps);
    let n = mu_x.data.len();
    let (mut a1, mut a2, mut b1, mut b2) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for k in 0..n {
        let (mx, my) = (mu_x.data[k], mu_y.data[k]);
        let vx = sxx.data[k] - mx * mx;
        let vy = syy.data[k] - my * my;
        let cxy = sxy.data[k] - mx * my;
        a1[k] = 2.0 * mx * my + c1;
        a2[k] = 2.0 * cxy + c2;
        b1[k] = mx * mx + my * my + c1;
        b2[k] = vx + vy + c2;
    }
    SsimMaps { mu_x, mu_y, a1, a2, b1, b2 }
}

impl SsimMaps {
    fn level(&self) -> SsimLevel {
        let n = self.a1.len() as f64;
        let mut ssim = 0.0;
        let mut cs = 0.0;
        for k in 0..self.a1.len() {
            let c = self.a2[k] / self.b2[k];
            cs += c;
            ssim += self.a1[k] / self.b1[k] * c;
        }
        SsimLevel { ssim: ssim / n, cs: cs / n }
    }

    /// Gradient with respect to `y` of `d_ssim · mean(ssim) + d_cs · mean(cs)`.
    fn backward(&self, x: &Plane, y: &Plane, taps: &[f64], d_ssim: f64, d_cs: f64) -> Plane {
        let n = self.a1.len();
        let inv = 1.0 / n as f64;
        let (orows, ocols) = (self.mu_x.rows, self.mu_x.cols);
        let mut g_mu = Plane::zeros(orows, ocols);
        let mut g_syy = Plane::zeros(orows, ocols);
        let mut g_sxy = Plane::zeros(orows, ocols);
        for k in 0..n {
            let (a1, a2, b1, b2) = (self.a1[k], self.a2[k], self.b1[k], self.b2[k]);
            let (mx, my) = (self.mu_x.data[k], self.mu_y.data[k]);
            let s = a1 * a2 / (b1 * b2);
            let c = a2 / b2;
            // partials of ssim = a1·a2/(b1·b2) and cs = a2/b2
            let ds_a1 = a2 / (b1 * b2);
            let ds_a2 = a1 / (b1 * b2);
            let ds_b1 = -s / b1;
            let ds_b2 = -s / b2;
            let dc_a2 = 1.0 / b2;
            let dc_b2 = -c / b2;
            let ga1 = inv * d_ssim * ds_a1;
            let ga2 = inv * (d_ssim * ds_a2 + d_cs * dc_a2);
            let gb1 = inv * d_ssim * ds_b1;
            let gb2 = inv * (d_ssim * ds_b2 + d_cs * dc_b2);
            // a1 = 2 mx my + c1, a2 = 2 (sxy − mx my) + c2,
            // b1 = mx² + my² + c1, b2 = sxx − mx² + syy − my² + c2
            g_mu.data[k] = ga1 * 2.0 * mx - ga2 * 2.0 * mx + gb1 * 2.0 * my - gb2 * 2.0 * my;
            g_syy.data[k] = gb2;
            g_sxy.data[k] = 2.0 * ga2;
        }
        let (rows, cols) = (y.rows, y.cols);
        let a = filter_valid_adjoint(&g_mu, taps, rows, cols);
        let b = filter_valid_adjoint(&g_syy, taps, rows, cols);
        let c = filter_valid_adjoint(&g_sxy, taps, rows, cols);
        let data = (0..rows * cols).map(|k| a.data[k] + 2.0 * y.data[k] * b.data[k] + x.data[k] * c.data[k]).collect();
        Plane::new(rows, cols, data)
    }
}

/// Single-scale mean SSIM of `y` against reference `x`.
pub fn ssim_plane(x: &Plane, y: &Plane, window: usize, sigma: f64, c1: f64, c2: f64) -> Result<SsimLevel> {
    if x.rows != y.rows || x.cols != y.cols {
        return Err(Error::dim(format!("{}x{} vs {}x{}", x.rows, x.cols, y.rows, y.cols)));
    }
    if x.rows < window || x.cols < window {
        return Err(Error::dim(format!("{}x{} image is smaller than the {window}-tap window", x.rows, x.cols)));
    }
    let taps = gaussian_window(window, sigma);
    Ok(ssim_maps(x, y, &taps, c1, c2).level())
}

/// MS-SSIM of `y` against `x`, and optionally its gradient with respect to `y`.
pub fn ms_ssim_plane(x: &Plane, y: &Plane, cfg: &MsSsimConfig, want_grad: bool) -> Result<(f64, Option<Plane>)> {
    if x.rows != y.rows || x.cols != y.cols {
        return Err(Error::dim(format!("{}x{} vs {}x{}", x.rows, x.cols, y.rows, y.cols)));
    }
    cfg.check_image(x.rows, x.cols)?;
    let taps = gaussian_window(cfg.window, cfg.sigma);
    let weights = cfg.weights();
    let (c1, c2) = (cfg.c1(), cfg.c2());

    let mut xs = vec![x.clone()];
    let mut ys = vec![y.clone()];
    for _ in 1..cfg.levels {
        let (nx, ny) = (xs.last().unwrap().downsample(), ys.last().unwrap().downsample());
        xs.push(nx);
        ys.push(ny);
    }
    let maps: Vec<SsimMaps> = xs.iter().zip(&ys).map(|(a, b)| ssim_maps(a, b, &taps, c1, c2)).collect();
    let stats: Vec<SsimLevel> = maps.iter().map(SsimMaps::level).collect();
    let last = cfg.levels - 1;

    if cfg.levels == 1 {
        let value = stats[0].ssim;
        let grad = want_grad.then(|| maps[0].backward(x, y, &taps, 1.0, 0.0));
        return Ok((value, grad));
    }

    // bases below the floor are clamped, which also zeroes their gradient
    let base = |j: usize| if j == last { stats[j].ssim } else { stats[j].cs };
    let clamped: Vec<f64> = (0..cfg.levels).map(|j| base(j).max(POW_FLOOR)).collect();
    let value: f64 = clamped.iter().zip(&weights).map(|(b, w)| b.powf(*w)).product();
    if !want_grad {
        return Ok((value, None));
    }

    let mut grad: Option<Plane> = None;
    for j in (0..cfg.levels).rev() {
        let d_base = if base(j) > POW_FLOOR { value * weights[j] / clamped[j] } else { 0.0 };
        let (d_ssim, d_cs) = if j == last { (d_base, 0.0) } else { (0.0, d_base) };
        let mut g = maps[j].backward(&xs[j], &ys[j], &taps, d_ssim, d_cs);
        if let Some(finer) = grad.take() {
            for (a, b) in g.data.iter_mut().zip(&finer.data) {
                *a += b;
            }
        }
        grad = Some(if j > 0 { g.downsample_adjoint(ys[j - 1].rows, ys[j - 1].cols) } else { g });
    }
    Ok((value, grad))
}
