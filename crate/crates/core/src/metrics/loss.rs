//! Training losses and their gradients with respect to the estimates.

use serde::{Deserialize, Serialize};

use crate::cube::Cube;
use crate::error::{Error, Result};

use super::quality::band_plane;
use super::ssim::{ms_ssim_plane, MsSsimConfig};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub mu_s: f64,
    pub mu_lambda: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { mu_s: 1.0, mu_lambda: 1.0 }
    }
}

impl LossWeights {
    pub fn new(mu_s: f64, mu_lambda: f64) -> Result<Self> {
        let w = Self { mu_s, mu_lambda };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("mu_s", self.mu_s), ("mu_lambda", self.mu_lambda)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if self.mu_s == 0.0 && self.mu_lambda == 0.0 {
            return Err(Error::Config("mu_s and mu_lambda cannot both be zero".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// `μ_s·L_s + μ_λ·L_λ`
    #[default]
    Proposed,
    /// `μ_s·L_s`
    SpatialOnly,
    /// Voxel mean squared error, the ablation baseline.
    Mse,
}

impl std::str::FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "proposed" => Ok(Self::Proposed),
            "spatial_only" => Ok(Self::SpatialOnly),
            "mse" => Ok(Self::Mse),
            other => Err(Error::Config(format!("unknown loss mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for LossMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Proposed => "proposed",
            Self::SpatialOnly => "spatial_only",
            Self::Mse => "mse",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    #[serde(default)]
    pub mode: LossMode,
    #[serde(flatten)]
    pub weights: LossWeights,
    /// Sum the loss over every stage estimate instead of the last one only.
    #[serde(default = "default_true")]
    pub multi_loss: bool,
    #[serde(default)]
    pub ms_ssim: MsSsimConfig,
}

fn default_true() -> bool {
    true
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { mode: LossMode::Proposed, weights: LossWeights::default(), multi_loss: true, ms_ssim: MsSsimConfig::default() }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mode != LossMode::Mse {
            self.weights.validate()?;
            self.ms_ssim.validate()?;
        }
        Ok(())
    }

    pub fn check_image(&self, rows: usize, cols: usize) -> Result<()> {
        self.validate()?;
        if self.mode == LossMode::Mse || (self.mode == LossMode::Proposed && self.weights.mu_s == 0.0) {
            return Ok(());
        }
        self.ms_ssim.check_image(rows, cols)
    }
}

fn check_pair(f_hat: &Cube, f: &Cube) -> Result<()> {
    f_hat.ensure_same_shape(f, "loss")?;
    if !f_hat.is_finite() || !f.is_finite() {
        return Err(Error::InvalidValue("loss input contains non-finite values".into()));
    }
    Ok(())
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn spatial_impl(f_hat: &Cube, f: &Cube, cfg: &MsSsimConfig, want_grad: bool) -> Result<(f64, Option<Cube>)> {
    check_pair(f_hat, f)?;
    let (m, n, l) = f.dims();
    let norm = 1.0 / (m * n * l) as f64;
    let l1: f64 = f_hat.data().iter().zip(f.data()).map(|(a, b)| (a - b).abs()).sum();
    let mut ms = 0.0;
    let mut grad = want_grad.then(|| Cube::zeros(m, n, l));
    for b in 0..l {
        let (v, g) = ms_ssim_plane(&band_plane(f, b), &band_plane(f_hat, b), cfg, want_grad)?;
        ms += v;
        if let (Some(out), Some(g)) = (grad.as_mut(), g) {
            for (o, gv) in out.band_mut(b).iter_mut().zip(&g.data) {
                *o = -norm * gv / l as f64;
            }
        }
    }
    ms /= l as f64;
    if let Some(out) = grad.as_mut() {
        for ((o, a), b) in out.data_mut().iter_mut().zip(f_hat.data()).zip(f.data()) {
            *o += norm * sign(a - b);
        }
    }
    Ok((norm * (1.0 - ms + l1), grad))
}

/// `(1/MNL)(1 − MS-SSIM(f, f̂) + ‖f − f̂‖₁)`, MS-SSIM averaged over bands.
pub fn spatial_loss(f_hat: &Cube, f: &Cube, cfg: &MsSsimConfig) -> Result<f64> {
    Ok(spatial_impl(f_hat, f, cfg, false)?.0)
}

pub fn spatial_loss_grad(f_hat: &Cube, f: &Cube, cfg: &MsSsimConfig) -> Result<Cube> {
    Ok(spatial_impl(f_hat, f, cfg, true)?.1.expect("gradient requested"))
}

fn spectral_impl(f_hat: &Cube, f: &Cube, want_grad: bool) -> Result<(f64, Option<Cube>)> {
    check_pair(f_hat, f)?;
    let (m, n, l) = f.dims();
    let norm = 1.0 / (m * n) as f64;
    let mut total = 0.0;
    let mut grad = want_grad.then(|| Cube::zeros(m, n, l));
    for i in 0..m {
        for j in 0..n {
            let (mut dot, mut nf, mut ne) = (0.0, 0.0, 0.0);
            for b in 0..l {
                let (e, r) = (f_hat.get(i, j, b), f.get(i, j, b));
                dot += e * r;
                nf += r * r;
                ne += e * e;
            }
            let (nf, ne) = (nf.sqrt(), ne.sqrt());
            let gap = dot - nf * ne;
            total += gap * gap;
            if let Some(g) = grad.as_mut() {
                // d gap / d f̂ = f − ‖f‖ f̂/‖f̂‖; the norm term is dropped at f̂ = 0
                let ratio = if ne > 0.0 { nf / ne } else { 0.0 };
                for b in 0..l {
                    let d = f.get(i, j, b) - ratio * f_hat.get(i, j, b);
                    g.set(i, j, b, 2.0 * norm * gap * d);
                }
            }
        }
    }
    Ok((norm * total, grad))
}

/// `(1/MN) Σ_pixels (fᵀf̂ − ‖f‖‖f̂‖)²`.
pub fn spectral_loss(f_hat: &Cube, f: &Cube) -> Result<f64> {
    Ok(spectral_impl(f_hat, f, false)?.0)
}

pub fn spectral_loss_grad(f_hat: &Cube, f: &Cube) -> Result<Cube> {
    Ok(spectral_impl(f_hat, f, true)?.1.expect("gradient requested"))
}

fn mse_impl(f_hat: &Cube, f: &Cube, want_grad: bool) -> Result<(f64, Option<Cube>)> {
    check_pair(f_hat, f)?;
    let inv = 1.0 / f.len() as f64;
    let v: f64 = f_hat.data().iter().zip(f.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() * inv;
    let g = want_grad.then(|| {
        let d: Vec<f64> = f_hat.data().iter().zip(f.data()).map(|(a, b)| 2.0 * inv * (a - b)).collect();
        Cube::new(f.rows(), f.cols(), f.bands(), d).expect("same shape")
    });
    Ok((v, g))
}

/// Loss terms of one stage estimate.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StageLoss {
    /// Weighted spatial term (or the MSE in `mse` mode).
    pub spatial: f64,
    /// Weighted spectral term.
    pub spectral: f64,
    pub total: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    /// One entry per estimate; inactive stages (single-loss mode) are zero.
    pub stages: Vec<StageLoss>,
}

impl LossBreakdown {
    pub fn spatial(&self) -> f64 {
        self.stages.iter().map(|s| s.spatial).sum()
    }

    pub fn spectral(&self) -> f64 {
        self.stages.iter().map(|s| s.spectral).sum()
    }
}

fn stage_active(cfg: &LossConfig, k: usize, count: usize) -> bool {
    cfg.multi_loss || k + 1 == count
}

fn stage_loss(f_hat: &Cube, f: &Cube, cfg: &LossConfig, want_grad: bool) -> Result<(StageLoss, Option<Cube>)> {
    let w = cfg.weights;
    match cfg.mode {
        LossMode::Mse => {
            let (v, g) = mse_impl(f_hat, f, want_grad)?;
            Ok((StageLoss { spatial: v, spectral: 0.0, total: v }, g))
        }
        LossMode::Proposed | LossMode::SpatialOnly => {
            let use_spectral = cfg.mode == LossMode::Proposed && w.mu_lambda != 0.0;
            let use_spatial = w.mu_s != 0.0;
            let mut grad = want_grad.then(|| Cube::zeros_like(f));
            let mut spatial = 0.0;
            if use_spatial {
                let (v, g) = spatial_impl(f_hat, f, &cfg.ms_ssim, want_grad)?;
                spatial = w.mu_s * v;
                if let (Some(out), Some(g)) = (grad.as_mut(), g) {
                    out.axpy(w.mu_s, &g);
                }
            } else {
                check_pair(f_hat, f)?;
            }
            let mut spectral = 0.0;
            if use_spectral {
                let (v, g) = spectral_impl(f_hat, f, want_grad)?;
                spectral = w.mu_lambda * v;
                if let (Some(out), Some(g)) = (grad.as_mut(), g) {
                    out.axpy(w.mu_lambda, &g);
                }
            }
            Ok((StageLoss { spatial, spectral, total: spatial + spectral }, grad))
        }
    }
}

fn aggregate(estimates: &[Cube], f: &Cube, cfg: &LossConfig, want_grad: bool) -> Result<(LossBreakdown, Vec<Cube>)> {
    if estimates.is_empty() {
        return Err(Error::InvalidValue("loss needs at least one estimate".into()));
    }
    cfg.validate()?;
    let mut out = LossBreakdown::default();
    let mut grads = Vec::new();
    for (k, est) in estimates.iter().enumerate() {
        est.ensure_same_shape(f, "stage estimate")?;
        if stage_active(cfg, k, estimates.len()) {
            let (s, g) = stage_loss(est, f, cfg, want_grad)?;
            out.total += s.total;
            out.stages.push(s);
            if let Some(g) = g {
                grads.push(g);
            }
        } else {
            out.stages.push(StageLoss::default());
            if want_grad {
                grads.push(Cube::zeros_like(f));
            }
        }
    }
    Ok((out, grads))
}

/// Loss over the estimates `f̂⁰..f̂ᴷ`; single-loss mode scores `f̂ᴷ` only.
pub fn total_loss(estimates: &[Cube], f: &Cube, cfg: &LossConfig) -> Result<LossBreakdown> {
    Ok(aggregate(estimates, f, cfg, false)?.0)
}

/// Gradient of [`total_loss`] with respect to each estimate.
pub fn loss_gradients(estimates: &[Cube], f: &Cube, cfg: &LossConfig) -> Result<Vec<Cube>> {
    Ok(aggregate(estimates, f, cfg, true)?.1)
}

/// [`total_loss`] and [`loss_gradients`] in one pass.
pub fn loss_and_gradients(estimates: &[Cube], f: &Cube, cfg: &LossConfig) -> Result<(LossBreakdown, Vec<Cube>)> {
    aggregate(estimates, f, cfg, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_cfg() -> MsSsimConfig {
        MsSsimConfig { levels: 1, window: 3, sigma: 1.0, ..MsSsimConfig::default() }
    }

    fn random_cube(seed: u64, m: usize, n: usize, l: usize) -> Cube {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Cube::from_fn(m, n, l, |_, _, _| rng.random_range(0.05..0.95))
    }

    #[test]
    fn spectral_orthogonal_pixel() {
        let f = Cube::new(1, 1, 2, vec![1.0, 0.0]).unwrap();
        let e = Cube::new(1, 1, 2, vec![0.0, 1.0]).unwrap();
        assert!((spectral_loss(&e, &f).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn spectral_scale_invariant() {
        let f = random_cube(1, 3, 3, 4);
        for a in [0.5, 1.0, 2.0] {
            assert!(spectral_loss(&f.scaled(a), &f).unwrap() < 1e-10);
        }
    }

    #[test]
    fn weights_validation() {
        assert!(LossWeights::new(0.0, 0.0).is_err());
        assert!(LossWeights::new(-1.0, 1.0).is_err());
        assert!(LossWeights::new(0.0, 1.0).is_ok());
    }

    #[test]
    fn single_loss_scores_last_stage_only() {
        let f = random_cube(2, 4, 4, 2);
        let est = vec![random_cube(3, 4, 4, 2), f.clone()];
        let cfg = LossConfig { multi_loss: false, ms_ssim: small_cfg(), ..LossConfig::default() };
        assert!(total_loss(&est, &f, &cfg).unwrap().total.abs() < 1e-12);
        let g = loss_gradients(&est, &f, &cfg).unwrap();
        assert!(g[0].data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn breakdown_sums_to_total() {
        let f = random_cube(4, 4, 4, 2);
        let est = vec![random_cube(5, 4, 4, 2), random_cube(6, 4, 4, 2), random_cube(7, 4, 4, 2)];
        let cfg = LossConfig { ms_ssim: small_cfg(), ..LossConfig::default() };
        let b = total_loss(&est, &f, &cfg).unwrap();
        let s: f64 = b.stages.iter().map(|s| s.total).sum();
        assert!((s - b.total).abs() < 1e-10);
        assert!((b.spatial() + b.spectral() - b.total).abs() < 1e-10);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let f = random_cube(8, 4, 4, 2);
        let est = vec![random_cube(9, 4, 4, 2), random_cube(10, 4, 4, 2)];
        for mode in [LossMode::Proposed, LossMode::SpatialOnly, LossMode::Mse] {
            let cfg = LossConfig { mode, ms_ssim: small_cfg(), ..LossConfig::default() };
            let g = loss_gradients(&est, &f, &cfg).unwrap();
            let h = 1e-6;
            for k in 0..est.len() {
                for v in 0..f.len() {
                    let mut p = est.clone();
                    p[k].data_mut()[v] += h;
                    let mut m = est.clone();
                    m[k].data_mut()[v] -= h;
                    let fd = (total_loss(&p, &f, &cfg).unwrap().total - total_loss(&m, &f, &cfg).unwrap().total) / (2.0 * h);
                    let an = g[k].data()[v];
                    assert!((fd - an).abs() <= 1e-4 * fd.abs().max(1e-4), "{mode} k={k} v={v} fd={fd} an={an}");
                }
            }
        }
    }

    #[test]
    fn doubling_spectral_weight_doubles_its_gradient() {
        let f = random_cube(11, 3, 3, 3);
        let e = vec![random_cube(12, 3, 3, 3)];
        let cfg = |mu| LossConfig { weights: LossWeights { mu_s: 0.0, mu_lambda: mu }, ..LossConfig::default() };
        let a = loss_gradients(&e, &f, &cfg(1.0)).unwrap();
        let b = loss_gradients(&e, &f, &cfg(2.0)).unwrap();
        for (x, y) in a[0].data().iter().zip(b[0].data()) {
            assert!((2.0 * x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn mode_parses() {
        assert_eq!("spatial_only".parse::<LossMode>().unwrap(), LossMode::SpatialOnly);
        assert!("l2".parse::<LossMode>().is_err());
    }
}
