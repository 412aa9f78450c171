//! Proximal operators used as the `h` update of each stage.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cube::Cube;
use crate::error::{Error, Result};
use crate::io::{put_f32, put_u32, Reader};

pub const LEAKY_SLOPE: f64 = 0.1;
pub const DEFAULT_HIDDEN: usize = 16;
const TV_STEP: f64 = 0.125;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProximalKind {
    SoftThresholdDct,
    TvChambolle,
    #[default]
    ConvDenoiser,
}

impl ProximalKind {
    pub fn tag(self) -> u8 {
        match self {
            Self::SoftThresholdDct => 0,
            Self::TvChambolle => 1,
            Self::ConvDenoiser => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Self::SoftThresholdDct),
            1 => Some(Self::TvChambolle),
            2 => Some(Self::ConvDenoiser),
            _ => None,
        }
    }
}

impl std::str::FromStr for ProximalKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "soft_threshold_dct" => Ok(Self::SoftThresholdDct),
            "tv_chambolle" => Ok(Self::TvChambolle),
            "conv_denoiser" => Ok(Self::ConvDenoiser),
            other => Err(Error::Config(format!("unknown proximal kind {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ProximalSpec {
    SoftThresholdDct { tau: f64 },
    TvChambolle { weight: f64, iterations: usize },
    ConvDenoiser(ConvDenoiser),
}

impl ProximalSpec {
    pub fn identity() -> Self {
        Self::SoftThresholdDct { tau: 0.0 }
    }

    pub fn kind(&self) -> ProximalKind {
        match self {
            Self::SoftThresholdDct { .. } => ProximalKind::SoftThresholdDct,
            Self::TvChambolle { .. } => ProximalKind::TvChambolle,
            Self::ConvDenoiser(_) => ProximalKind::ConvDenoiser,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::SoftThresholdDct { tau } if !(tau.is_finite() && *tau >= 0.0) => {
                Err(Error::Config(format!("soft-threshold tau must be >= 0, got {tau}")))
            }
            Self::TvChambolle { weight, .. } if !(weight.is_finite() && *weight >= 0.0) => {
                Err(Error::Config(format!("tv weight must be >= 0, got {weight}")))
            }
            Self::ConvDenoiser(net) => net.validate(),
            _ => Ok(()),
        }
    }

    /// Trainable parameters (only the conv denoiser has any).
    pub fn params(&self) -> &[f64] {
        match self {
            Self::ConvDenoiser(net) => &net.params,
            _ => &[],
        }
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        match self {
            Self::ConvDenoiser(net) => &mut net.params,
            _ => &mut [],
        }
    }

    pub fn apply(&self, v: &Cube) -> Result<Cube> {
        if !v.is_finite() {
            return Err(Error::InvalidValue("proximal input contains non-finite values".into()));
        }
        match self {
            Self::SoftThresholdDct { tau } => Ok(soft_threshold_dct(v, *tau)),
            Self::TvChambolle { weight, iterations } => Ok(tv_chambolle(v, *weight, *iterations)),
            Self::ConvDenoiser(net) => net.forward(v),
        }
    }

    /// Vector-Jacobian product at `v`: gradients with respect to the input and
    /// to [`ProximalSpec::params`].
    pub fn backward(&self, v: &Cube, upstream: &Cube) -> Result<(Cube, Vec<f64>)> {
        v.ensure_same_shape(upstream, "proximal upstream")?;
        match self {
            Self::SoftThresholdDct { tau } => Ok((soft_threshold_dct_backward(v, *tau, upstream), Vec::new())),
            Self::TvChambolle { .. } => {
                Err(Error::Config("tv_chambolle is inference-only and cannot be differentiated".into()))
            }
            Self::ConvDenoiser(net) => net.backward(v, upstream),
        }
    }

    pub fn encode_payload(&self) -> Vec<u8> {
        let mut out = Vec::new();
        match self {
            Self::SoftThresholdDct { tau } => put_f32(&mut out, *tau as f32),
            Self::TvChambolle { weight, iterations } => {
                put_f32(&mut out, *weight as f32);
                put_u32(&mut out, *iterations as u32);
            }
            Self::ConvDenoiser(net) => {
                put_u32(&mut out, net.bands as u32);
                put_u32(&mut out, net.hidden as u32);
                for &p in &net.params {
                    put_f32(&mut out, p as f32);
                }
            }
        }
        out
    }

    pub(crate) fn decode_payload(kind: ProximalKind, r: &mut Reader<'_>, len: usize) -> Result<Self> {
        let start = r.offset();
        let spec = match kind {
            ProximalKind::SoftThresholdDct => Self::SoftThresholdDct { tau: f64::from(r.finite_f32("tau")?) },
            ProximalKind::TvChambolle => Self::TvChambolle {
                weight: f64::from(r.finite_f32("tv weight")?),
                iterations: r.u32("tv iterations")? as usize,
            },
            ProximalKind::ConvDenoiser => {
                let bands = r.u32("denoiser bands")? as usize;
                let hidden = r.u32("denoiser hidden")? as usize;
                let count = ConvDenoiser::param_count(bands, hidden);
                let params = r.f32_vec(count, "denoiser weight")?.into_iter().map(f64::from).collect();
                Self::ConvDenoiser(ConvDenoiser::from_params(bands, hidden, params)?)
            }
        };
        if r.offset() - start != len {
            return Err(Error::format(start, format!("proximal payload length {len} does not match its content")));
        }
        spec.validate().map_err(|e| Error::format(start, e.to_string()))?;
        Ok(spec)
    }
}

/// Orthonormal DCT-II matrix, row `k` holds basis vector `k`.
fn dct_matrix(n: usize) -> Vec<f64> {
    let mut c = vec![0.0; n * n];
    for k in 0..n {
        let s = if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
        for i in 0..n {
            c[k * n + i] = s * (std::f64::consts::PI * (i as f64 + 0.5) * k as f64 / n as f64).cos();
        }
    }
    c
}

/// `A · X · Bᵀ` for row-major `X` of size `r × c`; `A` is `r × r`, `B` is `c × c`.
fn sandwich(a: &[f64], x: &[f64], b: &[f64], r: usize, c: usize, transpose: bool) -> Vec<f64> {
    let at = |i: usize, k: usize| if transpose { a[k * r + i] } else { a[i * r + k] };
    let bt = |j: usize, k: usize| if transpose { b[k * c + j] } else { b[j * c + k] };
    let mut tmp = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            tmp[i * c + j] = (0..c).map(|k| x[i * c + k] * bt(j, k)).sum();
        }
    }
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[i * c + j] = (0..r).map(|k| at(i, k) * tmp[k * c + j]).sum();
        }
    }
    out
}

fn shrink(x: f64, tau: f64) -> f64 {
    x.signum() * (x.abs() - tau).max(0.0)
}

/// Per-band orthonormal 2-D DCT, soft-threshold, inverse DCT.
pub fn soft_threshold_dct(v: &Cube, tau: f64) -> Cube {
    let (m, n, l) = v.dims();
    let (cm, cn) = (dct_matrix(m), dct_matrix(n));
    let mut out = Cube::zeros(m, n, l);
    for b in 0..l {
        let coef: Vec<f64> = sandwich(&cm, v.band(b), &cn, m, n, false).into_iter().map(|x| shrink(x, tau)).collect();
        out.band_mut(b).copy_from_slice(&sandwich(&cm, &coef, &cn, m, n, true));
    }
    out
}

fn soft_threshold_dct_backward(v: &Cube, tau: f64, upstream: &Cube) -> Cube {
    let (m, n, l) = v.dims();
    let (cm, cn) = (dct_matrix(m), dct_matrix(n));
    let mut out = Cube::zeros(m, n, l);
    for b in 0..l {
        let coef = sandwich(&cm, v.band(b), &cn, m, n, false);
        let g: Vec<f64> = sandwich(&cm, upstream.band(b), &cn, m, n, false)
            .into_iter()
            .zip(&coef)
            .map(|(g, c)| if c.abs() > tau { g } else { 0.0 })
            .collect();
        out.band_mut(b).copy_from_slice(&sandwich(&cm, &g, &cn, m, n, true));
    }
    out
}

/// Fixed-iteration Chambolle dual projection for isotropic TV, per band.
pub fn tv_chambolle(v: &Cube, weight: f64, iterations: usize) -> Cube {
    if weight == 0.0 {
        return v.clone();
    }
    let (m, n, l) = v.dims();
    let mut out = Cube::zeros(m, n, l);
    for b in 0..l {
        let f = v.band(b);
        let (mut px, mut py) = (vec![0.0; m * n], vec![0.0; m * n]);
        let div = |px: &[f64], py: &[f64], i: usize, j: usize| {
            let k = i * n + j;
            let dx = if j + 1 < n { px[k] } else { 0.0 } - if j > 0 { px[k - 1] } else { 0.0 };
            let dy = if i + 1 < m { py[k] } else { 0.0 } - if i > 0 { py[k - n] } else { 0.0 };
            dx + dy
        };
        for _ in 0..iterations {
            let w: Vec<f64> = (0..m * n).map(|k| div(&px, &py, k / n, k % n) - f[k] / weight).collect();
            for i in 0..m {
                for j in 0..n {
                    let k = i * n + j;
                    let gx = if j + 1 < n { w[k + 1] - w[k] } else { 0.0 };
                    let gy = if i + 1 < m { w[k + n] - w[k] } else { 0.0 };
                    let norm = (gx * gx + gy * gy).sqrt();
                    px[k] = (px[k] + TV_STEP * gx) / (1.0 + TV_STEP * norm);
                    py[k] = (py[k] + TV_STEP * gy) / (1.0 + TV_STEP * norm);
                }
            }
        }
        let band = out.band_mut(b);
        for k in 0..m * n {
            band[k] = f[k] - weight * div(&px, &py, k / n, k % n);
        }
    }
    out
}

/// Residual denoiser `v + N(v)`: three depthwise-3×3 + pointwise-1×1 layers
/// (`bands → hidden → hidden → bands`), leaky rectifier after the first two.
///
/// Parameter layout per layer: depthwise kernels `[c_in][9]`, pointwise
/// matrix `[c_out][c_in]`, bias `[c_out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvDenoiser {
    bands: usize,
    hidden: usize,
    params: Vec<f64>,
}

struct LayerShape {
    c_in: usize,
    c_out: usize,
    dw: usize,
    pw: usize,
    bias: usize,
}

/// Activations kept for the backward pass of one layer.
struct LayerTape {
    input: Vec<f64>,
    depthwise: Vec<f64>,
    pre: Vec<f64>,
}

impl ConvDenoiser {
    fn channels(bands: usize, hidden: usize) -> [(usize, usize); 3] {
        [(bands, hidden), (hidden, hidden), (hidden, bands)]
    }

    pub fn param_count(bands: usize, hidden: usize) -> usize {
        Self::channels(bands, hidden).iter().map(|(i, o)| 9 * i + o * i + o).sum()
    }

    fn layers(&self) -> Vec<LayerShape> {
        let mut at = 0;
        Self::channels(self.bands, self.hidden)
            .iter()
            .map(|&(c_in, c_out)| {
                let s = LayerShape { c_in, c_out, dw: at, pw: at + 9 * c_in, bias: at + 9 * c_in + c_out * c_in };
                at = s.bias + c_out;
                s
            })
            .collect()
    }

    pub fn zeros(bands: usize, hidden: usize) -> Result<Self> {
        Self::from_params(bands, hidden, vec![0.0; Self::param_count(bands, hidden)])
    }

    /// Random hidden layers, zero output layer: the initial network is the identity.
    pub fn new_random(bands: usize, hidden: usize, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(bands, hidden)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = net.layers();
        for s in &layers[..2] {
            let dw_bound = (3.0f64 / 9.0).sqrt();
            let pw_bound = (3.0 / s.c_in as f64).sqrt();
            for p in &mut net.params[s.dw..s.pw] {
                *p = rng.random_range(-dw_bound..dw_bound);
            }
            for p in &mut net.params[s.pw..s.bias] {
                *p = rng.random_range(-pw_bound..pw_bound);
            }
        }
        // output layer keeps zero pointwise weights and bias but random
        // depthwise taps so gradients reach the pointwise weights immediately
        let s = &layers[2];
        for p in &mut net.params[s.dw..s.pw] {
            *p = rng.random_range(-0.5..0.5);
        }
        Ok(net)
    }

    pub fn from_params(bands: usize, hidden: usize, params: Vec<f64>) -> Result<Self> {
        if bands == 0 || hidden == 0 {
            return Err(Error::Config(format!("denoiser needs bands >= 1 and hidden >= 1, got {bands}, {hidden}")));
        }
        let want = Self::param_count(bands, hidden);
        if params.len() != want {
            return Err(Error::dim(format!("denoiser expects {want} parameters, got {}", params.len())));
        }
        let net = Self { bands, hidden, params };
        net.validate()?;
        Ok(net)
    }

    pub fn validate(&self) -> Result<()> {
        if self.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidValue("denoiser weights contain non-finite values".into()));
        }
        Ok(())
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn check_input(&self, v: &Cube) -> Result<()> {
        if v.bands() != self.bands {
            return Err(Error::dim(format!("denoiser built for {} bands, input has {}", self.bands, v.bands())));
        }
        Ok(())
    }

    fn run(&self, v: &Cube, mut tape: Option<&mut Vec<LayerTape>>) -> Cube {
        let (m, n, _) = v.dims();
        let plane = m * n;
        let mut x = v.data().to_vec();
        let layers = self.layers();
        for (idx, s) in layers.iter().enumerate() {
            let mut dw = vec![0.0; s.c_in * plane];
            for c in 0..s.c_in {
                depthwise3x3(&x[c * plane..(c + 1) * plane], &self.params[s.dw + 9 * c..s.dw + 9 * c + 9], m, n, &mut dw[c * plane..(c + 1) * plane]);
            }
            let mut pre = vec![0.0; s.c_out * plane];
            for o in 0..s.c_out {
                let out = &mut pre[o * plane..(o + 1) * plane];
                out.fill(self.params[s.bias + o]);
                for c in 0..s.c_in {
                    let w = self.params[s.pw + o * s.c_in + c];
                    if w != 0.0 {
                        for (y, d) in out.iter_mut().zip(&dw[c * plane..(c + 1) * plane]) {
                            *y += w * d;
                        }
                    }
                }
            }
            let last = idx + 1 == layers.len();
            let next: Vec<f64> = if last { pre.clone() } else { pre.iter().map(|&z| leaky(z)).collect() };
            if let Some(t) = tape.as_deref_mut() {
                t.push(LayerTape { input: std::mem::take(&mut x), depthwise: dw, pre });
            }
            x = next;
        }
        let mut out = v.clone();
        for (o, r) in out.data_mut().iter_mut().zip(&x) {
            *o += r;
        }
        out
    }

    pub fn forward(&self, v: &Cube) -> Result<Cube> {
        self.check_input(v)?;
        Ok(self.run(v, None))
    }

    pub fn backward(&self, v: &Cube, upstream: &Cube) -> Result<(Cube, Vec<f64>)> {
        self.check_input(v)?;
        v.ensure_same_shape(upstream, "denoiser upstream")?;
        let (m, n, _) = v.dims();
        let plane = m * n;
        let mut tape = Vec::with_capacity(3);
        self.run(v, Some(&mut tape));
        let layers = self.layers();
        let mut grad = vec![0.0; self.params.len()];
        // residual branch receives the upstream unchanged
        let mut g_out = upstream.data().to_vec();
        for (idx, (s, t)) in layers.iter().zip(&tape).enumerate().rev() {
            let last = idx + 1 == layers.len();
            let g_pre: Vec<f64> = if last {
                g_out
            } else {
                g_out.iter().zip(&t.pre).map(|(g, &z)| if z >= 0.0 { *g } else { LEAKY_SLOPE * g }).collect()
            };
            let mut g_dw = vec![0.0; s.c_in * plane];
            for o in 0..s.c_out {
                let gz = &g_pre[o * plane..(o + 1) * plane];
                grad[s.bias + o] += gz.iter().sum::<f64>();
                for c in 0..s.c_in {
                    let d = &t.depthwise[c * plane..(c + 1) * plane];
                    grad[s.pw + o * s.c_in + c] += gz.iter().zip(d).map(|(a, b)| a * b).sum::<f64>();
                    let w = self.params[s.pw + o * s.c_in + c];
                    if w != 0.0 {
                        for (gd, g) in g_dw[c * plane..(c + 1) * plane].iter_mut().zip(gz) {
                            *gd += w * g;
                        }
                    }
                }
            }
            let mut g_in = vec![0.0; s.c_in * plane];
            for c in 0..s.c_in {
                let kernel = &self.params[s.dw + 9 * c..s.dw + 9 * c + 9];
                let gd = &g_dw[c * plane..(c + 1) * plane];
                let x = &t.input[c * plane..(c + 1) * plane];
                depthwise3x3_backward(x, kernel, gd, m, n, &mut grad[s.dw + 9 * c..s.dw + 9 * c + 9], &mut g_in[c * plane..(c + 1) * plane]);
            }
            g_out = g_in;
        }
        let mut g_v = upstream.clone();
        for (a, b) in g_v.data_mut().iter_mut().zip(&g_out) {
            *a += b;
        }
        Ok((g_v, grad))
    }
}

fn leaky(z: f64) -> f64 {
    if z >= 0.0 {
        z
    } else {
        LEAKY_SLOPE * z
    }
}

/// Zero-padded 3×3 cross-correlation of one channel.
fn depthwise3x3(x: &[f64], k: &[f64], m: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0;
            for di in 0..3 {
                let ii = i as isize + di as isize - 1;
                if ii < 0 || ii >= m as isize {
                    continue;
                }
                for dj in 0..3 {
                    let jj = j as isize + dj as isize - 1;
                    if jj < 0 || jj >= n as isize {
                        continue;
                    }
                    acc += k[di * 3 + dj] * x[ii as usize * n + jj as usize];
                }
            }
            out[i * n + j] = acc;
        }
    }
}

fn depthwise3x3_backward(x: &[f64], k: &[f64], g: &[f64], m: usize, n: usize, g_k: &mut [f64], g_x: &mut [f64]) {
    for i in 0..m {
        for j in 0..n {
            let gij = g[i * n + j];
            if gij == 0.0 {
                continue;
            }
            for di in 0..3 {
                let ii = i as isize + di as isize - 1;
                if ii < 0 || ii >= m as isize {
                    continue;
                }
                for dj in 0..3 {
                    let jj = j as isize + dj as isize - 1;
                    if jj < 0 || jj >= n as isize {
                        continue;
                    }
                    let src = ii as usize * n + jj as usize;
                    g_k[di * 3 + dj] += gij * x[src];
                    g_x[src] += gij * k[di * 3 + dj];
                }
            }
        }
    }
}
