//! Unrolled ADMM: `h = prox(f + u)`, one gradient step on `f`, dual ascent on `u`.

use crate::cube::Cube;
use crate::error::{Error, Result};
use crate::optics::{FusionOperator, Measurement};

use super::prox::ProximalSpec;

pub const INITIAL_LAMBDA: f64 = 0.1;
pub const INITIAL_RHO: f64 = 0.1;
pub const INITIAL_ALPHA: f64 = 1.0;

/// Step sizes are stored as logarithms so every realized value is positive.
#[derive(Clone, Debug, PartialEq)]
pub struct StageParams {
    pub raw: [f64; 3],
    pub prox: ProximalSpec,
}

impl StageParams {
    pub fn new(lambda: f64, rho: f64, alpha: f64, prox: ProximalSpec) -> Result<Self> {
        for (name, v) in [("lambda", lambda), ("rho", rho), ("alpha", alpha)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("stage {name} must be finite and > 0, got {v}")));
            }
        }
        prox.validate()?;
        Ok(Self { raw: [lambda.ln(), rho.ln(), alpha.ln()], prox })
    }

    pub fn initial(prox: ProximalSpec) -> Result<Self> {
        Self::new(INITIAL_LAMBDA, INITIAL_RHO, INITIAL_ALPHA, prox)
    }

    pub fn lambda(&self) -> f64 {
        self.raw[0].exp()
    }

    pub fn rho(&self) -> f64 {
        self.raw[1].exp()
    }

    pub fn alpha(&self) -> f64 {
        self.raw[2].exp()
    }

    /// Number of trainable values: three raw scalars plus proximal weights.
    pub fn param_len(&self) -> usize {
        3 + self.prox.params().len()
    }

    pub fn write_params(&self, out: &mut [f64]) {
        out[..3].copy_from_slice(&self.raw);
        out[3..].copy_from_slice(self.prox.params());
    }

    pub fn read_params(&mut self, src: &[f64]) {
        self.raw.copy_from_slice(&src[..3]);
        self.prox.params_mut().copy_from_slice(&src[3..]);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdmmState {
    pub f: Cube,
    pub u: Cube,
    pub h: Cube,
}

impl AdmmState {
    pub fn check(&self) -> Result<()> {
        self.f.ensure_same_shape(&self.u, "dual variable")?;
        self.f.ensure_same_shape(&self.h, "auxiliary variable")?;
        Ok(())
    }
}

/// `f = ½(Φ_cᵀ y_c + Φ_mᵀ y_m)`, `u = 0`, `h = f`.
pub fn initialize(op: &FusionOperator, y_c: &Measurement, y_m: &Measurement) -> Result<AdmmState> {
    let mut f = op.cassi_adjoint(y_c)?;
    f.axpy(1.0, &op.mcfa_adjoint(y_m)?);
    f.scale(0.5);
    let u = Cube::zeros_like(&f);
    Ok(AdmmState { h: f.clone(), f, u })
}

/// Residuals `Φf − y` of both arms.
fn residuals(op: &FusionOperator, f: &Cube, y_c: &Measurement, y_m: &Measurement) -> Result<(Measurement, Measurement)> {
    let (gc, gm) = op.forward(f)?;
    Ok((gc.sub(y_c), gm.sub(y_m)))
}

/// `Φ_cᵀ r_c + Φ_mᵀ r_m + ρ(f − h + u)`.
fn f_gradient(op: &FusionOperator, state: &AdmmState, rc: &Measurement, rm: &Measurement, rho: f64) -> Result<Cube> {
    let mut g = op.cassi_adjoint(rc)?;
    g.axpy(1.0, &op.mcfa_adjoint(rm)?);
    g.axpy(rho, &state.f);
    g.axpy(-rho, &state.h);
    g.axpy(rho, &state.u);
    Ok(g)
}

fn ensure_finite(c: &Cube, what: &str) -> Result<()> {
    if !c.is_finite() {
        return Err(Error::InvalidValue(format!("non-finite {what}")));
    }
    Ok(())
}

/// One gradient step on the augmented Lagrangian; `state.h` must already be updated.
pub fn f_update(state: &AdmmState, y_c: &Measurement, y_m: &Measurement, op: &FusionOperator, p: &StageParams) -> Result<Cube> {
    state.check()?;
    let (rc, rm) = residuals(op, &state.f, y_c, y_m)?;
    let g = f_gradient(op, state, &rc, &rm, p.rho())?;
    let mut f = state.f.clone();
    f.axpy(-p.lambda(), &g);
    ensure_finite(&f, "f update")?;
    Ok(f)
}

/// `u + α(f − h)`.
pub fn u_update(state: &AdmmState, alpha: f64) -> Cube {
    let mut u = state.u.clone();
    for ((u, f), h) in u.data_mut().iter_mut().zip(state.f.data()).zip(state.h.data()) {
        *u += alpha * (f - h);
    }
    u
}

pub fn run_stage(state: &AdmmState, y_c: &Measurement, y_m: &Measurement, op: &FusionOperator, p: &StageParams) -> Result<AdmmState> {
    state.check()?;
    let h = p.prox.apply(&state.f.add(&state.u))?;
    let mid = AdmmState { f: state.f.clone(), u: state.u.clone(), h };
    let f = f_update(&mid, y_c, y_m, op, p)?;
    let next = AdmmState { f, u: mid.u, h: mid.h };
    let u = u_update(&next, p.alpha());
    Ok(AdmmState { u, ..next })
}

/// Estimates `[f̂⁰, …, f̂ᴷ]`, with `f̂⁰` the initialization.
pub fn reconstruct(op: &FusionOperator, y_c: &Measurement, y_m: &Measurement, stages: &[StageParams]) -> Result<Vec<Cube>> {
    Ok(reconstruct_states(op, y_c, y_m, stages)?.into_iter().map(|s| s.f).collect())
}

/// Full states after initialization and after each stage.
pub fn reconstruct_states(op: &FusionOperator, y_c: &Measurement, y_m: &Measurement, stages: &[StageParams]) -> Result<Vec<AdmmState>> {
    if stages.is_empty() {
        return Err(Error::Config("reconstruction needs at least one stage".into()));
    }
    let mut states = vec![initialize(op, y_c, y_m)?];
    for p in stages {
        let next = run_stage(states.last().unwrap(), y_c, y_m, op, p)?;
        states.push(next);
    }
    Ok(states)
}

/// Intermediates of one stage kept for the backward pass.
struct StageTape {
    f: Cube,
    u: Cube,
    h: Cube,
    grad: Cube,
    rc: Measurement,
    rm: Measurement,
    f_next: Cube,
}

/// Forward pass that records what [`backward`] needs.
pub struct Tape {
    stages: Vec<StageTape>,
    estimates: Vec<Cube>,
}

impl Tape {
    pub fn estimates(&self) -> &[Cube] {
        &self.estimates
    }

    pub fn into_estimates(self) -> Vec<Cube> {
        self.estimates
    }
}

pub fn forward_with_tape(op: &FusionOperator, y_c: &Measurement, y_m: &Measurement, stages: &[StageParams]) -> Result<Tape> {
    if stages.is_empty() {
        return Err(Error::Config("reconstruction needs at least one stage".into()));
    }
    let init = initialize(op, y_c, y_m)?;
    let mut estimates = vec![init.f.clone()];
    let (mut f, mut u) = (init.f, init.u);
    let mut tape = Vec::with_capacity(stages.len());
    for p in stages {
        let h = p.prox.apply(&f.add(&u))?;
        let (rc, rm) = residuals(op, &f, y_c, y_m)?;
        let state = AdmmState { f, u, h };
        let grad = f_gradient(op, &state, &rc, &rm, p.rho())?;
        let mut f_next = state.f.clone();
        f_next.axpy(-p.lambda(), &grad);
        ensure_finite(&f_next, "f update")?;
        let u_next = u_update(&AdmmState { f: f_next.clone(), u: state.u.clone(), h: state.h.clone() }, p.alpha());
        estimates.push(f_next.clone());
        let AdmmState { f: f_prev, u: u_prev, h } = state;
        tape.push(StageTape { f: f_prev, u: u_prev, h, grad, rc, rm, f_next: f_next.clone() });
        f = f_next;
        u = u_next;
    }
    Ok(Tape { stages: tape, estimates })
}

/// Gradient of a stage's trainables: raw (log) step sizes, then proximal weights.
#[derive(Clone, Debug, PartialEq)]
pub struct StageGrads {
    pub raw: [f64; 3],
    pub prox: Vec<f64>,
}

impl StageGrads {
    pub fn write(&self, out: &mut [f64]) {
        out[..3].copy_from_slice(&self.raw);
        out[3..].copy_from_slice(&self.prox);
    }
}

#[derive(Clone, Debug)]
pub struct NetworkGrads {
    pub stages: Vec<StageGrads>,
    pub y_c: Measurement,
    pub y_m: Measurement,
    /// Gradient with respect to the realized CASSI mask, when requested.
    pub mask_c: Option<Vec<f64>>,
    pub mask_m: Option<Vec<f64>>,
}

/// Which realized masks to differentiate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MaskGradRequest {
    pub cassi: bool,
    pub mcfa: bool,
}

fn add_into(acc: &mut Option<Vec<f64>>, g: Vec<f64>, scale: f64) {
    if let Some(a) = acc.as_mut() {
        for (x, y) in a.iter_mut().zip(g) {
            *x += scale * y;
        }
    }
}

/// Reverse-mode pass through the network given `∂L/∂f̂ᵏ` for every estimate.
pub fn backward(
    op: &FusionOperator,
    y_c: &Measurement,
    y_m: &Measurement,
    stages: &[StageParams],
    tape: &Tape,
    grad_estimates: &[Cube],
    masks: MaskGradRequest,
) -> Result<NetworkGrads> {
    if grad_estimates.len() != stages.len() + 1 || tape.stages.len() != stages.len() {
        return Err(Error::dim(format!(
            "backward needs {} estimate gradients and a tape of {} stages, got {} and {}",
            stages.len() + 1,
            stages.len(),
            grad_estimates.len(),
            tape.stages.len()
        )));
    }
    let mut g_yc = Measurement::zeros_like(y_c);
    let mut g_ym = Measurement::zeros_like(y_m);
    let mut mask_c = masks.cassi.then(|| vec![0.0; op.cassi_mask().len()]);
    let mut mask_m = masks.mcfa.then(|| vec![0.0; op.mcfa_mask().len()]);
    let mut out = vec![StageGrads { raw: [0.0; 3], prox: Vec::new() }; stages.len()];

    let mut gf = grad_estimates[stages.len()].clone();
    let mut gu = Cube::zeros_like(&gf);
    for (k, (p, t)) in stages.iter().zip(&tape.stages).enumerate().rev() {
        let (lambda, rho, alpha) = (p.lambda(), p.rho(), p.alpha());
        // u' = u + α(f' − h)
        let mut gf_next = gf;
        gf_next.axpy(alpha, &gu);
        let mut gh = gu.scaled(-alpha);
        let g_alpha = gu.dot(&t.f_next.sub(&t.h));
        let mut gu_prev = gu;
        // f' = f − λ·grad
        let g_lambda = -gf_next.dot(&t.grad);
        let g_grad = gf_next.scaled(-lambda);
        let mut gf_prev = gf_next;
        // grad = Φ_cᵀ r_c + Φ_mᵀ r_m + ρ(f − h + u), r = Φf − y
        let grc = op.cassi_forward(&g_grad)?;
        let grm = op.mcfa_forward(&g_grad)?;
        gf_prev.axpy(1.0, &op.cassi_adjoint(&grc)?);
        gf_prev.axpy(1.0, &op.mcfa_adjoint(&grm)?);
        g_yc.axpy(-1.0, &grc);
        g_ym.axpy(-1.0, &grm);
        if mask_c.is_some() {
            add_into(&mut mask_c, op.cassi_mask_grad(&g_grad, &t.rc)?, 1.0);
            add_into(&mut mask_c, op.cassi_mask_grad(&t.f, &grc)?, 1.0);
        }
        if mask_m.is_some() {
            add_into(&mut mask_m, op.mcfa_mask_grad(&g_grad, &t.rm)?, 1.0);
            add_into(&mut mask_m, op.mcfa_mask_grad(&t.f, &grm)?, 1.0);
        }
        let mut gap = t.f.sub(&t.h);
        gap.axpy(1.0, &t.u);
        let g_rho = g_grad.dot(&gap);
        gf_prev.axpy(rho, &g_grad);
        gh.axpy(-rho, &g_grad);
        gu_prev.axpy(rho, &g_grad);
        // h = prox(f + u)
        let (gv, g_theta) = p.prox.backward(&t.f.add(&t.u), &gh)?;
        gf_prev.axpy(1.0, &gv);
        gu_prev.axpy(1.0, &gv);

        out[k] = StageGrads { raw: [g_lambda * lambda, g_rho * rho, g_alpha * alpha], prox: g_theta };
        gf_prev.axpy(1.0, &grad_estimates[k]);
        gf = gf_prev;
        gu = gu_prev;
    }
    // f⁰ = ½(Φ_cᵀ y_c + Φ_mᵀ y_m); u⁰ = 0 has no inputs
    g_yc.axpy(0.5, &op.cassi_forward(&gf)?);
    g_ym.axpy(0.5, &op.mcfa_forward(&gf)?);
    if mask_c.is_some() {
        add_into(&mut mask_c, op.cassi_mask_grad(&gf, y_c)?, 0.5);
    }
    if mask_m.is_some() {
        add_into(&mut mask_m, op.mcfa_mask_grad(&gf, y_m)?, 0.5);
    }
    Ok(NetworkGrads { stages: out, y_c: g_yc, y_m: g_ym, mask_c, mask_m })
}

/// `‖Φ_c f − y_c‖² + ‖Φ_m f − y_m‖²`.
pub fn data_fidelity(op: &FusionOperator, f: &Cube, y_c: &Measurement, y_m: &Measurement) -> Result<f64> {
    let (rc, rm) = residuals(op, f, y_c, y_m)?;
    Ok(rc.norm_sq() + rm.norm_sq())
}
