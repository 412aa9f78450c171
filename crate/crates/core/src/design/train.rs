//! Joint training of both apertures and the reconstruction stages.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::admm::{backward, forward_with_tape, reconstruct, MaskGradRequest, StageParams};
use crate::cube::{Cube, SpectralCube};
use crate::error::{Error, Result};
use crate::io::write_file;
use crate::metrics::{loss_and_gradients, psnr, LossConfig};
use crate::optics::{Activation, ApertureWeights, FusionOperator, Measurement, NoiseConfig};

use super::adam::{adam_step, AdamConfig, AdamState};
use super::regularizer::{binary_regularizer, binary_regularizer_grad};
use super::schedule::{schedule_value, ScheduleConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Halve the learning rate every this many epochs; 0 keeps it constant.
    pub lr_halve_every: usize,
    pub batch: usize,
    pub seed: u64,
    pub train_cassi: bool,
    pub train_mcfa: bool,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("train.epochs must be >= 1".into()));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::Config(format!("train.lr must be finite and >= 0, got {}", self.lr)));
        }
        if self.batch == 0 {
            return Err(Error::Config("train.batch must be >= 1".into()));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        if self.lr_halve_every == 0 {
            return self.lr;
        }
        let halvings = (epoch.saturating_sub(1) / self.lr_halve_every) as i32;
        self.lr * 0.5f64.powi(halvings)
    }

    pub fn trainable(&self) -> Trainable {
        Trainable { cassi: self.train_cassi, mcfa: self.train_mcfa }
    }
}

/// Slope γ and regularizer weight μ_b per epoch. Without `dynamic` both sit at
/// their maximum from the first epoch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchedulesConfig {
    pub dynamic: bool,
    pub gamma: ScheduleConfig,
    pub mu: ScheduleConfig,
}

impl SchedulesConfig {
    pub fn validate(&self) -> Result<()> {
        self.gamma.validate()?;
        self.mu.validate()
    }

    pub fn gamma_at(&self, epoch: usize) -> f64 {
        if self.dynamic {
            schedule_value(&self.gamma, epoch)
        } else {
            self.gamma.max_value
        }
    }

    pub fn mu_at(&self, epoch: usize) -> f64 {
        if self.dynamic {
            schedule_value(&self.mu, epoch)
        } else {
            self.mu.max_value
        }
    }
}

/// Which apertures receive updates; stage parameters always do.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Trainable {
    pub cassi: bool,
    pub mcfa: bool,
}

impl Trainable {
    pub const ALL: Self = Self { cassi: true, mcfa: true };
}

/// Sensing operator plus reconstruction stages.
#[derive(Clone, Debug)]
pub struct Model {
    pub op: FusionOperator,
    pub stages: Vec<StageParams>,
}

impl Model {
    pub fn new(op: FusionOperator, stages: Vec<StageParams>) -> Result<Self> {
        if stages.is_empty() {
            return Err(Error::Config("model needs at least one stage".into()));
        }
        let bands = op.cube_dims().2;
        for (k, s) in stages.iter().enumerate() {
            if let crate::admm::ProximalSpec::ConvDenoiser(net) = &s.prox {
                if net.bands() != bands {
                    return Err(Error::dim(format!("stage {k} denoiser has {} bands, cube has {bands}", net.bands())));
                }
            }
        }
        Ok(Self { op, stages })
    }

    pub fn param_count(&self, t: Trainable) -> usize {
        let mut n: usize = self.stages.iter().map(StageParams::param_len).sum();
        if t.cassi {
            n += self.op.cassi().len();
        }
        if t.mcfa {
            n += self.op.mcfa().len();
        }
        n
    }

    /// Flat vector: CASSI weights, MCFA weights (each if trainable), then stages.
    pub fn params(&self, t: Trainable) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count(t));
        if t.cassi {
            out.extend_from_slice(self.op.cassi().weights());
        }
        if t.mcfa {
            out.extend_from_slice(self.op.mcfa().weights());
        }
        for s in &self.stages {
            let at = out.len();
            out.resize(at + s.param_len(), 0.0);
            s.write_params(&mut out[at..]);
        }
        out
    }

    /// Inverse of [`Model::params`]. Identity-activated weights are projected
    /// onto `[0, 1]`.
    pub fn set_params(&mut self, t: Trainable, p: &[f64]) {
        let mut at = 0;
        let (nc, nm) = (self.op.cassi().len(), self.op.mcfa().len());
        self.op.update_apertures(|c, m| {
            if t.cassi {
                c.weights_mut().copy_from_slice(&p[at..at + nc]);
                project(c);
                at += nc;
            }
            if t.mcfa {
                m.weights_mut().copy_from_slice(&p[at..at + nm]);
                project(m);
                at += nm;
            }
        });
        for s in &mut self.stages {
            let n = s.param_len();
            s.read_params(&p[at..at + n]);
            at += n;
        }
    }

    pub fn set_gamma(&mut self, gamma: f64) -> Result<()> {
        self.op.set_gamma(gamma)
    }

    pub fn measure(&self, f: &Cube, noise: &NoiseConfig, stream: u64, id: u64) -> Result<(Measurement, Measurement)> {
        let (gc, gm) = self.op.forward(f)?;
        Ok((noise.apply(&gc, stream, 2 * id)?, noise.apply(&gm, stream, 2 * id + 1)?))
    }

    pub fn reconstruct(&self, y_c: &Measurement, y_m: &Measurement) -> Result<Vec<Cube>> {
        reconstruct(&self.op, y_c, y_m, &self.stages)
    }
}

fn project(w: &mut ApertureWeights) {
    if w.activation() == Activation::Identity {
        for v in w.weights_mut() {
            *v = v.clamp(0.0, 1.0);
        }
    }
}

/// Batch-mean loss terms; `reg` is `μ_b·(R(W_c) + R(W_m))` over trainable arms.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepLoss {
    pub spatial: f64,
    pub spectral: f64,
    pub reg: f64,
}

impl StepLoss {
    pub fn total(&self) -> f64 {
        self.spatial + self.spectral + self.reg
    }
}

fn regularizer(model: &Model, t: Trainable) -> f64 {
    let mut r = 0.0;
    if t.cassi {
        r += binary_regularizer(model.op.cassi());
    }
    if t.mcfa {
        r += binary_regularizer(model.op.mcfa());
    }
    r
}

fn sample_gradient(model: &Model, f: &Cube, id: u64, loss: &LossConfig, noise: &NoiseConfig, stream: u64, t: Trainable) -> Result<(StepLoss, Vec<f64>)> {
    let op = &model.op;
    let (y_c, y_m) = model.measure(f, noise, stream, id)?;
    let tape = forward_with_tape(op, &y_c, &y_m, &model.stages)?;
    let (breakdown, g_est) = loss_and_gradients(tape.estimates(), f, loss)?;
    let g = backward(op, &y_c, &y_m, &model.stages, &tape, &g_est, MaskGradRequest { cassi: t.cassi, mcfa: t.mcfa })?;

    let mut out = Vec::with_capacity(model.param_count(t));
    // measurements depend on the masks too; noise is treated as a constant
    if let Some(mut gh) = g.mask_c {
        for (a, b) in gh.iter_mut().zip(op.cassi_mask_grad(f, &g.y_c)?) {
            *a += b;
        }
        out.extend(op.chain_cassi(&gh));
    }
    if let Some(mut gh) = g.mask_m {
        for (a, b) in gh.iter_mut().zip(op.mcfa_mask_grad(f, &g.y_m)?) {
            *a += b;
        }
        out.extend(op.chain_mcfa(&gh));
    }
    for (s, sg) in model.stages.iter().zip(&g.stages) {
        let at = out.len();
        out.resize(at + s.param_len(), 0.0);
        sg.write(&mut out[at..]);
    }
    let step = StepLoss { spatial: breakdown.spatial(), spectral: breakdown.spectral(), reg: 0.0 };
    Ok((step, out))
}

/// Batch-mean data loss plus `μ_b·R` on trainable arms, and its gradient in
/// the [`Model::params`] layout. `batch` pairs sample ids (noise streams) with cubes.
pub fn objective(
    model: &Model,
    batch: &[(u64, &Cube)],
    loss: &LossConfig,
    noise: &NoiseConfig,
    stream: u64,
    mu_b: f64,
    t: Trainable,
) -> Result<(StepLoss, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::EmptyDataset("empty batch".into()));
    }
    let parts: Vec<Result<(StepLoss, Vec<f64>)>> =
        batch.par_iter().map(|(id, f)| sample_gradient(model, f, *id, loss, noise, stream, t)).collect();
    let inv = 1.0 / batch.len() as f64;
    let mut total = StepLoss::default();
    let mut grad = vec![0.0; model.param_count(t)];
    // summed in batch order so the result does not depend on thread timing
    for part in parts {
        let (s, g) = part?;
        total.spatial += inv * s.spatial;
        total.spectral += inv * s.spectral;
        for (a, b) in grad.iter_mut().zip(g) {
            *a += inv * b;
        }
    }
    total.reg = mu_b * regularizer(model, t);
    if mu_b != 0.0 {
        let mut at = 0;
        for (on, w) in [(t.cassi, model.op.cassi()), (t.mcfa, model.op.mcfa())] {
            if on {
                for (a, b) in grad[at..at + w.len()].iter_mut().zip(binary_regularizer_grad(w)) {
                    *a += mu_b * b;
                }
                at += w.len();
            }
        }
    }
    Ok((total, grad))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss_total: f64,
    pub loss_spatial: f64,
    pub loss_spectral: f64,
    pub loss_reg: f64,
    /// Mean validation PSNR of stages `1..=K`; empty without a validation set.
    pub val_psnr: Vec<f64>,
    pub binfrac_c: f64,
    pub binfrac_m: f64,
    pub lr: f64,
    pub gamma: f64,
    pub mu_b: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub stages: usize,
    pub rows: Vec<EpochLog>,
}

impl TrainLog {
    pub fn header(stages: usize) -> String {
        let mut h = String::from("epoch,loss_total,loss_spatial,loss_spectral,loss_reg");
        for k in 1..=stages {
            let _ = write!(h, ",val_psnr_stage_{k}");
        }
        h.push_str(",binfrac_c,binfrac_m,lr,gamma,mu_b");
        h
    }

    pub fn to_csv(&self) -> String {
        let mut out = Self::header(self.stages);
        out.push('\n');
        for r in &self.rows {
            let _ = write!(out, "{},{},{},{},{}", r.epoch, r.loss_total, r.loss_spatial, r.loss_spectral, r.loss_reg);
            for k in 0..self.stages {
                match r.val_psnr.get(k) {
                    Some(v) => {
                        let _ = write!(out, ",{v}");
                    }
                    None => out.push(','),
                }
            }
            let _ = writeln!(out, ",{},{},{},{},{}", r.binfrac_c, r.binfrac_m, r.lr, r.gamma, r.mu_b);
        }
        out
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), self.to_csv().as_bytes())
    }

    pub fn last(&self) -> Option<&EpochLog> {
        self.rows.last()
    }
}

/// Noise stream reserved for validation so every epoch scores the same draws.
pub const VALIDATION_STREAM: u64 = u64::MAX;

/// Mean PSNR of every stage estimate `f̂⁰..f̂ᴷ` over `cubes`.
pub fn stage_psnr(model: &Model, cubes: &[SpectralCube], noise: &NoiseConfig, stream: u64) -> Result<Vec<f64>> {
    let per: Vec<Result<Vec<f64>>> = cubes
        .par_iter()
        .enumerate()
        .map(|(i, f)| {
            let (y_c, y_m) = model.measure(f, noise, stream, i as u64)?;
            model.reconstruct(&y_c, &y_m)?.iter().map(|e| psnr(e, f)).collect()
        })
        .collect();
    let mut mean = vec![0.0; model.stages.len() + 1];
    for p in per {
        for (a, b) in mean.iter_mut().zip(p?) {
            *a += b / cubes.len() as f64;
        }
    }
    Ok(mean)
}

pub struct TrainSettings<'a> {
    pub train: &'a TrainConfig,
    pub schedules: &'a SchedulesConfig,
    pub loss: &'a LossConfig,
    pub noise: &'a NoiseConfig,
}

pub struct TrainOutcome {
    pub model: Model,
    pub log: TrainLog,
}

fn diverged(epoch: usize, e: Error) -> Error {
    match e {
        Error::InvalidValue(reason) => Error::Divergence { epoch, reason },
        other => other,
    }
}

/// Adam on the joint objective, one update per batch. γ and μ_b follow the
/// schedules per 1-based epoch; the learning rate halves on its period.
pub fn train_e2e(mut model: Model, train: &[SpectralCube], validation: &[SpectralCube], s: &TrainSettings<'_>) -> Result<TrainOutcome> {
    s.train.validate()?;
    s.schedules.validate()?;
    s.loss.validate()?;
    s.noise.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyDataset("training set is empty".into()));
    }
    let dims = model.op.cube_dims();
    for c in train.iter().chain(validation) {
        if c.dims() != dims {
            return Err(Error::dim(format!("dataset cube {:?} does not match operator dims {dims:?}", c.dims())));
        }
    }
    s.loss.check_image(dims.0, dims.1)?;

    let t = s.train.trainable();
    let mut params = model.params(t);
    let mut adam = AdamState::new(params.len(), AdamConfig::default());
    let mut rng = ChaCha8Rng::seed_from_u64(s.train.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = TrainLog { stages: model.stages.len(), rows: Vec::with_capacity(s.train.epochs) };

    for epoch in 1..=s.train.epochs {
        let gamma = s.schedules.gamma_at(epoch);
        let mu_b = s.schedules.mu_at(epoch);
        let lr = s.train.lr_at(epoch);
        model.set_gamma(gamma)?;
        order.shuffle(&mut rng);

        let mut spatial = 0.0;
        let mut spectral = 0.0;
        for chunk in order.chunks(s.train.batch) {
            let batch: Vec<(u64, &Cube)> = chunk.iter().map(|&i| (i as u64, train[i].cube())).collect();
            let (step, grad) = objective(&model, &batch, s.loss, s.noise, epoch as u64, mu_b, t).map_err(|e| diverged(epoch, e))?;
            if !step.total().is_finite() {
                return Err(Error::Divergence { epoch, reason: format!("non-finite loss {}", step.total()) });
            }
            let w = chunk.len() as f64 / train.len() as f64;
            spatial += w * step.spatial;
            spectral += w * step.spectral;
            adam_step(&mut adam, &mut params, &grad, lr).map_err(|e| diverged(epoch, e))?;
            model.set_params(t, &params);
        }

        let reg = mu_b * regularizer(&model, t);
        let val_psnr = if validation.is_empty() {
            Vec::new()
        } else {
            stage_psnr(&model, validation, s.noise, VALIDATION_STREAM).map_err(|e| diverged(epoch, e))?[1..].to_vec()
        };
        let row = EpochLog {
            epoch,
            loss_total: spatial + spectral + reg,
            loss_spatial: spatial,
            loss_spectral: spectral,
            loss_reg: reg,
            val_psnr,
            binfrac_c: model.op.cassi().binary_fraction(),
            binfrac_m: model.op.mcfa().binary_fraction(),
            lr,
            gamma,
            mu_b,
        };
        if !row.loss_total.is_finite() {
            return Err(Error::Divergence { epoch, reason: format!("non-finite loss {}", row.loss_total) });
        }
        log::info!("epoch {epoch}: loss {:.6e} binfrac {:.3}/{:.3} gamma {gamma:.3}", row.loss_total, row.binfrac_c, row.binfrac_m);
        log.rows.push(row);
    }
    Ok(TrainOutcome { model, log })
}
