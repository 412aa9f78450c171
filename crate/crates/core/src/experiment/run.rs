//! Design runs, checkpoint round trips and per-image evaluation.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::design::{train_e2e, Checkpoint, Manifest, Model, TrainLog, TrainSettings};
use crate::error::{Error, Result};
use crate::io::write_file;
use crate::metrics::{fitted_window, psnr, sam, ssim_with, MsSsimConfig};
use crate::optics::NoiseConfig;

use super::config::{Cubes, Dataset, ExperimentConfig};

pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const METRICS_HEADER: &str = "image_id,stage,psnr_db,ssim,sam_rad";

/// Noise stream used for test-set evaluation.
pub const TEST_STREAM: u64 = u64::MAX - 1;

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub image_id: String,
    /// 0 is the initialization, `K` the final stage.
    pub stage: usize,
    pub psnr_db: f64,
    pub ssim: f64,
    pub sam_rad: f64,
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(s, "{},{},{:.6},{:.6},{:.6}", r.image_id, r.stage, r.psnr_db, r.ssim, r.sam_rad);
    }
    s
}

/// PSNR, SSIM and SAM of every requested stage for each cube. SSIM uses an 11-tap
/// window shrunk to fit small images.
pub fn evaluate(model: &Model, cubes: &Cubes, noise: &NoiseConfig, stream: u64, all_stages: bool) -> Result<Vec<MetricsRow>> {
    let per: Vec<Result<Vec<MetricsRow>>> = cubes
        .par_iter()
        .enumerate()
        .map(|(i, (id, f))| {
            let (y_c, y_m) = model.measure(f, noise, stream, i as u64)?;
            let est = model.reconstruct(&y_c, &y_m)?;
            let cfg = MsSsimConfig { window: fitted_window(f.rows(), f.cols(), 11), ..MsSsimConfig::single_scale() };
            let k = est.len() - 1;
            let first = if all_stages { 0 } else { k };
            (first..=k)
                .map(|s| {
                    Ok(MetricsRow {
                        image_id: id.clone(),
                        stage: s,
                        psnr_db: psnr(&est[s], f)?,
                        ssim: ssim_with(&est[s], f, &cfg)?,
                        sam_rad: sam(&est[s], f)?,
                    })
                })
                .collect()
        })
        .collect();
    let mut out = Vec::new();
    for p in per {
        out.extend(p?);
    }
    Ok(out)
}

/// Mean PSNR, SSIM and SAM over rows of one stage.
pub fn summarize(rows: &[MetricsRow], stage: usize) -> Option<(f64, f64, f64)> {
    let sel: Vec<&MetricsRow> = rows.iter().filter(|r| r.stage == stage).collect();
    if sel.is_empty() {
        return None;
    }
    let n = sel.len() as f64;
    Some((
        sel.iter().map(|r| r.psnr_db).sum::<f64>() / n,
        sel.iter().map(|r| r.ssim).sum::<f64>() / n,
        sel.iter().map(|r| r.sam_rad).sum::<f64>() / n,
    ))
}

pub struct DesignOutcome {
    pub dataset: Dataset,
    pub model: Model,
    pub log: TrainLog,
}

/// Trains on the configured dataset.
pub fn run_design(cfg: &ExperimentConfig, base_dir: &Path) -> Result<DesignOutcome> {
    cfg.validate()?;
    let dataset = cfg.dataset(base_dir)?;
    let (model, log) = train_on(cfg, &dataset)?;
    Ok(DesignOutcome { dataset, model, log })
}

pub fn train_on(cfg: &ExperimentConfig, dataset: &Dataset) -> Result<(Model, TrainLog)> {
    cfg.check_trainable()?;
    let dims = dataset.train[0].1.dims();
    let model = cfg.initial_model(dims)?;
    let settings = TrainSettings { train: &cfg.train, schedules: &cfg.schedules, loss: &cfg.loss, noise: &cfg.noise };
    let out = train_e2e(model, &Dataset::cubes(&dataset.train), &Dataset::cubes(&dataset.validation), &settings)?;
    Ok((out.model, out.log))
}

/// Writes the checkpoint files and the training log into `dir`.
pub fn save_design(cfg: &ExperimentConfig, model: &Model, log: &TrainLog, dir: &Path) -> Result<()> {
    let epoch = log.last().map_or(0, |r| r.epoch);
    let mu_b = log.last().map_or(cfg.schedules.mu_at(cfg.train.epochs), |r| r.mu_b);
    let manifest = Manifest::new(epoch, model.op.cassi().gamma(), mu_b, cfg.to_json_value());
    let ck = Checkpoint { cassi: model.op.cassi().clone(), mcfa: model.op.mcfa().clone(), stages: model.stages.clone(), manifest };
    ck.save(dir)?;
    write_file(&dir.join(TRAIN_LOG_FILE), log.to_csv().as_bytes())
}

/// Rebuilds the experiment config and the model stored in a checkpoint.
pub fn load_design(dir: &Path) -> Result<(ExperimentConfig, Model)> {
    let ck = Checkpoint::load(dir)?;
    let cfg: ExperimentConfig =
        serde_json::from_value(ck.manifest.config.clone()).map_err(|e| Error::Config(format!("checkpoint manifest config: {e}")))?;
    cfg.validate()?;
    let (m, n) = (ck.mcfa.dims().0, ck.mcfa.dims().1);
    let l = ck.mcfa.dims().2 * cfg.geometry.d_lambda;
    let act = cfg.aperture.activation;
    let op = cfg.operator((m, n, l), ck.cassi.with_activation(act), ck.mcfa.with_activation(act))?;
    let mut model = Model::new(op, ck.stages)?;
    if ck.manifest.gamma > 0.0 {
        model.set_gamma(ck.manifest.gamma)?;
    }
    Ok((cfg, model))
}
