//! Ablation grids: one row per cell, mean and sample std over seeds.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::Model;
use crate::error::{Error, Result};
use crate::metrics::LossMode;
use crate::optics::{Activation, NoiseConfig, Snr};

use super::config::{Dataset, ExperimentConfig};
use super::run::{evaluate, summarize, train_on, TEST_STREAM};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationAxis {
    OpticalLayers,
    Sigmoid,
    Dynamic,
    Loss,
    MultiLoss,
    Decimation,
    Snr,
}

impl AblationAxis {
    pub const ALL: [AblationAxis; 7] =
        [Self::OpticalLayers, Self::Sigmoid, Self::Dynamic, Self::Loss, Self::MultiLoss, Self::Decimation, Self::Snr];

    pub fn name(self) -> &'static str {
        match self {
            Self::OpticalLayers => "optical_layers",
            Self::Sigmoid => "sigmoid",
            Self::Dynamic => "dynamic",
            Self::Loss => "loss",
            Self::MultiLoss => "multi_loss",
            Self::Decimation => "decimation",
            Self::Snr => "snr",
        }
    }
}

impl fmt::Display for AblationAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AblationAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|a| a.name() == s).ok_or_else(|| {
            let names: Vec<&str> = Self::ALL.iter().map(|a| a.name()).collect();
            Error::Config(format!("unknown ablation axis `{s}`; expected one of {}", names.join(", ")))
        })
    }
}

pub const SNR_SWEEP: [Snr; 5] = [Snr::Db(20.0), Snr::Db(25.0), Snr::Db(30.0), Snr::Db(35.0), Snr::None];
pub const DECIMATION_SWEEP: [usize; 3] = [2, 4, 8];

/// A trained configuration, optionally scored under a different test noise.
#[derive(Clone, Debug)]
pub struct Cell {
    pub label: String,
    pub config: ExperimentConfig,
    pub test_snr: Option<Snr>,
}

fn cell(label: impl Into<String>, config: ExperimentConfig) -> Cell {
    Cell { label: label.into(), config, test_snr: None }
}

/// Cells of one axis, built from `base`.
pub fn cells(base: &ExperimentConfig, axis: AblationAxis) -> Vec<Cell> {
    let with = |f: &dyn Fn(&mut ExperimentConfig)| {
        let mut c = base.clone();
        f(&mut c);
        c
    };
    let arms = |cassi: bool, mcfa: bool, act: Activation, dynamic: bool| {
        with(&|c: &mut ExperimentConfig| {
            c.train.train_cassi = cassi;
            c.train.train_mcfa = mcfa;
            c.aperture.activation = act;
            c.schedules.dynamic = dynamic;
        })
    };
    use Activation::{Identity, Sigmoid};
    match axis {
        AblationAxis::OpticalLayers => vec![
            cell("random", arms(false, false, Sigmoid, false)),
            cell("cassi_only", arms(true, false, Sigmoid, false)),
            cell("mcfa_only", arms(false, true, Sigmoid, false)),
            cell("both_no_sigmoid", arms(true, true, Identity, false)),
            cell("both_fixed", arms(true, true, Sigmoid, false)),
            cell("both_dynamic", arms(true, true, Sigmoid, true)),
        ],
        AblationAxis::Sigmoid => vec![
            cell("sigmoid", with(&|c| c.aperture.activation = Sigmoid)),
            cell("identity", with(&|c| c.aperture.activation = Identity)),
        ],
        AblationAxis::Dynamic => {
            vec![cell("fixed", with(&|c| c.schedules.dynamic = false)), cell("dynamic", with(&|c| c.schedules.dynamic = true))]
        }
        AblationAxis::Loss => [LossMode::Proposed, LossMode::SpatialOnly, LossMode::Mse]
            .into_iter()
            .map(|m| cell(m.to_string(), with(&|c| c.loss.mode = m)))
            .collect(),
        AblationAxis::MultiLoss => {
            vec![cell("multi", with(&|c| c.loss.multi_loss = true)), cell("single", with(&|c| c.loss.multi_loss = false))]
        }
        AblationAxis::Decimation => DECIMATION_SWEEP
            .iter()
            .flat_map(|&ds| DECIMATION_SWEEP.iter().map(move |&dl| (ds, dl)))
            .map(|(ds, dl)| {
                cell(
                    format!("ds{ds}_dl{dl}"),
                    with(&|c| {
                        c.geometry.d_s = ds;
                        c.geometry.d_lambda = dl;
                    }),
                )
            })
            .collect(),
        AblationAxis::Snr => SNR_SWEEP
            .iter()
            .map(|&snr| Cell { label: format!("snr_{snr}"), config: base.clone(), test_snr: Some(snr) })
            .collect(),
    }
}

/// Scores of one cell under one seed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CellScore {
    pub test_psnr: f64,
    pub test_ssim: f64,
    pub test_sam: f64,
    pub test_psnr_stage1: f64,
    pub val_psnr_stage1: f64,
    pub val_psnr_final: f64,
    pub binfrac: f64,
}

#[derive(Clone, Debug)]
pub struct AblationRow {
    pub axis: AblationAxis,
    pub label: String,
    pub scores: Vec<CellScore>,
}

/// Sample mean and standard deviation (zero for a single value).
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl AblationRow {
    pub fn mean(&self, pick: impl Fn(&CellScore) -> f64) -> f64 {
        mean_std(&self.scores.iter().map(pick).collect::<Vec<_>>()).0
    }
}

pub const ABLATION_HEADER: &str = "axis,cell,seeds,test_psnr_mean,test_psnr_std,test_ssim_mean,test_ssim_std,test_sam_mean,test_sam_std,\
test_psnr_stage1_mean,test_psnr_stage1_std,val_psnr_stage1_mean,val_psnr_stage1_std,val_psnr_final_mean,val_psnr_final_std,binfrac_mean";

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from(ABLATION_HEADER);
    s.push('\n');
    for r in rows {
        let _ = write!(s, "{},{},{}", r.axis, r.label, r.scores.len());
        let cols: [fn(&CellScore) -> f64; 6] = [
            |c| c.test_psnr,
            |c| c.test_ssim,
            |c| c.test_sam,
            |c| c.test_psnr_stage1,
            |c| c.val_psnr_stage1,
            |c| c.val_psnr_final,
        ];
        for pick in cols {
            let (m, sd) = mean_std(&r.scores.iter().map(pick).collect::<Vec<_>>());
            let _ = write!(s, ",{m:.6},{sd:.6}");
        }
        let _ = writeln!(s, ",{:.6}", r.mean(|c| c.binfrac));
    }
    s
}

fn score(model: &Model, cfg: &ExperimentConfig, data: &Dataset, val: (f64, f64), test_snr: Option<Snr>) -> Result<CellScore> {
    let noise = match test_snr {
        Some(snr) => NoiseConfig { snr_db: snr, ..cfg.noise },
        None => cfg.noise,
    };
    let rows = evaluate(model, &data.test, &noise, TEST_STREAM, true)?;
    let k = model.stages.len();
    let (psnr, ssim, sam) = summarize(&rows, k).expect("test split is not empty");
    let (psnr1, _, _) = summarize(&rows, 1).expect("test split is not empty");
    let binfrac = 0.5 * (model.op.cassi().binary_fraction() + model.op.mcfa().binary_fraction());
    Ok(CellScore {
        test_psnr: psnr,
        test_ssim: ssim,
        test_sam: sam,
        test_psnr_stage1: psnr1,
        val_psnr_stage1: val.0,
        val_psnr_final: val.1,
        binfrac,
    })
}

/// Trains every (cell, seed) pair in parallel on `data` and scores it on the
/// test split. Cells sharing a training config (the SNR sweep) train once per seed.
pub fn run_ablation(base: &ExperimentConfig, axis: AblationAxis, seeds: &[u64], data: &Dataset) -> Result<Vec<AblationRow>> {
    if seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one seed".into()));
    }
    if data.test.is_empty() {
        return Err(Error::EmptyDataset("ablation needs a non-empty test split".into()));
    }
    let dims = data.train[0].1.dims();
    let cells = cells(base, axis);
    for c in &cells {
        c.config.validate()?;
        c.config.check_trainable()?;
        c.config.check_dims(dims.0, dims.1, dims.2).map_err(|e| Error::Config(format!("cell {}: {e}", c.label)))?;
    }

    let mut configs: Vec<ExperimentConfig> = Vec::new();
    let cell_config: Vec<usize> = cells
        .iter()
        .map(|c| match configs.iter().position(|k| *k == c.config) {
            Some(i) => i,
            None => {
                configs.push(c.config.clone());
                configs.len() - 1
            }
        })
        .collect();
    let jobs: Vec<(usize, u64)> = (0..configs.len()).flat_map(|i| seeds.iter().map(move |&s| (i, s))).collect();
    let trained: Vec<Result<(Model, (f64, f64))>> = jobs
        .par_iter()
        .map(|&(i, seed)| {
            let cfg = configs[i].with_seed(seed);
            log::info!("ablation {axis}: config {i} seed {seed}");
            let (model, log) = train_on(&cfg, data)?;
            let val = log.last().and_then(|r| Some((*r.val_psnr.first()?, *r.val_psnr.last()?))).unwrap_or((f64::NAN, f64::NAN));
            Ok((model, val))
        })
        .collect();
    let trained: Vec<(Model, (f64, f64))> = trained.into_iter().collect::<Result<_>>()?;

    let mut rows = Vec::with_capacity(cells.len());
    for (c, &ci) in cells.iter().zip(&cell_config) {
        let scores = seeds
            .iter()
            .enumerate()
            .map(|(si, &seed)| {
                let (model, val) = &trained[ci * seeds.len() + si];
                score(model, &c.config.with_seed(seed), data, *val, c.test_snr)
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(AblationRow { axis, label: c.label.clone(), scores });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::config::tests::TOY;

    #[test]
    fn row_counts() {
        let base = ExperimentConfig::from_json(TOY).unwrap();
        let n: Vec<usize> = AblationAxis::ALL.iter().map(|&a| cells(&base, a).len()).collect();
        assert_eq!(n, vec![6, 2, 2, 3, 2, 9, 5]);
    }

    #[test]
    fn axis_names_parse() {
        for a in AblationAxis::ALL {
            assert_eq!(a.name().parse::<AblationAxis>().unwrap(), a);
        }
        assert!("optics".parse::<AblationAxis>().is_err());
    }

    #[test]
    fn random_row_freezes_both_arms() {
        let base = ExperimentConfig::from_json(TOY).unwrap();
        let c = &cells(&base, AblationAxis::OpticalLayers)[0];
        assert!(!c.config.train.train_cassi && !c.config.train.train_mcfa);
    }

    #[test]
    fn mean_std_sample() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-15);
        assert_eq!(mean_std(&[4.0]), (4.0, 0.0));
    }

    #[test]
    fn decimation_on_four_bands_is_rejected_before_training() {
        let base = ExperimentConfig::from_json(TOY).unwrap();
        let data = base.dataset(std::path::Path::new(".")).unwrap();
        assert!(matches!(run_ablation(&base, AblationAxis::Decimation, &[1], &data), Err(Error::Config(_) | Error::Dimension(_))));
    }
}
