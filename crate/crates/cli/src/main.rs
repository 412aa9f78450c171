use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use specfuse_core::admm::ProximalSpec;
use specfuse_core::design::Model;
use specfuse_core::experiment::{
    ablation_csv, evaluate, load_design, metrics_csv, run_ablation, run_design, save_design, AblationAxis, Cubes, ExperimentConfig,
    TEST_STREAM,
};
use specfuse_core::io::{load_cube, save_cube, write_file};
use specfuse_core::optics::{Measurement, NoiseConfig, Snr};
use specfuse_core::{Error, Result, SpectralCube};

const THREADS_ENV: &str = "SPECFUSE_THREADS";

#[derive(Parser)]
#[command(name = "specfuse", version, about = "Coded-aperture design and unrolled reconstruction for CASSI + MCFA fusion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train apertures and reconstruction stages; writes a checkpoint and the training log.
    Design(DesignArgs),
    /// Reconstruct cubes from a ground-truth cube or saved measurements.
    Reconstruct(ReconstructArgs),
    /// Run an ablation grid and write a comparison CSV.
    Ablate(AblateArgs),
    /// Export checkpoint artifacts.
    Export(ExportArgs),
}

#[derive(Args)]
struct DesignArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Reseed model initialization and training.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the measurement SNR in dB, or `none`.
    #[arg(long)]
    snr: Option<Snr>,
}

#[derive(Args)]
struct ReconstructArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Ground-truth SCUB cube(s); measurements are simulated with the configured noise.
    #[arg(long)]
    input: Vec<PathBuf>,
    /// Saved CASSI measurement; requires --mcfa.
    #[arg(long, requires = "mcfa")]
    cassi: Option<PathBuf>,
    /// Saved MCFA measurement; requires --cassi.
    #[arg(long, requires = "cassi")]
    mcfa: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    snr: Option<Snr>,
    /// Write every stage estimate instead of the final one.
    #[arg(long)]
    all_stages: bool,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_parser = parse_axis)]
    axis: AblationAxis,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Run a single seed instead of the config's `ablation.seeds`.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    snr: Option<Snr>,
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum Artifact {
    AperturesPgm,
    StageParamsJson,
    Measurements,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, value_enum)]
    what: Artifact,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Threshold apertures to 0/255 instead of writing gray levels.
    #[arg(long)]
    export_binary: bool,
    /// Ground-truth cube for `measurements`.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    snr: Option<Snr>,
}

fn parse_axis(s: &str) -> std::result::Result<AblationAxis, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Dimension(_) | Error::InvalidValue(_) | Error::EmptyDataset(_) => 2,
        Error::Divergence { .. } => 3,
        Error::Io { .. } | Error::Format { .. } => 4,
    }
}

fn init_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| Error::Config(format!("{THREADS_ENV} must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| Error::Config(format!("thread pool: {e}")))
}

fn load_config(path: &Path, seed: Option<u64>, snr: Option<Snr>) -> Result<(ExperimentConfig, PathBuf)> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = seed {
        cfg = cfg.with_seed(s);
    }
    if let Some(snr) = snr {
        cfg.noise.snr_db = snr;
    }
    cfg.validate()?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((cfg, base))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn design(a: &DesignArgs) -> Result<()> {
    let (cfg, base) = load_config(&a.config, a.seed, a.snr)?;
    let out = run_design(&cfg, &base)?;
    save_design(&cfg, &out.model, &out.log, &a.out)?;
    if !out.dataset.test.is_empty() {
        let rows = evaluate(&out.model, &out.dataset.test, &cfg.noise, TEST_STREAM, true)?;
        write_file(&a.out.join("test_metrics.csv"), metrics_csv(&rows).as_bytes())?;
    }
    if let Some(last) = out.log.last() {
        println!(
            "design: {} epochs, final loss {:.6}, binarized {:.3} (CASSI) {:.3} (MCFA), checkpoint in {}",
            last.epoch,
            last.loss_total,
            last.binfrac_c,
            last.binfrac_m,
            a.out.display()
        );
    }
    Ok(())
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "cube".into())
}

fn noise_for(cfg: &ExperimentConfig, snr: Option<Snr>) -> NoiseConfig {
    match snr {
        Some(snr_db) => NoiseConfig { snr_db, ..cfg.noise },
        None => cfg.noise,
    }
}

fn write_estimates(out: &Path, id: &str, est: &[specfuse_core::Cube], all: bool) -> Result<()> {
    let k = est.len() - 1;
    if all {
        for (s, e) in est.iter().enumerate() {
            save_cube(&SpectralCube::clamped(e), out.join(format!("recon_{id}_stage_{s}.scub")))?;
        }
        Ok(())
    } else {
        save_cube(&SpectralCube::clamped(&est[k]), out.join(format!("recon_{id}.scub")))
    }
}

fn reconstruct(a: &ReconstructArgs) -> Result<()> {
    let (cfg, model) = load_design(&a.checkpoint)?;
    create_dir(&a.out)?;
    if let (Some(pc), Some(pm)) = (&a.cassi, &a.mcfa) {
        if a.input.len() > 1 {
            return Err(Error::Config("with --cassi/--mcfa give at most one --input as ground truth".into()));
        }
        let (y_c, y_m) = (Measurement::load(pc)?, Measurement::load(pm)?);
        let est = model.reconstruct(&y_c, &y_m)?;
        let id = stem(pc);
        write_estimates(&a.out, &id, &est, a.all_stages)?;
        if let Some(gt) = a.input.first() {
            let f = load_cube(gt)?;
            let rows = stage_rows(&est, &f, &id)?;
            write_file(&a.out.join("metrics.csv"), metrics_csv(&rows).as_bytes())?;
        }
        println!("reconstruct: {} stages written to {}", est.len() - 1, a.out.display());
        return Ok(());
    }
    if a.input.is_empty() {
        return Err(Error::Config("reconstruct needs --input or --cassi/--mcfa".into()));
    }
    let cubes: Cubes = a.input.iter().map(|p| Ok((stem(p), load_cube(p)?))).collect::<Result<_>>()?;
    let noise = noise_for(&cfg, a.snr);
    let rows = evaluate(&model, &cubes, &noise, TEST_STREAM, true)?;
    for (i, (id, f)) in cubes.iter().enumerate() {
        let (y_c, y_m) = model.measure(f, &noise, TEST_STREAM, i as u64)?;
        write_estimates(&a.out, id, &model.reconstruct(&y_c, &y_m)?, a.all_stages)?;
    }
    write_file(&a.out.join("metrics.csv"), metrics_csv(&rows).as_bytes())?;
    let k = model.stages.len();
    for r in rows.iter().filter(|r| r.stage == k) {
        println!("{}: stage {k} PSNR {:.2} dB SSIM {:.4} SAM {:.4} rad", r.image_id, r.psnr_db, r.ssim, r.sam_rad);
    }
    Ok(())
}

fn stage_rows(est: &[specfuse_core::Cube], f: &SpectralCube, id: &str) -> Result<Vec<specfuse_core::experiment::MetricsRow>> {
    use specfuse_core::metrics::{fitted_window, psnr, sam, ssim_with, MsSsimConfig};
    let cfg = MsSsimConfig { window: fitted_window(f.rows(), f.cols(), 11), ..MsSsimConfig::single_scale() };
    est.iter()
        .enumerate()
        .map(|(s, e)| {
            Ok(specfuse_core::experiment::MetricsRow {
                image_id: id.to_string(),
                stage: s,
                psnr_db: psnr(e, f)?,
                ssim: ssim_with(e, f, &cfg)?,
                sam_rad: sam(e, f)?,
            })
        })
        .collect()
}

fn ablate(a: &AblateArgs) -> Result<()> {
    let (cfg, base) = load_config(&a.config, None, a.snr)?;
    let seeds = match (a.seed, &cfg.ablation) {
        (Some(s), _) => vec![s],
        (None, Some(ab)) => ab.seeds.clone(),
        (None, None) => return Err(Error::Config("ablation needs `ablation.seeds` in the config or --seed".into())),
    };
    let data = cfg.dataset(&base)?;
    let rows = run_ablation(&cfg, a.axis, &seeds, &data)?;
    create_dir(&a.out)?;
    let path = a.out.join(format!("ablation_{}.csv", a.axis));
    write_file(&path, ablation_csv(&rows).as_bytes())?;
    for r in &rows {
        println!("{}: test PSNR {:.2} dB over {} seeds", r.label, r.mean(|c| c.test_psnr), r.scores.len());
    }
    println!("ablation written to {}", path.display());
    Ok(())
}

fn prox_json(p: &ProximalSpec) -> Value {
    match p {
        ProximalSpec::SoftThresholdDct { tau } => json!({ "kind": "soft_threshold_dct", "tau": tau }),
        ProximalSpec::TvChambolle { weight, iterations } => json!({ "kind": "tv_chambolle", "weight": weight, "iterations": iterations }),
        ProximalSpec::ConvDenoiser(net) => {
            json!({ "kind": "conv_denoiser", "bands": net.bands(), "hidden": net.hidden(), "params": net.params() })
        }
    }
}

fn stage_params_json(model: &Model) -> Value {
    let stages: Vec<Value> = model
        .stages
        .iter()
        .enumerate()
        .map(|(k, s)| json!({ "stage": k + 1, "lambda": s.lambda(), "rho": s.rho(), "alpha": s.alpha(), "proximal": prox_json(&s.prox) }))
        .collect();
    json!({ "gamma": model.op.cassi().gamma(), "stages": stages })
}

fn export(a: &ExportArgs) -> Result<()> {
    let (cfg, model) = load_design(&a.checkpoint)?;
    create_dir(&a.out)?;
    let mut written = Vec::new();
    match a.what {
        Artifact::AperturesPgm => {
            let pgm = |w: &specfuse_core::optics::ApertureWeights| if a.export_binary { w.to_pgm_bands() } else { w.to_pgm_gray_bands() };
            let ca = pgm(model.op.cassi()).remove(0);
            written.push(a.out.join("ca.pgm"));
            write_file(&written[0], &ca)?;
            for (k, band) in pgm(model.op.mcfa()).iter().enumerate() {
                let p = a.out.join(format!("cca_band_{k}.pgm"));
                write_file(&p, band)?;
                written.push(p);
            }
        }
        Artifact::StageParamsJson => {
            let p = a.out.join("stage_params.json");
            let mut text = serde_json::to_string_pretty(&stage_params_json(&model)).expect("json serializes");
            text.push('\n');
            write_file(&p, text.as_bytes())?;
            written.push(p);
        }
        Artifact::Measurements => {
            let input = a.input.as_ref().ok_or_else(|| Error::Config("--what measurements needs --input <cube>".into()))?;
            let f = load_cube(input)?;
            let (y_c, y_m) = model.measure(&f, &noise_for(&cfg, a.snr), TEST_STREAM, 0)?;
            let id = stem(input);
            for (arm, y) in [("cassi", y_c), ("mcfa", y_m)] {
                let p = a.out.join(format!("{id}_{arm}.smea"));
                y.save(&p)?;
                written.push(p);
            }
        }
    }
    for p in written {
        println!("{}", p.display());
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    init_threads()?;
    match &cli.command {
        Command::Design(a) => design(a),
        Command::Reconstruct(a) => reconstruct(a),
        Command::Ablate(a) => ablate(a),
        Command::Export(a) => export(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
