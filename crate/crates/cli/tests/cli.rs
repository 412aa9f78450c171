use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use specfuse_core::admm::{ProximalSpec, StageParams};
use specfuse_core::design::{Checkpoint, Manifest};
use specfuse_core::experiment::ExperimentConfig;
use specfuse_core::io::save_cube;
use specfuse_core::optics::{Activation, ApertureWeights, Arm};
use specfuse_core::phantom::{make_phantom, PhantomKind};
use tempfile::TempDir;

const TOY: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/toy.json");

fn specfuse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_specfuse")).args(args).output().expect("binary runs")
}

fn specfuse_env(args: &[&str], key: &str, value: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_specfuse")).args(args).env(key, value).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn ok(o: &Output) {
    assert_eq!(code(o), 0, "stderr: {}", String::from_utf8_lossy(&o.stderr));
}

fn toy_with(dir: &Path, name: &str, edit: impl FnOnce(&mut Value)) -> PathBuf {
    let mut v: Value = serde_json::from_str(&fs::read_to_string(TOY).unwrap()).unwrap();
    edit(&mut v);
    let p = dir.join(name);
    fs::write(&p, serde_json::to_string_pretty(&v).unwrap()).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let text = fs::read_to_string(path).unwrap();
    assert!(!text.contains('\r'));
    text.lines().skip(1).map(|l| l.split(',').map(String::from).collect()).collect()
}

fn design_toy(dir: &Path, epochs: u64) -> PathBuf {
    let cfg = toy_with(dir, "toy.json", |v| v["train"]["epochs"] = json!(epochs));
    let out = dir.join("ck");
    ok(&specfuse(&["design", "--config", s(&cfg), "--out", s(&out)]));
    out
}

fn toy_cube(dir: &Path, seed: u64) -> PathBuf {
    let p = dir.join(format!("cube_{seed}.scub"));
    save_cube(&make_phantom(PhantomKind::RandomSmooth, 16, 16, 4, seed).unwrap(), &p).unwrap();
    p
}

#[test]
fn design_writes_checkpoint_and_log() {
    let dir = TempDir::new().unwrap();
    let ck = design_toy(dir.path(), 3);
    for f in ["cassi.aptr", "mcfa.aptr", "stages.bin", "manifest.json", "train_log.csv"] {
        assert!(ck.join(f).is_file(), "{f} missing");
    }
    let log = fs::read_to_string(ck.join("train_log.csv")).unwrap();
    assert!(log.starts_with("epoch,loss_total,loss_spatial,loss_spectral,loss_reg,val_psnr_stage_1,val_psnr_stage_2,val_psnr_stage_3,"));
    assert_eq!(log.lines().count(), 4);
}

#[test]
fn manifest_config_round_trips() {
    let dir = TempDir::new().unwrap();
    let ck = design_toy(dir.path(), 1);
    let manifest: Value = serde_json::from_str(&fs::read_to_string(ck.join("manifest.json")).unwrap()).unwrap();
    let stored: ExperimentConfig = serde_json::from_value(manifest["config"].clone()).unwrap();
    assert_eq!(stored, ExperimentConfig::load(dir.path().join("toy.json")).unwrap());
}

#[test]
fn design_is_deterministic() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let (ca, cb) = (design_toy(a.path(), 3), design_toy(b.path(), 3));
    for f in ["train_log.csv", "cassi.aptr", "mcfa.aptr", "stages.bin", "manifest.json", "test_metrics.csv"] {
        assert_eq!(fs::read(ca.join(f)).unwrap(), fs::read(cb.join(f)).unwrap(), "{f} differs");
    }
}

#[test]
fn config_errors_exit_2() {
    let dir = TempDir::new().unwrap();
    let zero = toy_with(dir.path(), "zero.json", |v| v["train"]["epochs"] = json!(0));
    let unknown = toy_with(dir.path(), "unknown.json", |v| v["train"]["epoch_count"] = json!(3));
    let unknown_loss = toy_with(dir.path(), "unknown_loss.json", |v| v["loss"]["mu_x"] = json!(3));
    let no_seed = toy_with(dir.path(), "no_seed.json", |v| {
        v["noise"].as_object_mut().unwrap().remove("seed");
    });
    for cfg in [zero, unknown, unknown_loss, no_seed] {
        let o = specfuse(&["design", "--config", s(&cfg), "--out", s(&dir.path().join("x"))]);
        assert_eq!(code(&o), 2, "{}", cfg.display());
        assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
        assert!(o.stdout.is_empty());
    }
    assert!(!dir.path().join("x").exists());
}

#[test]
fn divergence_exits_3() {
    let dir = TempDir::new().unwrap();
    let cfg = toy_with(dir.path(), "hot.json", |v| {
        v["train"]["lr"] = json!(1e300);
        v["train"]["epochs"] = json!(2);
    });
    let o = specfuse(&["design", "--config", s(&cfg), "--out", s(&dir.path().join("x"))]);
    assert_eq!(code(&o), 3, "stderr: {}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn missing_checkpoint_exits_4() {
    let dir = TempDir::new().unwrap();
    let cube = toy_cube(dir.path(), 1);
    let o = specfuse(&["reconstruct", "--checkpoint", s(&dir.path().join("none")), "--input", s(&cube)]);
    assert_eq!(code(&o), 4);
    let o = specfuse(&["export", "--checkpoint", s(&dir.path().join("none")), "--what", "apertures_pgm"]);
    assert_eq!(code(&o), 4);
}

#[test]
fn reconstruct_reports_every_stage() {
    let dir = TempDir::new().unwrap();
    let ck = design_toy(dir.path(), 2);
    let (c1, c2) = (toy_cube(dir.path(), 101), toy_cube(dir.path(), 102));
    let out = dir.path().join("rec");
    ok(&specfuse(&["reconstruct", "--checkpoint", s(&ck), "--input", s(&c1), "--input", s(&c2), "--out", s(&out), "--all-stages"]));
    let rows = csv_rows(&out.join("metrics.csv"));
    assert_eq!(rows.len(), 2 * 4);
    for id in ["cube_101", "cube_102"] {
        let stages: Vec<&str> = rows.iter().filter(|r| r[0] == id).map(|r| r[1].as_str()).collect();
        assert_eq!(stages, ["0", "1", "2", "3"]);
        for k in 0..4 {
            assert!(out.join(format!("recon_{id}_stage_{k}.scub")).is_file());
        }
    }
    let final_only = dir.path().join("rec_final");
    ok(&specfuse(&["reconstruct", "--checkpoint", s(&ck), "--input", s(&c1), "--out", s(&final_only)]));
    assert!(final_only.join("recon_cube_101.scub").is_file());
    assert_eq!(csv_rows(&final_only.join("metrics.csv")).len(), 4);
}

fn final_psnr(metrics: &Path) -> f64 {
    let rows = csv_rows(metrics);
    let last = rows.iter().map(|r| r[1].parse::<usize>().unwrap()).max().unwrap();
    let sel: Vec<f64> = rows.iter().filter(|r| r[1].parse::<usize>().unwrap() == last).map(|r| r[2].parse().unwrap()).collect();
    sel.iter().sum::<f64>() / sel.len() as f64
}

#[test]
fn noise_lowers_psnr() {
    let dir = TempDir::new().unwrap();
    let ck = design_toy(dir.path(), 40);
    let cubes: Vec<PathBuf> = (0..4).map(|i| toy_cube(dir.path(), 200 + i)).collect();
    let mut args = vec!["reconstruct", "--checkpoint", s(&ck)];
    for c in &cubes {
        args.extend(["--input", s(c)]);
    }
    let clean = dir.path().join("clean");
    let noisy = dir.path().join("noisy");
    ok(&specfuse(&[&args[..], &["--out", s(&clean), "--snr", "none"]].concat()));
    ok(&specfuse(&[&args[..], &["--out", s(&noisy), "--snr", "20"]].concat()));
    let (p_clean, p_noisy) = (final_psnr(&clean.join("metrics.csv")), final_psnr(&noisy.join("metrics.csv")));
    assert!(p_clean >= p_noisy, "noiseless {p_clean} < 20 dB {p_noisy}");
}

#[test]
fn easy_inverse_reaches_40_db() {
    let dir = TempDir::new().unwrap();
    let mut v: Value = serde_json::from_str(&fs::read_to_string(TOY).unwrap()).unwrap();
    v["geometry"] = json!({ "d_s": 1, "d_lambda": 1 });
    v["stages"] = json!(120);
    v["proximal"] = json!({ "kind": "soft_threshold_dct", "tau": 0.001 });
    v["aperture"]["activation"] = json!("identity");
    let cfg: ExperimentConfig = serde_json::from_value(v.clone()).unwrap();
    cfg.validate().unwrap();
    let ones = |arm, bands| ApertureWeights::constant(arm, 16, 16, bands, 1.0, 1.0).unwrap().with_activation(Activation::Identity);
    let mut stage = StageParams::initial(ProximalSpec::SoftThresholdDct { tau: 0.001 }).unwrap();
    stage.raw[0] = 0.2f64.ln();
    let ck = Checkpoint {
        cassi: ones(Arm::Cassi, 1),
        mcfa: ones(Arm::Mcfa, 4),
        stages: vec![stage; 120],
        manifest: Manifest::new(0, 1.0, 0.0, cfg.to_json_value()),
    };
    let ckdir = dir.path().join("easy");
    ck.save(&ckdir).unwrap();
    let cube = dir.path().join("gradient.scub");
    save_cube(&make_phantom(PhantomKind::Gradient, 16, 16, 4, 0).unwrap(), &cube).unwrap();
    let out = dir.path().join("rec");
    ok(&specfuse(&["reconstruct", "--checkpoint", s(&ckdir), "--input", s(&cube), "--out", s(&out)]));
    let p = final_psnr(&out.join("metrics.csv"));
    assert!(p >= 40.0, "final PSNR {p}");
}

#[test]
fn saved_measurements_match_simulated_path() {
    let dir = TempDir::new().unwrap();
    let ck = design_toy(dir.path(), 2);
    let cube = toy_cube(dir.path(), 7);
    let meas = dir.path().join("meas");
    ok(&specfuse(&["export", "--checkpoint", s(&ck), "--what", "measurements", "--input", s(&cube), "--out", s(&meas)]));
    let (yc, ym) = (meas.join("cube_7_cassi.smea"), meas.join("cube_7_mcfa.smea"));
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&specfuse(&["reconstruct", "--checkpoint", s(&ck), "--input", s(&cube), "--out", s(&a)]));
    ok(&specfuse(&["reconstruct", "--checkpoint", s(&ck), "--cassi", s(&yc), "--mcfa", s(&ym), "--input", s(&cube), "--out", s(&b)]));
    let strip = |p: &Path| csv_rows(p).into_iter().map(|r| r[1..].to_vec()).collect::<Vec<_>>();
    assert_eq!(strip(&a.join("metrics.csv")), strip(&b.join("metrics.csv")));
    // the MCFA file in the CASSI slot is a shape/arm mismatch
    let o = specfuse(&["reconstruct", "--checkpoint", s(&ck), "--cassi", s(&ym), "--mcfa", s(&ym), "--out", s(&b)]);
    assert_eq!(code(&o), 2);
}

#[test]
fn reconstruct_rejects_wrong_dims() {
    let dir = TempDir::new().unwrap();
    let ck = design_toy(dir.path(), 1);
    let cube = dir.path().join("big.scub");
    save_cube(&make_phantom(PhantomKind::Gradient, 32, 32, 4, 0).unwrap(), &cube).unwrap();
    let o = specfuse(&["reconstruct", "--checkpoint", s(&ck), "--input", s(&cube), "--out", s(&dir.path().join("r"))]);
    assert_eq!(code(&o), 2);
}

#[test]
fn export_apertures() {
    let dir = TempDir::new().unwrap();
    let ck = design_toy(dir.path(), 40);
    let (a, b, g) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("g"));
    ok(&specfuse(&["export", "--checkpoint", s(&ck), "--what", "apertures_pgm", "--export-binary", "--out", s(&a)]));
    ok(&specfuse(&["export", "--checkpoint", s(&ck), "--what", "apertures_pgm", "--export-binary", "--out", s(&b)]));
    ok(&specfuse(&["export", "--checkpoint", s(&ck), "--what", "apertures_pgm", "--out", s(&g)]));
    let mut names: Vec<String> = fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    assert_eq!(names, ["ca.pgm", "cca_band_0.pgm", "cca_band_1.pgm"]);
    for n in &names {
        let bytes = fs::read(a.join(n)).unwrap();
        assert_eq!(bytes, fs::read(b.join(n)).unwrap());
        let header = if n == "ca.pgm" { "P5\n8 8\n255\n" } else { "P5\n16 16\n255\n" };
        assert!(bytes.starts_with(header.as_bytes()));
        assert!(bytes[header.len()..].iter().all(|&p| p == 0 || p == 255));
        // the toy run binarizes, so gray levels sit within 0.05 of the thresholded ones
        let gray = fs::read(g.join(n)).unwrap();
        assert_eq!(gray.len(), bytes.len());
        assert!(gray[header.len()..].iter().zip(&bytes[header.len()..]).all(|(a, b)| a.abs_diff(*b) <= 13));
    }
}

#[test]
fn export_stage_params_is_stable() {
    let dir = TempDir::new().unwrap();
    let ck = design_toy(dir.path(), 1);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&specfuse(&["export", "--checkpoint", s(&ck), "--what", "stage_params_json", "--out", s(&a)]));
    ok(&specfuse(&["export", "--checkpoint", s(&ck), "--what", "stage_params_json", "--out", s(&b)]));
    let text = fs::read(a.join("stage_params.json")).unwrap();
    assert_eq!(text, fs::read(b.join("stage_params.json")).unwrap());
    let v: Value = serde_json::from_slice(&text).unwrap();
    let stages = v["stages"].as_array().unwrap();
    assert_eq!(stages.len(), 3);
    assert_eq!(stages[0]["proximal"]["kind"], "conv_denoiser");
    assert!(stages.iter().all(|s| s["lambda"].as_f64().unwrap() > 0.0));
}

fn ablation_rows(dir: &Path, cfg: &Path, axis: &str) -> Vec<Vec<String>> {
    let out = dir.join(format!("ab_{axis}"));
    ok(&specfuse(&["ablate", "--config", s(cfg), "--axis", axis, "--seed", "1", "--out", s(&out)]));
    csv_rows(&out.join(format!("ablation_{axis}.csv")))
}

#[test]
fn ablation_row_counts() {
    let dir = TempDir::new().unwrap();
    let cfg = toy_with(dir.path(), "short.json", |v| v["train"]["epochs"] = json!(1));
    let snr = ablation_rows(dir.path(), &cfg, "snr");
    assert_eq!(snr.iter().map(|r| r[1].as_str()).collect::<Vec<_>>(), ["snr_20", "snr_25", "snr_30", "snr_35", "snr_none"]);
    assert_eq!(ablation_rows(dir.path(), &cfg, "optical_layers").len(), 6);
    assert_eq!(ablation_rows(dir.path(), &cfg, "loss").len(), 3);
    assert_eq!(ablation_rows(dir.path(), &cfg, "multi_loss").len(), 2);
    assert_eq!(ablation_rows(dir.path(), &cfg, "sigmoid").len(), 2);
    assert_eq!(ablation_rows(dir.path(), &cfg, "dynamic").len(), 2);
    let eight = toy_with(dir.path(), "eight.json", |v| {
        v["train"]["epochs"] = json!(1);
        v["data"]["phantom"]["bands"] = json!(8);
        v["data"]["phantom"]["count"] = json!(6);
        v["data"]["split"] = json!({ "train": 2, "validation": 1, "seed": 4 });
        v["proximal"]["hidden"] = json!(2);
    });
    let dec = ablation_rows(dir.path(), &eight, "decimation");
    assert_eq!(dec.len(), 9);
    assert_eq!(dec[0][1], "ds2_dl2");
    assert_eq!(dec[8][1], "ds8_dl8");
}

#[test]
fn ablation_argument_errors() {
    let dir = TempDir::new().unwrap();
    let o = specfuse(&["ablate", "--config", TOY, "--axis", "optics"]);
    assert_eq!(code(&o), 2);
    // 4 bands cannot be decimated by 8
    let o = specfuse(&["ablate", "--config", TOY, "--axis", "decimation", "--seed", "1", "--out", s(&dir.path().join("d"))]);
    assert_eq!(code(&o), 2);
    let cfg = toy_with(dir.path(), "noseeds.json", |v| {
        v.as_object_mut().unwrap().remove("ablation");
    });
    let o = specfuse(&["ablate", "--config", s(&cfg), "--axis", "snr"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn thread_cap_env() {
    let dir = TempDir::new().unwrap();
    let cfg = toy_with(dir.path(), "t.json", |v| v["train"]["epochs"] = json!(1));
    let o = specfuse_env(&["design", "--config", s(&cfg), "--out", s(&dir.path().join("a"))], "SPECFUSE_THREADS", "0");
    assert_eq!(code(&o), 2);
    ok(&specfuse_env(&["design", "--config", s(&cfg), "--out", s(&dir.path().join("b"))], "SPECFUSE_THREADS", "1"));
    ok(&specfuse_env(&["design", "--config", s(&cfg), "--out", s(&dir.path().join("c"))], "SPECFUSE_THREADS", "3"));
    assert_eq!(fs::read(dir.path().join("b/train_log.csv")).unwrap(), fs::read(dir.path().join("c/train_log.csv")).unwrap());
}
