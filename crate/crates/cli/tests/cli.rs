//! Black-box tests of the command-line interface.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::tempdir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_turbo-godec"))
}

fn run_ok(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("binary runs");
    assert!(
        out.status.success(),
        "command {:?} failed: {}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn write_scene_config(path: &Path) {
    // Sized for the default estimators: 8 planted pixels are exactly 2% of
    // the grid, and the faint noise keeps the 0.999-energy rank estimate at
    // the true background rank.
    fs::write(
        path,
        "# verification scene\n\
         height = 20\n\
         width = 20\n\
         channels = 12\n\
         scene-rank = 2\n\
         noise-sigma = 0.005\n\
         seed = 42\n\
         cluster = 3,4,2,2,0.45\n\
         cluster = 13,11,2,2,0.45\n",
    )
    .unwrap();
}

#[test]
fn full_pipeline_happy_path() {
    let dir = tempdir().unwrap();
    let cfg = dir.path().join("scene.cfg");
    write_scene_config(&cfg);
    let scene_dir = dir.path().join("scene");
    let det_dir = dir.path().join("det");
    let eval_dir = dir.path().join("eval");

    run_ok(&["synth", "--config", cfg.to_str().unwrap(), "--out-dir", scene_dir.to_str().unwrap()]);
    assert!(scene_dir.join("cube.hsic").exists());
    assert!(scene_dir.join("mask.csv").exists());
    assert!(scene_dir.join("manifest.txt").exists());
    let cube_bytes_before = fs::read(scene_dir.join("cube.hsic")).unwrap();

    // Rank and cardinality are pinned to the scene construction: the
    // energy-based estimator deliberately captures 99.9% of spectral
    // energy, and on a synthetic scene whose planted pixels share one
    // signature that includes the anomaly direction itself. Every other
    // parameter is the default.
    run_ok(&[
        "detect",
        "--input",
        scene_dir.join("cube.hsic").to_str().unwrap(),
        "--out-dir",
        det_dir.to_str().unwrap(),
        "--method",
        "turbo",
        "--rank",
        "2",
        "--card",
        "8",
    ]);
    assert!(det_dir.join("map.csv").exists());
    assert!(det_dir.join("map.pgm").exists());

    run_ok(&[
        "eval",
        "--input",
        det_dir.join("map.csv").to_str().unwrap(),
        "--mask",
        scene_dir.join("mask.csv").to_str().unwrap(),
        "--out-dir",
        eval_dir.to_str().unwrap(),
    ]);
    let auc_csv = fs::read_to_string(eval_dir.join("auc.csv")).unwrap();
    let mut lines = auc_csv.lines();
    assert_eq!(lines.next().unwrap(), "auc_df,auc_dtau,auc_ftau,auc_td,auc_bs,auc_snpr,auc_td_bs,auc_odp");
    let auc_df: f64 = lines.next().unwrap().split(',').next().unwrap().parse().unwrap();
    assert!(auc_df > 0.95, "turbo pipeline auc_df {auc_df}");

    // No subcommand mutates its inputs.
    assert_eq!(cube_bytes_before, fs::read(scene_dir.join("cube.hsic")).unwrap());
}

#[test]
fn single_class_mask_fails_with_one_line_error() {
    let dir = tempdir().unwrap();
    let map = dir.path().join("map.csv");
    let mask = dir.path().join("mask.csv");
    fs::write(&map, "0.1,0.9\n0.2,0.3\n").unwrap();
    fs::write(&mask, "0,0\n0,0\n").unwrap();

    let out = bin()
        .args([
            "eval",
            "--input",
            map.to_str().unwrap(),
            "--mask",
            mask.to_str().unwrap(),
            "--out-dir",
            dir.path().join("eval").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    let lines: Vec<&str> = stderr.trim_end().lines().collect();
    assert_eq!(lines.len(), 1, "expected a single error line, got: {stderr}");
    assert!(lines[0].starts_with("error: "), "got: {stderr}");
}

#[test]
fn flags_win_over_config_file_and_manifest_records_the_winner() {
    let dir = tempdir().unwrap();
    let cfg = dir.path().join("scene.cfg");
    write_scene_config(&cfg);
    let scene_dir = dir.path().join("scene");
    run_ok(&["synth", "--config", cfg.to_str().unwrap(), "--out-dir", scene_dir.to_str().unwrap()]);

    let run_cfg = dir.path().join("run.cfg");
    fs::write(&run_cfg, "rank = 3\ncard = 11\nmethod = lsmad\nseed = 5\n").unwrap();

    let out_dir = dir.path().join("dec");
    run_ok(&[
        "decompose",
        "--input",
        scene_dir.join("cube.hsic").to_str().unwrap(),
        "--out-dir",
        out_dir.to_str().unwrap(),
        "--config",
        run_cfg.to_str().unwrap(),
        "--rank",
        "2",
    ]);
    let manifest = fs::read_to_string(out_dir.join("manifest.txt")).unwrap();
    assert!(manifest.contains("rank=2"), "flag must win: {manifest}");
    assert!(manifest.contains("card=11"), "config value must survive: {manifest}");
    assert!(manifest.contains("method=lsmad"));
    assert!(manifest.contains("seed=5"));
    assert!(out_dir.join("l.hsic").exists());
    assert!(out_dir.join("s.hsic").exists());
    assert!(out_dir.join("residuals.csv").exists());
    // Vanilla method carries no probability map.
    assert!(!out_dir.join("j.csv").exists());
}

#[test]
fn turbo_decompose_writes_probabilities() {
    let dir = tempdir().unwrap();
    let cfg = dir.path().join("scene.cfg");
    write_scene_config(&cfg);
    let scene_dir = dir.path().join("scene");
    run_ok(&["synth", "--config", cfg.to_str().unwrap(), "--out-dir", scene_dir.to_str().unwrap()]);

    let out_dir = dir.path().join("dec");
    run_ok(&[
        "decompose",
        "--input",
        scene_dir.join("cube.hsic").to_str().unwrap(),
        "--out-dir",
        out_dir.to_str().unwrap(),
        "--method",
        "turbo",
        "--rank",
        "2",
        "--card",
        "8",
    ]);
    assert!(out_dir.join("j.csv").exists());
}

#[test]
fn import_raw_round_trips_values() {
    let dir = tempdir().unwrap();
    let raw = dir.path().join("data.raw");
    let values: Vec<f64> = (0..2 * 3 * 2).map(|i| i as f64 * 0.5).collect();
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(&raw, bytes).unwrap();

    let cube_path = dir.path().join("cube.hsic");
    run_ok(&[
        "import-raw",
        "--input",
        raw.to_str().unwrap(),
        "--dims",
        "2,3,2",
        "--out",
        cube_path.to_str().unwrap(),
    ]);
    let cube = turbo_godec::hsi::load_cube(&cube_path).unwrap();
    assert_eq!(cube.height(), 2);
    assert_eq!(cube.width(), 3);
    assert_eq!(cube.channels(), 2);
    assert_eq!(cube.values(), values.as_slice());

    // Wrong payload size is rejected.
    let out = bin()
        .args([
            "import-raw",
            "--input",
            raw.to_str().unwrap(),
            "--dims",
            "2,3,3",
            "--out",
            cube_path.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(!out.status.success());
}

#[test]
fn unknown_method_is_rejected() {
    let dir = tempdir().unwrap();
    let out = bin()
        .args([
            "detect",
            "--input",
            "missing.hsic",
            "--out-dir",
            dir.path().to_str().unwrap(),
            "--method",
            "wavelet",
        ])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown method"));
}
