use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn spl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spl-depth"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = spl(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn report_rmse(dir: &Path) -> f64 {
    let report = std::fs::read_to_string(dir.join("report.txt")).unwrap();
    let line = report.lines().find(|l| l.starts_with("rmse_m ")).expect("report has an RMSE line");
    line["rmse_m ".len()..].parse().unwrap()
}

#[test]
fn simulate_manifest_echoes_configured_flux() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    ok(&["simulate", "--scene", "toy", "--size", "16", "--sbr", "1", "--signal-ppp", "2", "--output", d]);
    let m = read_json(&dir.path().join("cube.json"));

    // toy scene: column j of n has reflectivity j/n, so the mean is (n+1)/(2n)
    let alpha_bar = 17.0 / 32.0;
    let per_pulse = 0.35 * alpha_bar * 0.0114;
    assert!((m["mean_reflectivity"].as_f64().unwrap() - alpha_bar).abs() < 1e-15);
    assert_eq!(m["params"]["pulses"].as_u64().unwrap(), (2.0 / per_pulse).round() as u64);
    let b = m["params"]["background"].as_f64().unwrap();
    assert!((b - per_pulse).abs() < 1e-15, "B = {b}, expected {per_pulse}");
    assert_eq!(m["seed"].as_u64().unwrap(), 0);
    assert_eq!(m["scene"]["source"], "toy");
}

#[test]
fn missing_output_dir_exits_2_without_files() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope");
    let out = spl(&["simulate", "--size", "8", "--output", missing.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!missing.exists());
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn same_seed_gives_identical_cubes() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        ok(&["simulate", "--size", "12", "--seed", "42", "--sbr", "0.5", "--output", d.path().to_str().unwrap()]);
    }
    for name in ["cube.sptc", "cube.json"] {
        let x = std::fs::read(a.path().join(name)).unwrap();
        let y = std::fs::read(b.path().join(name)).unwrap();
        assert_eq!(x, y, "{name} differs");
    }
}

#[test]
fn oracle_needs_background_free_cube() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    ok(&["simulate", "--size", "8", "--sbr", "1", "--output", d]);
    let cube = dir.path().join("cube.sptc");
    let out = spl(&["filter", "--filter", "oracle", "--cube", cube.to_str().unwrap(), "--output", d]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("censored.sptc").exists());

    let clean = tempfile::tempdir().unwrap();
    let c = clean.path().to_str().unwrap();
    ok(&["simulate", "--size", "8", "--sbr", "inf", "--output", c]);
    let cube = clean.path().join("cube.sptc");
    ok(&["filter", "--filter", "oracle", "--cube", cube.to_str().unwrap(), "--output", c]);
    let m = read_json(&clean.path().join("censored.json"));
    assert_eq!(m["filter"]["kind"], "oracle");
}

#[test]
fn staged_commands_chain() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    ok(&["simulate", "--size", "16", "--signal-ppp", "4", "--output", d]);
    ok(&["filter", "--cube", dir.path().join("cube.sptc").to_str().unwrap(), "--output", d]);
    ok(&["estimate", "--censored", dir.path().join("censored.sptc").to_str().unwrap(), "--output", d]);
    for name in ["depth.pgm", "depth.csv", "depth.f64", "mask.pbm", "depth.json"] {
        assert!(dir.path().join(name).is_file(), "{name} missing");
    }
    assert_eq!(std::fs::metadata(dir.path().join("depth.f64")).unwrap().len(), 16 * 16 * 8);
    let rmse = report_rmse(dir.path());
    assert!(rmse.is_finite() && rmse >= 0.0);
}

#[test]
fn consensus_beats_rom_at_low_sbr() {
    let cube_dir = tempfile::tempdir().unwrap();
    let c = cube_dir.path().to_str().unwrap();
    ok(&["simulate", "--scene", "blocks", "--size", "48", "--sbr", "0.2", "--signal-ppp", "2", "--seed", "5", "--output", c]);
    let cube = cube_dir.path().join("cube.sptc");

    let mut rmse = Vec::new();
    for filter in ["rom", "consensus"] {
        let dir = tempfile::tempdir().unwrap();
        ok(&["pipeline", "--cube", cube.to_str().unwrap(), "--filter", filter, "--output", dir.path().to_str().unwrap()]);
        assert!(dir.path().join("depth.pgm").is_file());
        assert!(dir.path().join("censored.sptc").is_file());
        rmse.push(report_rmse(dir.path()));
    }
    assert!(rmse[1] <= rmse[0], "consensus {} vs rom {}", rmse[1], rmse[0]);
}

#[test]
fn verify_theory_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["verify-theory", "--size", "40", "--output", dir.path().to_str().unwrap()]);
    let csv = std::fs::read_to_string(dir.path().join("phase_transition.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("pi_bin_center,empirical_error_s,theoretical_error_s,pixel_count"));
    let counted: usize = lines.map(|l| l.rsplit(',').next().unwrap().parse::<usize>().unwrap()).sum();
    let m = read_json(&dir.path().join("phase_transition.json"));
    assert_eq!(counted as u64, m["extra"]["analyzed_pixels"].as_u64().unwrap());
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "scene = \"toy\"\nsize = 8\nsbr = 0.5\nseed = 9\n").unwrap();
    ok(&["simulate", "--config", cfg.to_str().unwrap(), "--seed", "11", "--output", dir.path().to_str().unwrap()]);
    let m = read_json(&dir.path().join("cube.json"));
    assert_eq!(m["seed"].as_u64().unwrap(), 11);
    assert_eq!(m["target_sbr"]["Finite"].as_f64().unwrap(), 0.5);

    std::fs::write(&cfg, "sbrr = 1\n").unwrap();
    let out = spl(&["simulate", "--config", cfg.to_str().unwrap(), "--output", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn sweep_writes_table() {
    let dir = tempfile::tempdir().unwrap();
    ok(&[
        "sweep", "--size", "16", "--values", "0.5,1", "--filters", "rom,consensus", "--output",
        dir.path().to_str().unwrap(),
    ]);
    let csv = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 2);
    assert!(dir.path().join("sweep.json").is_file());
}
