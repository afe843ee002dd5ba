use std::collections::HashMap;
use std::fs;
use std::path::Path;

use upconv::io::{read_grid_header, Manifest};
use upconv_cli::cli_dispatch;

fn run(args: &[&str]) -> i32 {
    let mut argv = vec!["upconv"];
    argv.extend_from_slice(args);
    cli_dispatch(argv)
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

const SMALL: &str = "[grid]\nn = [16, 16, 32]\n\n[run]\nsteps_per_crystal = 100\n\n[analysis]\nmask_radius = 2.0\n";

#[test]
fn phasematch_defaults_reports_bandwidths_thresholds_and_critical_angle() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("pm");
    assert_eq!(run(&["phasematch", "--config", "defaults", "--out", out.to_str().unwrap()]), 0);
    let rows = csv_rows(&out.join("phasematch.csv"));
    assert_eq!(rows[0], ["quantity", "value", "unit", "provenance"]);
    let v: HashMap<String, f64> = rows[1..].iter().map(|r| (r[0].clone(), r[1].parse().unwrap())).collect();

    // independent numpy evaluation of the same Sellmeier set, l_c = l_c' = 4 mm
    let q_d = (9_854_686.492_394_129f64 / 4e-3).sqrt();
    let omega_d = (1.0f64 / (4.292_920_134_765_643e-26 * 4e-3)).sqrt();
    let rho = 0.055_975_985_068_788_09;
    let gvm = 8.775_383_040_458_824e-11;
    assert!(rel(v["q_d"], q_d) < 1e-8);
    assert!(rel(v["omega_d"], omega_d) < 1e-5);
    assert!(rel(v["q_sw"], 1.0 / (rho * 4e-3)) < 1e-6);
    assert!(rel(v["omega_gvm"], 1.0 / (gvm * 4e-3)) < 1e-5);
    assert!(rel(v["l_spatial_walkoff"], 1.0 / (rho * q_d)) < 1e-6);
    assert!(rel(v["l_group_velocity"], 1.0 / (gvm * omega_d)) < 1e-5);
    assert!((v["critical_angle"] - 0.2549).abs() < 1e-3, "{}", v["critical_angle"]);

    let m = Manifest::read(&out.join("manifest.json")).unwrap();
    let names: Vec<_> = m.outputs.iter().map(|o| o.path.as_str()).collect();
    assert_eq!(names, ["phasematch.csv", "sigma.csv", "lambda_inc.csv"]);
}

#[test]
fn analytic_sweep_has_nine_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sw");
    assert_eq!(
        run(&["sweep", "--angles=-2:0.5:2", "--engine=analytic", "--out", out.to_str().unwrap()]),
        0
    );
    let rows = csv_rows(&out.join("sweep_analytic.csv"));
    assert_eq!(rows.len(), 1 + 9);
    assert_eq!(rows[0].last().unwrap(), "provenance");
    assert!(rows[1..].iter().all(|r| r.last().unwrap() == "analytic"));
    let lam: Vec<f64> = rows[1..].iter().map(|r| r[1].parse().unwrap()).collect();
    assert!(lam.windows(2).all(|w| w[1] < w[0]), "{lam:?}");
    assert_eq!(rows[5][1], "5.27500000e-7");
}

#[test]
fn unknown_subcommand_fails() {
    assert_ne!(run(&["bogus"]), 0);
    assert_ne!(run(&[]), 0);
    assert_eq!(run(&["--help"]), 0);
}

#[test]
fn bad_configs_fail_with_nonzero_status() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[pump]\nwaist = \"500\"\n").unwrap();
    let out = dir.path().join("o");
    assert_eq!(run(&["phasematch", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]), 1);
    assert_eq!(run(&["sweep", "--engine", "magic", "--out", out.to_str().unwrap()]), 1);
    assert_eq!(run(&["sweep", "--angles", "1:0:2", "--out", out.to_str().unwrap()]), 1);
}

#[test]
fn flags_are_part_of_the_recorded_config() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let c = dir.path().join("c");
    assert_eq!(run(&["phasematch", "--out", a.to_str().unwrap()]), 0);
    assert_eq!(run(&["phasematch", "--out", b.to_str().unwrap()]), 0);
    assert_eq!(run(&["phasematch", "--seed", "9", "--out", c.to_str().unwrap()]), 0);
    let (ma, mb, mc) = (
        Manifest::read(&a.join("manifest.json")).unwrap(),
        Manifest::read(&b.join("manifest.json")).unwrap(),
        Manifest::read(&c.join("manifest.json")).unwrap(),
    );
    assert_eq!(ma.config_hash, mb.config_hash);
    assert_eq!(ma.outputs, mb.outputs);
    assert_ne!(ma.config_hash, mc.config_hash);
    assert_eq!(mc.seed, 9);
    assert!(mc.config.contains("seed = 9"));
}

#[test]
fn simulate_then_analyze() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    fs::write(&cfg, SMALL).unwrap();
    let sim = dir.path().join("sim");
    let cfg_s = cfg.to_str().unwrap();
    assert_eq!(run(&["simulate", "--config", cfg_s, "--threads", "2", "--out", sim.to_str().unwrap()]), 0);
    let m = Manifest::read(&sim.join("manifest.json")).unwrap();
    let h = read_grid_header(&sim.join("sfg_mean.grid")).unwrap();
    assert_eq!(h.config_hash_hex(), m.config_hash);
    assert_eq!(h.seed, 1);
    assert_eq!(h.shape(), vec![16, 16, 32]);

    // rerunning from the manifest's own config reproduces the file exactly
    let echo = dir.path().join("echo.toml");
    fs::write(&echo, &m.config).unwrap();
    let again = dir.path().join("again");
    assert_eq!(run(&["simulate", "--config", echo.to_str().unwrap(), "--out", again.to_str().unwrap()]), 0);
    assert_eq!(Manifest::read(&again.join("manifest.json")).unwrap().outputs, m.outputs);

    let an = dir.path().join("an");
    let input = sim.join("sfg_mean.grid");
    assert_eq!(
        run(&["analyze", "--config", cfg_s, "--input", input.to_str().unwrap(), "--plane", "yw", "--out", an.to_str().unwrap()]),
        0
    );
    let summary = csv_rows(&an.join("summary.csv"));
    assert_eq!(summary[1][0], "n_coh");
    assert!(an.join("display_yw.csv").exists());
    assert!(an.join("incoherent_yw.csv").exists());
    let display = csv_rows(&an.join("display_yw_experimental.csv"));
    assert_eq!(display[0][..2], ["alpha_deg", "lambda_m"]);
    assert_eq!(display.len(), 1 + 16 * 32);
}

#[test]
fn pwpa_spectrum_writes_both_formats() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("pw");
    assert_eq!(
        run(&[
            "pwpa-spectrum",
            "--n-q",
            "16",
            "--n-omega",
            "16",
            "--sfg-length",
            "1 mm",
            "--detuning",
            "-0.1 deg",
            "--out",
            out.to_str().unwrap()
        ]),
        0
    );
    let h = read_grid_header(&out.join("incoherent_xw.grid")).unwrap();
    assert_eq!(h.shape(), vec![16, 16]);
    assert_eq!(csv_rows(&out.join("incoherent_xw.csv")).len(), 1 + 256);
    let m = Manifest::read(&out.join("manifest.json")).unwrap();
    assert!(m.config.contains("length = \"0.001 m\""));
}
