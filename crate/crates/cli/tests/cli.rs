use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sdmrac::bnn::{Checkpoint, NetworkVersion};
use sdmrac::harness::{ComparisonReport, DiagnosticsReport, Experiment, ExperimentConfig};
use tempfile::TempDir;

fn sdmrac(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sdmrac"))
        .args(args)
        .env_remove("SDMRAC_OUTPUT_DIR")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_config(dir: &TempDir, name: &str, toml: &str) -> PathBuf {
    let p = dir.path().join(name);
    fs::write(&p, toml).unwrap();
    p
}

fn sorted_files(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    v.sort();
    v
}

#[test]
fn baseline_without_uncertainty_tracks_the_reference() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(&tmp, "c.toml", "mode = \"baseline_only\"\nhorizon = 8.0\n[plant]\nuncertainty = \"none\"\n");
    let out = tmp.path().join("out");
    let o = sdmrac(&["simulate", "--config", path(&cfg), "--output-dir", path(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report = DiagnosticsReport::read_json(fs::File::open(out.join("diagnostics.json")).unwrap()).unwrap();
    assert!(report.rms_tracking_error_after_settle < 1e-3);
    for f in ["trajectory.csv", "weights.csv", "config.toml", "states.svg", "uncertainty.svg", "weights.svg"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
}

#[test]
fn same_seed_gives_byte_identical_outputs() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for d in [&a, &b] {
        let o = sdmrac(&["simulate", "--horizon", "3", "--seed", "7", "--output-dir", path(d)]);
        assert_eq!(code(&o), 0);
    }
    let (fa, fb) = (sorted_files(&a), sorted_files(&b));
    assert_eq!(fa.len(), fb.len());
    for (x, y) in fa.iter().zip(&fb) {
        assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap(), "{} differs", x.display());
    }
}

#[test]
fn usage_errors_exit_with_one() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("o");
    assert_eq!(code(&sdmrac(&["simulate", "--horizon", "0.0", "--output-dir", path(&out)])), 1);
    assert_eq!(code(&sdmrac(&["simulate", "--no-such-flag"])), 1);
    assert_eq!(code(&sdmrac(&["simulate", "--mode", "fast", "--output-dir", path(&out)])), 1);
    assert_eq!(code(&sdmrac(&["frobnicate"])), 1);
    let missing = tmp.path().join("missing.toml");
    assert_eq!(code(&sdmrac(&["simulate", "--config", path(&missing), "--output-dir", path(&out)])), 1);
    let bad = write_config(&tmp, "bad.toml", "horizon = 1.0\nunknown_key = 3\n");
    assert_eq!(code(&sdmrac(&["simulate", "--config", path(&bad), "--output-dir", path(&out)])), 1);
    assert_eq!(code(&sdmrac(&["--help"])), 0);
}

#[test]
fn existing_output_directory_needs_force() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("o");
    let args = ["simulate", "--mode", "dmrac", "--horizon", "1", "--output-dir", path(&out)];
    assert_eq!(code(&sdmrac(&args)), 0);
    assert_eq!(code(&sdmrac(&args)), 1);
    let mut forced = args.to_vec();
    forced.push("--force");
    assert_eq!(code(&sdmrac(&forced)), 0);

    let cmp = ["compare", "--horizon", "1", "--output-dir", path(&out)];
    assert_eq!(code(&sdmrac(&cmp)), 1);
}

#[test]
fn output_directory_defaults_from_the_environment() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("from-env");
    let o = Command::new(env!("CARGO_BIN_EXE_sdmrac"))
        .args(["simulate", "--mode", "dmrac", "--horizon", "1"])
        .env("SDMRAC_OUTPUT_DIR", &out)
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert!(out.join("trajectory.csv").exists());
}

#[test]
fn divergence_exits_with_two_and_keeps_partial_logs() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(&tmp, "deg.toml", "mode = \"baseline_only\"\n[plant]\nunits = \"degrees\"\n");
    let out = tmp.path().join("o");
    let o = sdmrac(&["simulate", "--config", path(&cfg), "--output-dir", path(&out)]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("failure.txt").exists());
    assert!(out.join("states.svg").exists());
    let rows = fs::read_to_string(out.join("trajectory.csv")).unwrap().lines().count();
    assert!(rows > 1000 && rows < 40_000);
}

#[test]
fn comparing_a_config_with_itself_gives_zero_deltas() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(&tmp, "c.toml", "mode = \"dmrac\"\nhorizon = 3.0\n");
    let out = tmp.path().join("o");
    let o = sdmrac(&["compare", "--config", path(&cfg), "--config-b", path(&cfg), "--output-dir", path(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r = ComparisonReport::read_json(fs::File::open(out.join("comparison.json")).unwrap()).unwrap();
    assert_eq!(r.delta_rms_tracking_error, 0.0);
    assert_eq!(r.delta_weight_total_variation, 0.0);
    assert!(r.delta_lambda_min.iter().all(|w| w.lambda_min == 0.0));
}

#[test]
fn default_comparison_reports_finite_excitation_for_both_modes() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("o");
    let o = sdmrac(&["compare", "--horizon", "6", "--output-dir", path(&out)]);
    assert_eq!(code(&o), 0);
    let r = ComparisonReport::read_json(fs::File::open(out.join("comparison.json")).unwrap()).unwrap();
    assert_eq!(r.a.mode.to_string(), "sdmrac");
    assert_eq!(r.b.mode.to_string(), "dmrac");
    for side in [&r.a, &r.b] {
        assert!(!side.pe.is_empty());
        assert!(side.pe.iter().all(|w| w.lambda_min.is_finite()));
    }
    for f in ["compare_states.svg", "compare_uncertainty.svg", "compare_weights.svg", "a/trajectory.csv", "b/weights.svg"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
}

#[test]
fn comparing_different_plants_is_a_usage_error() {
    let tmp = TempDir::new().unwrap();
    let a = write_config(&tmp, "a.toml", "horizon = 1.0\n");
    let b = write_config(&tmp, "b.toml", "horizon = 1.0\n[plant]\nuncertainty = \"none\"\n");
    let out = tmp.path().join("o");
    assert_eq!(code(&sdmrac(&["compare", "--config", path(&a), "--config-b", path(&b), "--output-dir", path(&out)])), 1);
}

fn linear_buffer(tmp: &TempDir) -> PathBuf {
    let mut csv = String::from("x1,x2,y1,sigma,t\n");
    for i in 0..64 {
        let x1 = (i as f64 * 0.37).sin() * 0.5;
        let x2 = (i as f64 * 0.91).cos() * 0.5;
        csv.push_str(&format!("{x1},{x2},{},0,{}\n", 0.5 * x1 - 0.3 * x2, i as f64 * 0.01));
    }
    let p = tmp.path().join("buffer.csv");
    fs::write(&p, csv).unwrap();
    p
}

fn loss_curve(dir: &Path) -> Vec<f64> {
    fs::read_to_string(dir.join("loss_curve.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect()
}

#[test]
fn offline_training_reduces_the_loss_deterministically() {
    let tmp = TempDir::new().unwrap();
    let buf = linear_buffer(&tmp);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for d in [&a, &b] {
        let o = sdmrac(&["train-offline", "--buffer", path(&buf), "--epochs", "30", "--output-dir", path(d)]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(fs::read(a.join("checkpoint.json")).unwrap(), fs::read(b.join("checkpoint.json")).unwrap());
    let losses = loss_curve(&a);
    assert_eq!(losses.len(), 31);
    assert!(losses.last().unwrap() < &losses[0], "{losses:?}");
}

#[test]
fn zero_epochs_write_the_initial_network() {
    let tmp = TempDir::new().unwrap();
    let buf = linear_buffer(&tmp);
    let out = tmp.path().join("o");
    let o = sdmrac(&["train-offline", "--buffer", path(&buf), "--epochs", "0", "--seed", "3", "--output-dir", path(&out)]);
    assert_eq!(code(&o), 0);
    let written = Checkpoint::read_json(fs::File::open(out.join("checkpoint.json")).unwrap()).unwrap();
    let cfg = ExperimentConfig {
        seed: 3,
        ..ExperimentConfig::default()
    };
    let init = Experiment::<f64>::from_config(&cfg).unwrap().network;
    assert_eq!(written, Checkpoint::from_version(&NetworkVersion::initial(init)));
    assert_eq!(loss_curve(&out).len(), 1);
}

#[test]
fn empty_or_missing_buffers_are_rejected() {
    let tmp = TempDir::new().unwrap();
    let empty = tmp.path().join("empty.csv");
    fs::write(&empty, "x1,x2,y1,sigma,t\n").unwrap();
    let out = tmp.path().join("o");
    assert_eq!(code(&sdmrac(&["train-offline", "--buffer", path(&empty), "--output-dir", path(&out)])), 1);
    let missing = tmp.path().join("nope.csv");
    assert_eq!(code(&sdmrac(&["train-offline", "--buffer", path(&missing), "--output-dir", path(&out)])), 1);
    assert!(!out.exists());
}

#[test]
fn plots_are_regenerated_bit_identically_from_logs() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("o");
    assert_eq!(code(&sdmrac(&["compare", "--horizon", "2", "--output-dir", path(&out)])), 0);
    let svgs = [
        "compare_states.svg",
        "compare_uncertainty.svg",
        "compare_weights.svg",
        "a/states.svg",
        "a/uncertainty.svg",
        "b/weights.svg",
    ];
    let before: Vec<Vec<u8>> = svgs.iter().map(|f| fs::read(out.join(f)).unwrap()).collect();
    for f in svgs {
        fs::remove_file(out.join(f)).unwrap();
    }
    assert_eq!(code(&sdmrac(&["plot", "--input-dir", path(&out)])), 0);
    for (f, b) in svgs.iter().zip(before) {
        assert_eq!(fs::read(out.join(f)).unwrap(), b, "{f} changed");
    }
}

#[test]
fn pe_report_recomputes_windows_from_features() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("o");
    assert_eq!(code(&sdmrac(&["simulate", "--horizon", "4", "--output-dir", path(&out)])), 0);
    let csv = tmp.path().join("pe.csv");
    let o = sdmrac(&["pe-report", "--input-dir", path(&out), "--window", "1", "--stride", "1", "--output", path(&csv)]);
    assert_eq!(code(&o), 0);
    let text = fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("window_start,window_end,lambda_min"));
    assert_eq!(lines.count(), 3);
    let too_long = sdmrac(&["pe-report", "--input-dir", path(&out), "--window", "10", "--output", path(&csv)]);
    assert_eq!(code(&too_long), 1);
}
