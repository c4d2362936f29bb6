//! End-to-end checks of the command-line surface: subcommands, file formats,
//! determinism, and resumable experiment output.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lshawkes"))
}

fn tmp(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("lshawkes_cli_{}_{name}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn run_ok(cmd: &mut Command) -> String {
    let out = cmd.output().expect("binary runs");
    assert!(
        out.status.success(),
        "command failed:\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn simulate_into(dir: &Path, seed: u64) {
    run_ok(
        bin()
            .args(["simulate", "--horizon", "300", "--out"])
            .arg(dir)
            .args(["--seed", &seed.to_string(), "--threads", "2"]),
    );
}

#[test]
fn simulate_is_byte_deterministic() {
    let dir_a = tmp("sim_a");
    let dir_b = tmp("sim_b");
    simulate_into(&dir_a, 5);
    simulate_into(&dir_b, 5);
    let a = fs::read(dir_a.join("events.csv")).unwrap();
    let b = fs::read(dir_b.join("events.csv")).unwrap();
    assert_eq!(a, b);
    assert!(dir_a.join("events.meta.toml").exists());
    assert!(dir_a.join("manifest.json").exists());
    let _ = fs::remove_dir_all(dir_a);
    let _ = fs::remove_dir_all(dir_b);
}

#[test]
fn fit_and_test_produce_reports() {
    let dir = tmp("fit");
    simulate_into(&dir, 9);
    let events = dir.join("events.csv");
    let out = run_ok(
        bin()
            .args(["fit", "--events"])
            .arg(&events)
            .args(["--degree", "2", "--multistart", "2", "--out"])
            .arg(dir.join("fit")),
    );
    assert!(out.contains("converged = true"), "fit output: {out}");
    let fit_toml = fs::read_to_string(dir.join("fit/fit.toml")).unwrap();
    for key in ["loglik", "converged", "gradient_norm", "eta", "varpi", "se", "active_bounds"] {
        assert!(fit_toml.contains(key), "missing {key} in fit.toml");
    }
    let out = run_ok(
        bin()
            .args(["test", "--events"])
            .arg(&events)
            .args(["--degree", "2", "--multistart", "2", "--out"])
            .arg(dir.join("test")),
    );
    assert!(out.contains("lambda"), "test output: {out}");
    let report = fs::read_to_string(dir.join("test/test_report.toml")).unwrap();
    for key in ["lambda", "degree", "k_hat", "p_raw", "p_corrected"] {
        assert!(report.contains(key), "missing {key} in test report");
    }
    let _ = fs::remove_dir_all(dir);
}

#[test]
fn null_dist_is_resumable_with_identical_bytes() {
    let dir = tmp("nulldist");
    let args = |out: &Path| {
        let mut c = bin();
        c.args([
            "exp",
            "null-dist",
            "--replicates",
            "6",
            "--horizon",
            "250",
            "--degree",
            "2",
            "--seed",
            "77",
            "--out",
        ])
        .arg(out)
        .args(["--threads", "2"]);
        c
    };
    run_ok(&mut args(&dir));
    let full = fs::read_to_string(dir.join("null_dist.csv")).unwrap();
    assert_eq!(full.lines().count(), 7, "header plus six rows");
    assert!(full.starts_with("replicate,lambda,p_raw,k_hat,p_corrected,failed\n"));
    // drop half the rows and rerun: completed rows are kept verbatim and the
    // missing ones are recomputed into identical bytes
    let truncated: Vec<&str> = full.lines().take(4).collect();
    fs::write(dir.join("null_dist.csv"), truncated.join("\n") + "\n").unwrap();
    run_ok(&mut args(&dir));
    let resumed = fs::read_to_string(dir.join("null_dist.csv")).unwrap();
    assert_eq!(full, resumed);
    let _ = fs::remove_dir_all(dir);
}

#[test]
fn null_dist_zero_replicates_exits_cleanly() {
    let dir = tmp("nulldist_empty");
    run_ok(
        bin()
            .args(["exp", "null-dist", "--replicates", "0", "--out"])
            .arg(&dir),
    );
    let csv = fs::read_to_string(dir.join("null_dist.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1, "header only");
    assert!(dir.join("null_dist_summary.csv").exists());
    let _ = fs::remove_dir_all(dir);
}

#[test]
fn config_file_overrides_and_flags_win() {
    let dir = tmp("config");
    fs::write(
        dir.join("exp.toml"),
        "[null-dist]\nreplicates = 3\nhorizon = 200.0\ndegree = 2\nmultistart = 2\nseed = 5\n",
    )
    .unwrap();
    // flag overrides the file's replicate count
    run_ok(
        bin()
            .args(["exp", "null-dist", "--config"])
            .arg(dir.join("exp.toml"))
            .args(["--replicates", "2", "--out"])
            .arg(dir.join("out")),
    );
    let csv = fs::read_to_string(dir.join("out/null_dist.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3, "header plus two rows");
    let _ = fs::remove_dir_all(dir);
}

#[test]
fn simulate_with_model_config() {
    let dir = tmp("model_config");
    fs::write(
        dir.join("model.toml"),
        r#"
[model]
dimension = 1
baseline = "constant"
kernel = "exponential"
structure = [["raw"]]
degree = 1

[truth]
eta = [1.0, 2.0]
varpi = [1.0, 0.5]
"#,
    )
    .unwrap();
    let out = run_ok(
        bin()
            .args(["simulate", "--config"])
            .arg(dir.join("model.toml"))
            .args(["--horizon", "150", "--seed", "3", "--out"])
            .arg(dir.join("sim")),
    );
    assert!(out.contains("simulated"));
    let _ = fs::remove_dir_all(dir);
}

#[test]
fn lob_synth_and_analyze_round_trip() {
    let dir = tmp("lob");
    run_ok(
        bin()
            .args(["lob", "synth", "--sessions", "2", "--seed", "4", "--out"])
            .arg(dir.join("sessions")),
    );
    assert!(dir.join("sessions/sessions.toml").exists());
    run_ok(
        bin()
            .args(["lob", "analyze", "--manifest"])
            .arg(dir.join("sessions/sessions.toml"))
            .args(["--out"])
            .arg(dir.join("analysis"))
            .args(["--allow-failures", "--threads", "2"]),
    );
    let summary = fs::read_to_string(dir.join("analysis/lob_batch_summary.csv")).unwrap();
    assert!(summary.starts_with("session,rejected,p_raw,p_corrected,failed\n"));
    assert_eq!(summary.lines().count(), 3);
    assert!(dir.join("analysis/session_00_profile.csv").exists());
    assert!(dir.join("analysis/session_00_report.toml").exists());
    let _ = fs::remove_dir_all(dir);
}
