//! End-to-end checks of the command-line interface: subcommands, flags,
//! artifacts, determinism, and the exit-code contract
//! (0 pass, 1 acceptance failure, 2 usage/config error, 3 internal failure).

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

fn almreg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_almreg"))
        .args(args)
        .output()
        .expect("binary runs")
}

#[test]
fn solve_writes_iterates_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("solve_single.toml");
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    for out in [&out_a, &out_b] {
        let res = almreg(&[
            "solve",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    }
    let a = std::fs::read(out_a.join("iterates.csv")).unwrap();
    let b = std::fs::read(out_b.join("iterates.csv")).unwrap();
    assert_eq!(a, b, "byte-identical artifacts for identical config");
    let text = String::from_utf8(a).unwrap();
    assert!(text.starts_with("k,tau_k,t_k,residual,J_value,dual_norm,bregman,norm_error"));
    assert_eq!(text.lines().count(), 1 + 25);
}

#[test]
fn seed_override_changes_noise() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("solve_single.toml");
    let out = dir.path().join("s");
    let res = almreg(&[
        "solve",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--seed-override",
        "99",
    ]);
    assert!(res.status.success());
    let overridden = std::fs::read_to_string(out.join("iterates.csv")).unwrap();
    let res = almreg(&[
        "solve",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(res.status.success());
    let default = std::fs::read_to_string(out.join("iterates.csv")).unwrap();
    assert_ne!(overridden, default);
}

#[test]
fn sweep_writes_records_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let res = almreg(&[
        "sweep",
        "--config",
        config("morozov.toml").to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
        "--threads",
        "2",
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let records = std::fs::read_to_string(dir.path().join("records.csv")).unwrap();
    assert!(records.starts_with("delta,seed,n_stop,t_stop,residual,bregman,norm_error"));
    assert_eq!(records.lines().count(), 1 + 8);
    let summary = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert!(summary.contains("morozov_growth_bound"));
    assert!(!summary.contains(",fail"));
}

#[test]
fn check_battery_exits_zero() {
    let res = almreg(&["check", "--config", config("solve_single.toml").to_str().unwrap()]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let stdout = String::from_utf8_lossy(&res.stdout);
    assert!(stdout.contains("iterated_tikhonov_equivalence"));
    assert!(!stdout.contains("FAIL"));
}

#[test]
fn usage_errors_exit_2() {
    // No config at all.
    let res = almreg(&["solve"]);
    assert_eq!(res.status.code(), Some(2));

    // Invalid config value.
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    let text = std::fs::read_to_string(config("morozov.toml"))
        .unwrap()
        .replace("rho = 1.5", "rho = 0.9");
    std::fs::write(&bad, text).unwrap();
    let res = almreg(&["sweep", "--config", bad.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("rho > 1"));

    // Unknown key.
    let text = std::fs::read_to_string(config("morozov.toml"))
        .unwrap()
        .replace("[solver]", "[solver]\nbogus = 1");
    std::fs::write(&bad, text).unwrap();
    let res = almreg(&["sweep", "--config", bad.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn internal_failure_exits_3() {
    // Starve the first-order inner solver so it cannot reach its tolerance.
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("starved.toml");
    let text = std::fs::read_to_string(config("sparsity_morozov.toml"))
        .unwrap()
        .replace("deltas = [1e-1, 1e-2, 1e-3]", "deltas = [1e-2]")
        .replace("tau = 1.0\n", "tau = 1.0\nmax_inner_iterations = 1\n");
    std::fs::write(&bad, text).unwrap();
    let res = almreg(&[
        "solve",
        "--config",
        bad.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(res.status.code(), Some(3), "{}", String::from_utf8_lossy(&res.stderr));
}
