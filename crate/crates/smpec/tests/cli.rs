use std::process::{Command, Output};

use smpec::cli::RUN_HEADER;

fn smpec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_smpec")).args(args).env_remove("SMPEC_SEED").output().unwrap()
}

fn rows(out: &Output) -> Vec<Vec<String>> {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mut r = csv::Reader::from_reader(&out.stdout[..]);
    r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect()
}

/// Data rows with the wall-time column dropped.
fn timeless(rs: &[Vec<String>]) -> Vec<Vec<String>> {
    rs.iter().map(|r| r[..r.len() - 1].to_vec()).collect()
}

const QUICK: &[&str] = &["run", "--problem", "cournot2s", "--iters", "200", "--param", "N=5"];

#[test]
fn run_writes_one_row_per_run_and_a_summary() {
    let out = smpec(&[QUICK, &["--runs", "3"]].concat());
    let mut r = csv::Reader::from_reader(&out.stdout[..]);
    assert_eq!(r.headers().unwrap().iter().collect::<Vec<_>>(), RUN_HEADER.to_vec());
    let rs = rows(&out);
    assert_eq!(rs.len(), 4);
    assert!(rs.iter().all(|r| r.len() == RUN_HEADER.len()));
    assert_eq!(rs[0][0], "0");
    assert_eq!(rs[3][0], "summary");
    for r in &rs[..3] {
        let gap: f64 = r[3].parse().unwrap();
        assert!(gap >= -1e-12 && gap < 1.0, "{gap}");
        assert_eq!(r[6], "200");
    }
    assert!(!rs[3][14].is_empty());
}

#[test]
fn data_rows_are_deterministic() {
    let a = rows(&smpec(&[QUICK, &["--runs", "2", "--seed", "7"]].concat()));
    let b = rows(&smpec(&[QUICK, &["--runs", "2", "--seed", "7", "--jobs", "2"]].concat()));
    assert_eq!(timeless(&a[..2]), timeless(&b[..2]));
    let c = rows(&smpec(&[QUICK, &["--runs", "2", "--seed", "8"]].concat()));
    assert_ne!(a[0][1], c[0][1]);
}

#[test]
fn seed_variable_overrides_flag() {
    let out = Command::new(env!("CARGO_BIN_EXE_smpec"))
        .args([QUICK, &["--runs", "2", "--seed", "3"]].concat())
        .env("SMPEC_SEED", "40")
        .output()
        .unwrap();
    let rs = rows(&out);
    assert_eq!(rs[0][0], "40");
    assert_eq!(rs[1][0], "41");
    let flag = rows(&smpec(&[QUICK, &["--runs", "1", "--seed", "40"]].concat()));
    assert_eq!(timeless(&rs[..1]), timeless(&flag[..1]));
}

#[test]
fn config_errors_exit_with_two() {
    for args in [
        vec!["run", "--problem", "cournot2s", "--runs", "0"],
        vec!["run", "--problem", "nope"],
        vec!["run", "--problem", "cournot2s", "--param", "n=3"],
        vec!["run", "--problem", "cournot2s", "--gamma0", "-1"],
        vec!["run", "--problem", "cournot2s", "--solver", "zsol-acc", "--lower", "inexact"],
        vec!["run"],
        vec!["table", "p0", "--runs", "0"],
    ] {
        let out = smpec(&args);
        assert_eq!(out.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let out = Command::new(env!("CARGO_BIN_EXE_smpec")).args(QUICK).env("SMPEC_SEED", "x").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn solver_failure_exits_with_one() {
    // the SAA search stalls on the kink at the p2 minimizer
    let out = smpec(&["run", "--problem", "p2", "--solver", "saa", "--saa-samples", "1", "--runs", "1"]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("seed 0"), "{err}");
}

#[test]
fn toml_config_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    let csv_path = dir.path().join("out.csv");
    std::fs::write(
        &cfg,
        format!(
            "problem = \"cournot2s\"\nruns = 2\nseed = 5\nout = {:?}\n[params]\nN = 5\n[schedule]\niters = 50\ngamma0 = 0.5\n",
            csv_path
        ),
    )
    .unwrap();
    let out = smpec(&["run", "--config", cfg.to_str().unwrap(), "--runs", "1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mut r = csv::Reader::from_path(&csv_path).unwrap();
    let rs: Vec<csv::StringRecord> = r.records().map(|x| x.unwrap()).collect();
    assert_eq!(rs.len(), 2);
    assert_eq!(&rs[0][0], "5");
    assert_eq!(&rs[0][6], "50");

    std::fs::write(&cfg, "problem = \"cournot2s\"\nbogus = 1\n").unwrap();
    assert_eq!(smpec(&["run", "--config", cfg.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(smpec(&["run", "--config", "/nonexistent/exp.toml"]).status.code(), Some(2));
}

#[test]
fn trajectory_rows_follow_log_interval() {
    let out = smpec(&["trajectory", "--problem", "cournot2s", "--iters", "100", "--runs", "2", "--log-every", "10"]);
    let mut r = csv::Reader::from_reader(&out.stdout[..]);
    assert_eq!(r.headers().unwrap().iter().collect::<Vec<_>>(), ["k", "gap_estimate", "stderr", "eta_k", "gamma_k"]);
    let rs = rows(&out);
    assert_eq!(rs.len(), 11);
    assert_eq!(rs[0][0], "0");
    assert_eq!(rs[10][0], "100");
    let first: f64 = rs[0][1].parse().unwrap();
    let last: f64 = rs[10][1].parse().unwrap();
    assert!(last < first);
    assert_eq!(smpec(&["trajectory", "--problem", "cournot2s", "--solver", "saa"]).status.code(), Some(2));
}

#[test]
fn oracle_reports_registry_and_grid() {
    let rs = rows(&smpec(&["oracle", "--problem", "p2", "--resolution", "41"]));
    assert_eq!(rs.len(), 2);
    assert_eq!(rs[0][1], "registry");
    assert_eq!(rs[1][1], "grid");
    let f: f64 = rs[1][4].parse().unwrap();
    assert!((f + 1.0).abs() < 1e-6);
    let rs = rows(&smpec(&["oracle", "--problem", "cournot2s", "--resolution", "101", "--param", "N=5"]));
    let reg: f64 = rs[0][4].parse().unwrap();
    let grid: f64 = rs[1][4].parse().unwrap();
    // reported in the maximization sign
    assert!(reg > 0.0 && (reg - grid).abs() < 1e-4);
}
