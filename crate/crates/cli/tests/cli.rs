use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use equalizer_cli::table::{fmt6, read_csv};

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn equalizer(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_equalizer"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    read_csv(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn missing_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = equalizer(&["analyze"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--config"));
}

#[test]
fn unreadable_config_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.json");
    let out = equalizer(&["analyze", "--config", missing.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn invalid_config_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(
        &path,
        r#"{"schema_version": 1, "equalizer": {"inductance": -1.0},
            "cells": [{"kind": "lead_acid", "voltage": 12.6}, {"kind": "lead_acid", "voltage": 12.5},
                      {"kind": "lead_acid", "voltage": 12.2}, {"kind": "lead_acid", "voltage": 12.0}]}"#,
    )
    .unwrap();
    let out = equalizer(&["analyze", "--config", path.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("equalizer.inductance"));
}

#[test]
fn analyze_report_matches_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = equalizer(&["analyze", "--config", scenario("table3.json").to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let report = String::from_utf8(out.stdout).unwrap();
    let (header, rows) = csv(&dir.path().join("analyze_cells.csv"));
    assert_eq!(header, ["cell", "voltage_v", "role", "current_a", "power_w"]);
    assert_eq!(rows.len(), 4);
    for row in &rows {
        let current: f64 = row[3].parse().unwrap();
        assert!(report.contains(&fmt6(current)), "{}", fmt6(current));
    }
    let roles: Vec<&str> = rows.iter().map(|r| r[2].as_str()).collect();
    assert_eq!(roles, ["D", "D", "C", "C"]);
}

#[test]
fn two_cell_simulation_agrees_with_analysis() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenario("two_cell.json");
    let cfg = cfg.to_str().unwrap();
    assert_eq!(equalizer(&["analyze", "--config", cfg, "--quiet"], dir.path()).status.code(), Some(0));
    let sim = equalizer(&["simulate", "--config", cfg, "--quiet", "--cycles", "4"], dir.path());
    assert_eq!(sim.status.code(), Some(0));
    assert!(sim.stdout.is_empty());

    let (_, analyzed) = csv(&dir.path().join("analyze_cells.csv"));
    let (header, steady) = csv(&dir.path().join("steady_state.csv"));
    let dc = header.iter().position(|h| h == "dc_current_a").unwrap();
    for (a, s) in analyzed.iter().zip(&steady) {
        let want: f64 = a[3].parse().unwrap();
        let got: f64 = s[dc].parse().unwrap();
        assert!((want - got).abs() < 1e-9 * want.abs());
    }

    let (header, trace) = csv(&dir.path().join("trace.csv"));
    assert_eq!(header, ["t_s", "i_1", "i_2", "v_o", "ib_1", "ib_2", "mode"]);
    assert_eq!(trace.len(), 4 * 64);
    for row in &trace {
        let i1: f64 = row[1].parse().unwrap();
        let i2: f64 = row[2].parse().unwrap();
        assert!((i1 + i2).abs() < 1e-9);
    }
}

#[test]
fn seeded_simulation_writes_verification() {
    let dir = tempfile::tempdir().unwrap();
    let out = equalizer(
        &["simulate", "--config", scenario("table3.json").to_str().unwrap(), "--seed", "7", "--cycles", "3", "--quiet"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let (_, rows) = csv(&dir.path().join("verify.csv"));
    assert!(!rows.is_empty());
    for name in ["trace.csv", "steady_state.csv", "modes.csv", "commutations.csv"] {
        assert!(dir.path().join(name).exists(), "{name}");
    }
}

#[test]
fn equalize_writes_a_log() {
    let dir = tempfile::tempdir().unwrap();
    let out = equalizer(&["equalize", "--config", scenario("huc_cycling.json").to_str().unwrap(), "--cycles", "2"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let (header, rows) = csv(&dir.path().join("equalization_log.csv"));
    assert_eq!(header.first().map(String::as_str), Some("t_s"));
    assert_eq!(header.last().map(String::as_str), Some("spread_v"));
    assert_eq!(header.len(), 1 + 3 * 4 + 1);
    assert!(rows.len() > 2);
}

#[test]
fn sweep_covers_the_grid() {
    let dir = tempfile::tempdir().unwrap();
    let out = equalizer(&["sweep-cs", "--config", scenario("table3.json").to_str().unwrap(), "--quiet"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let (_, rows) = csv(&dir.path().join("sweep_cs.csv"));
    assert_eq!(rows.len(), 19);
}
