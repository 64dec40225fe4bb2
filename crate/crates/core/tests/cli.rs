mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::{e1_json, write_json};
use serde_json::Value;

fn coadopt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_coadopt")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect()
}

#[test]
fn validate_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let good = write_json(dir.path(), "e1.json", &e1_json());
    assert_eq!(code(&coadopt(&["validate", "--config", p(&good)])), 0);

    let mut bad = e1_json();
    bad["tech1"]["beta"] = serde_json::json!([0.9]);
    let bad = write_json(dir.path(), "bad.json", &bad);
    let out = coadopt(&["validate", "--config", p(&bad)]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("β sum"), "{}", stderr(&out));

    let garbage = dir.path().join("garbage.json");
    std::fs::write(&garbage, "{ \"n\": 1, ").unwrap();
    assert_eq!(code(&coadopt(&["validate", "--config", p(&garbage)])), 2);
    assert_eq!(code(&coadopt(&["validate", "--config", "/nonexistent/cfg.json"])), 2);
    assert_eq!(code(&coadopt(&["validate"])), 2);
}

#[test]
fn validate_writes_manifest_with_file_digest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_json(dir.path(), "e1.json", &e1_json());
    let out_dir = dir.path().join("run");
    assert_eq!(code(&coadopt(&["validate", "--config", p(&cfg), "--out", p(&out_dir)])), 0);
    let m: Value = serde_json::from_slice(&std::fs::read(out_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["config_digest"], coadopt::io::sha256_hex(&std::fs::read(&cfg).unwrap()));
    assert_eq!(m["command"], "validate");
}

#[test]
fn simulate_horizon_zero_writes_single_row() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_json(dir.path(), "e1.json", &e1_json());
    let out = dir.path().join("sim");
    let res = coadopt(&["simulate", "--config", p(&cfg), "--horizon", "0", "--out", p(&out)]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    assert_eq!(csv_rows(&out.join("trajectory.csv")).len(), 1);
    assert_eq!(csv_rows(&out.join("aggregate.csv")).len(), 1);
    let m: Value = serde_json::from_slice(&std::fs::read(out.join("manifest.json")).unwrap()).unwrap();
    let outputs: Vec<&str> = m["outputs"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    for f in ["trajectory.csv", "aggregate.csv", "final_state.csv", "manifest.json"] {
        assert!(outputs.iter().any(|o| o.ends_with(f)), "{f} missing from {outputs:?}");
    }
}

#[test]
fn simulate_delayed_entry_keeps_tech2_out() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    assert_eq!(code(&coadopt(&["generate", "--n", "10", "--seed", "3", "--out", p(&cfg)])), 0);
    let out = dir.path().join("sim");
    let res = coadopt(&["simulate", "--config", p(&cfg), "--horizon", "200", "--enter", "tech2@100", "--out", p(&out)]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    let rows = csv_rows(&out.join("trajectory.csv"));
    assert_eq!(rows.len(), 201 * 10);
    for r in rows {
        let t: usize = r[0].parse().unwrap();
        let a2: f64 = r[4].parse().unwrap();
        if t < 100 {
            assert_eq!(a2, 0.0, "t={t}");
        } else {
            assert!(a2 > 0.0, "t={t}");
        }
    }
}

#[test]
fn simulate_is_reproducible_and_json_matches_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    assert_eq!(code(&coadopt(&["generate", "--n", "6", "--seed", "1", "--out", p(&cfg)])), 0);
    let run = |name: &str, extra: &[&str]| {
        let out = dir.path().join(name);
        let mut args = vec!["simulate", "--config", p(&cfg), "--horizon", "50", "--out", p(&out)];
        args.extend(extra);
        assert_eq!(code(&coadopt(&args)), 0);
        out
    };
    let a = run("a", &["--deterministic-sum"]);
    let b = run("b", &[]);
    for f in ["trajectory.csv", "aggregate.csv", "final_state.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let j = run("j", &["--format", "json"]);
    let doc: Value = serde_json::from_slice(&std::fs::read(j.join("trajectory.json")).unwrap()).unwrap();
    let last = &doc["states"][50]["a1"];
    let end = coadopt::io::load_state(&a.join("final_state.csv")).unwrap();
    for (i, v) in last.as_array().unwrap().iter().enumerate() {
        assert_eq!(v.as_f64().unwrap(), end.a[0][i]);
    }
}

#[test]
fn simulate_rejects_unwritable_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_json(dir.path(), "e1.json", &e1_json());
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let res = coadopt(&["simulate", "--config", p(&cfg), "--out", p(&blocker.join("sub"))]);
    assert_eq!(code(&res), 2);
    let res = coadopt(&["simulate", "--config", p(&cfg), "--enter", "tech3@1", "--out", p(dir.path())]);
    assert_eq!(code(&res), 2);
}

#[test]
fn equilibrium_e1_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_json(dir.path(), "e1.json", &e1_json());
    let out = dir.path().join("eq");
    let res = coadopt(&["equilibrium", "--config", p(&cfg), "--out", p(&out)]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    let doc: Value = serde_json::from_slice(&std::fs::read(out.join("equilibrium.json")).unwrap()).unwrap();
    for key in
        ["kind", "converged", "iterations", "residual", "state", "ratio_check_max_err", "simplex_max_err", "solver"]
    {
        assert!(doc.get(key).is_some(), "missing {key}");
    }
    for block in ["s", "a1", "a2", "d1", "d2", "x1", "x2"] {
        assert_eq!(doc["state"][block].as_array().unwrap().len(), 1, "{block}");
    }
    assert_eq!(doc["kind"], "adoption-diffused");
    assert_eq!(doc["converged"], true);
    let oracle = common::scalar_oracle(common::E1_PARAMS);
    assert!((doc["state"]["a1"][0].as_f64().unwrap() - oracle[0]).abs() < 1e-6);
    assert!(doc["ratio_check_max_err"].as_f64().unwrap() <= 1e-9);
    let uniq: Value = serde_json::from_slice(&std::fs::read(out.join("uniqueness.json")).unwrap()).unwrap();
    assert_eq!(uniq["corroborated"], true);
    assert_eq!(uniq["runs"], 10);
}

#[test]
fn equilibrium_rejects_zero_delta() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = e1_json();
    v["tech2"]["delta"] = serde_json::json!([0.0]);
    let cfg = write_json(dir.path(), "d0.json", &v);
    let res = coadopt(&["equilibrium", "--config", p(&cfg), "--out", p(&dir.path().join("eq"))]);
    assert_eq!(code(&res), 1);
    assert!(stderr(&res).contains("delta must be strictly positive for the diffused solve"), "{}", stderr(&res));
}

#[test]
fn equilibrium_reports_non_convergence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_json(dir.path(), "e1.json", &e1_json());
    let res = coadopt(&[
        "equilibrium",
        "--config",
        p(&cfg),
        "--max-iter",
        "1",
        "--tol",
        "1e-15",
        "--out",
        p(&dir.path().join("eq")),
    ]);
    assert_eq!(code(&res), 1);
    assert!(stderr(&res).contains("best residual"), "{}", stderr(&res));
}

#[test]
fn verify_random_batch_passes_with_six_lines_each() {
    let res = coadopt(&["verify", "--random", "50", "--seeds", "0..9"]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    let text = stdout(&res);
    let lines: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(lines.len(), 60);
    let mut per_instance = std::collections::BTreeMap::new();
    for l in &lines {
        let fields: Vec<&str> = l.split(' ').collect();
        assert_eq!(fields.len(), 5, "{l}");
        assert_eq!(fields[2], "pass", "{l}");
        assert!(fields[3].starts_with("worst=") && fields[4].starts_with("at=("), "{l}");
        *per_instance.entry(fields[0].to_string()).or_insert(0) += 1;
    }
    assert_eq!(per_instance.len(), 10);
    assert!(per_instance.values().all(|&c| c == 6));
}

#[test]
fn verify_json_and_config_modes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_json(dir.path(), "e1.json", &e1_json());
    let res = coadopt(&["verify", "--config", p(&cfg), "--format", "json", "--cross-validate", "--horizon", "2000"]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    let doc: Value = serde_json::from_slice(&res.stdout).unwrap();
    assert_eq!(doc[0]["reports"].as_array().unwrap().len(), 6);
    assert!(doc[0]["cross_validation"]["max_distance"].as_f64().unwrap() < 1e-6);
}

#[test]
fn verify_rejects_gamma_one_before_suite() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = e1_json();
    v["tech1"]["gamma"] = serde_json::json!([1.0]);
    let cfg = write_json(dir.path(), "g1.json", &v);
    let res = coadopt(&["verify", "--config", p(&cfg)]);
    assert_eq!(code(&res), 1);
    assert!(stdout(&res).is_empty());
    assert!(stderr(&res).contains("γ"), "{}", stderr(&res));
}

fn sweep(dir: &Path, cfg: &Path, param: &str, grid: &str) -> (i32, Vec<Vec<String>>) {
    let out = dir.join(format!("{param}.csv"));
    let res = coadopt(&["sweep", "--config", p(cfg), "--param", param, &format!("--grid={grid}"), "--out", p(&out)]);
    let rows = if out.exists() { csv_rows(&out) } else { Vec::new() };
    (code(&res), rows)
}

fn col(rows: &[Vec<String>], i: usize) -> Vec<f64> {
    rows.iter().map(|r| r[i].parse().unwrap()).collect()
}

#[test]
fn sweep_beta_scale_leaves_adoption_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    assert_eq!(code(&coadopt(&["generate", "--n", "50", "--seed", "7", "--out", p(&cfg)])), 0);
    let (c, rows) = sweep(dir.path(), &cfg, "beta1-scale", "0.8,1.0,1.2");
    assert_eq!(c, 0);
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r[1] == "ok"));
    for i in [2, 3] {
        let v = col(&rows, i);
        assert!(v.iter().all(|x| (x - v[0]).abs() <= 1e-8), "{v:?}");
    }
    assert!(dir.path().join("beta1-scale.manifest.json").exists());
}

#[test]
fn sweep_delta2_scale_tracks_share_ratio() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_json(dir.path(), "e1.json", &e1_json());
    let (c, rows) = sweep(dir.path(), &cfg, "delta2-scale", "0.5,1.0");
    assert_eq!(c, 0);
    let ratio = col(&rows, 4);
    assert!((ratio[0] - 0.2 / 0.05).abs() <= 1e-8 && (ratio[1] - 0.2 / 0.1).abs() <= 1e-8, "{ratio:?}");
}

#[test]
fn sweep_marks_skipped_rows_and_rejects_empty_grid() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_json(dir.path(), "e1.json", &e1_json());
    let (c, rows) = sweep(dir.path(), &cfg, "beta-scale", "1.0,3.0");
    assert_eq!(c, 0);
    assert_eq!(rows[0][1], "ok");
    assert_eq!(rows[1][1], "skipped");
    assert!(rows[1][2].is_empty());
    let (c, _) = sweep(dir.path(), &cfg, "x0-shift", "");
    assert_eq!(c, 2);
}
