use std::path::Path;
use std::process::{Command, Output};

use lagmart::blocks::{build_diverging_blocks, DivergingParams, LagSpec};
use lagmart::simulate::{read_records, write_records, ParityGroup};
use serde_json::Value;

fn lagmart(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lagmart")).args(args).env_remove("LAGMART_WORKERS").output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn small_run(dir: &Path, extra: &[&str]) -> Output {
    let out = dir.to_str().unwrap();
    let mut args = vec!["reproduce", "--reps", "10", "--T", "2000", "--out", out];
    args.extend_from_slice(extra);
    lagmart(&args)
}

#[test]
fn small_reproduce_skips_checks_and_lists_existing_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let o = small_run(dir.path(), &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stderr(&o).contains("insufficient replicates"));
    let manifest = read_json(&dir.path().join("manifest.json"));
    let outputs = manifest["outputs"].as_array().unwrap();
    assert_eq!(outputs.len(), 3);
    for p in outputs {
        assert!(Path::new(p.as_str().unwrap()).exists());
    }
    assert!(manifest["checks"].as_array().unwrap().iter().all(|c| c["status"] == "skipped"));
    assert_eq!(manifest["config"]["T"], 2000);
    assert_eq!(manifest["master_seed"], 20240521);
    let csv = std::fs::read_to_string(dir.path().join("replications.csv")).unwrap();
    assert_eq!(csv.lines().count(), 11);
    assert!(!csv.contains('\r'));
}

#[test]
fn same_seed_gives_identical_csv_bytes() {
    let (a, b, c) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    small_run(a.path(), &["--seed", "5"]);
    small_run(b.path(), &["--seed", "5", "--workers", "1"]);
    small_run(c.path(), &["--seed", "6"]);
    let read = |d: &tempfile::TempDir| std::fs::read(d.path().join("replications.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
}

#[test]
fn analyze_reproduces_the_summary_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    small_run(dir.path(), &[]);
    let again = dir.path().join("again.json");
    let o = lagmart(&[
        "analyze",
        "--in",
        dir.path().join("replications.csv").to_str().unwrap(),
        "--out",
        again.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(std::fs::read(dir.path().join("summary.json")).unwrap(), std::fs::read(again).unwrap());
}

#[test]
fn analyze_rejects_bad_input_with_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.csv");
    std::fs::write(&empty, "").unwrap();
    assert_eq!(code(&lagmart(&["analyze", "--in", empty.to_str().unwrap()])), 2);

    small_run(dir.path(), &[]);
    let csv = std::fs::read_to_string(dir.path().join("replications.csv")).unwrap();
    let broken = csv.replacen(",even,", ",sideways,", 1);
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, broken).unwrap();
    let o = lagmart(&["analyze", "--in", bad.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("row"), "{}", stderr(&o));
}

#[test]
fn analyze_flags_a_missing_parity_group() {
    let dir = tempfile::tempdir().unwrap();
    let o = lagmart(&["simulate", "--reps", "40", "--T", "2000", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let records = read_records(std::fs::File::open(dir.path().join("replications.csv")).unwrap()).unwrap();
    let even: Vec<_> = records.into_iter().filter(|r| r.parity_group == ParityGroup::Even).collect();
    assert!(!even.is_empty());
    let path = dir.path().join("even.csv");
    write_records(std::fs::File::create(&path).unwrap(), &even).unwrap();
    let o = lagmart(&["analyze", "--in", path.to_str().unwrap(), "--T", "2000"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let summary: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(summary["groups"]["odd"].is_null());
    assert_eq!(summary["groups"]["even"]["count"], even.len());
}

#[test]
fn flags_override_config_file_and_env_sets_workers() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("c.json");
    std::fs::write(&config, r#"{"reps": 5, "T": 500, "master_seed": 3}"#).unwrap();
    let out = dir.path().join("run");
    let o = Command::new(env!("CARGO_BIN_EXE_lagmart"))
        .args(["simulate", "--config", config.to_str().unwrap(), "--reps", "7", "--out", out.to_str().unwrap()])
        .env("LAGMART_WORKERS", "2")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let manifest = read_json(&out.join("manifest.json"));
    assert_eq!(manifest["config"]["reps"], 7);
    assert_eq!(manifest["config"]["T"], 500);
    assert_eq!(manifest["config"]["workers"], 2);
    assert_eq!(manifest["master_seed"], 3);
    assert_eq!(std::fs::read_to_string(out.join("replications.csv")).unwrap().lines().count(), 8);

    std::fs::write(&config, r#"{"horizon": 500}"#).unwrap();
    assert_eq!(code(&lagmart(&["simulate", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()])), 2);
    assert_eq!(code(&lagmart(&["simulate", "--T", "2", "--out", out.to_str().unwrap()])), 2);
}

#[test]
fn unwritable_output_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("occupied");
    std::fs::write(&file, "x").unwrap();
    assert_eq!(code(&small_run(&file, &[])), 2);
}

#[test]
fn blocks_prints_the_closed_form_scheme() {
    let o = lagmart(&["blocks", "--diverging", "--A", "1", "--B", "1", "--alpha", "1", "--beta", "2", "--s", "1", "--kmax", "100"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let params = DivergingParams { a_scale: 1.0, b_scale: 1.0, alpha: 1.0, beta: 2.0, start: 1, k_max: 100 };
    let expected = build_diverging_blocks(params, LagSpec::fixed(1)).unwrap().to_csv();
    assert_eq!(String::from_utf8_lossy(&o.stdout).into_owned(), expected);
    assert!(expected.starts_with("j,b_j,a_j,c_j,d_j\n1,1,2,1,1\n2,3,7,2,4\n3,9,18,3,9\n"));
    assert!(stderr(&o).contains("minor fraction"));
}

#[test]
fn blocks_names_the_violated_inequality() {
    let base = ["blocks", "--diverging", "--A", "1", "--B", "1", "--s", "1", "--kmax", "100"];
    let run = |extra: &[&str]| {
        let mut args = base.to_vec();
        args.extend_from_slice(extra);
        lagmart(&args)
    };
    let o = run(&["--alpha", "3", "--beta", "2"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("alpha < beta"), "{}", stderr(&o));
    let o = run(&["--alpha", "1", "--beta", "2", "--gamma", "0.5"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("gamma < alpha / (1 + beta)"), "{}", stderr(&o));
    assert_eq!(code(&run(&["--alpha", "1"])), 2);
}

#[test]
fn fixed_blocks_have_minor_length_p() {
    for p in ["1", "3"] {
        let o = lagmart(&["blocks", "--fixed", "--p", p, "--kmax", "500"]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let text = String::from_utf8_lossy(&o.stdout).into_owned();
        let rows: Vec<Vec<i64>> =
            text.lines().skip(1).map(|l| l.split(',').map(|x| x.parse().unwrap()).collect()).collect();
        assert!(rows.len() > 5);
        assert!(rows.iter().all(|r| r[3] == p.parse::<i64>().unwrap()));
    }
    assert_eq!(code(&lagmart(&["blocks", "--fixed", "--diverging", "--kmax", "10"])), 2);
}

#[test]
fn verify_passes_and_catches_an_injected_sign_flip() {
    let o = lagmart(&["verify"]);
    let text = String::from_utf8_lossy(&o.stdout).into_owned();
    assert_eq!(code(&o), 0, "{text}");
    for suite in ["moment_oracle", "conditional_unbiasedness", "decomposition_identity", "ma1_moments"] {
        assert!(text.lines().any(|l| l.starts_with("PASS") && l.contains(suite)), "{suite} missing:\n{text}");
    }
    let o = lagmart(&["verify", "--inject-sign-flip"]);
    let text = String::from_utf8_lossy(&o.stdout).into_owned();
    assert_eq!(code(&o), 1);
    let line = text.lines().find(|l| l.contains("moment_oracle")).unwrap();
    assert!(line.starts_with("FAIL") && line.contains("first failure"), "{line}");
}
