use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_multimatch"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Simulates a small study into `dir/study` and returns its config path.
fn simulated(dir: &Path, seed: u64) -> PathBuf {
    let params = dir.join("sim.json");
    fs::write(
        &params,
        format!(
            r#"{{"simulate": {{"treated_clusters": 3, "control_clusters": 4, "units_per_cluster": 6, "effect": 1.0}}, "seed": {seed}}}"#
        ),
    )
    .unwrap();
    let study = dir.join("study");
    let out = run(&["simulate", "--config", params.to_str().unwrap(), "--out", study.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    study.join("config.json")
}

fn header(path: &Path) -> String {
    fs::read_to_string(path).unwrap().lines().next().unwrap_or_default().to_string()
}

#[test]
fn match_writes_the_four_outputs() {
    let dir = TempDir::new().unwrap();
    let config = simulated(dir.path(), 5);
    let out_dir = dir.path().join("m");
    let out = run(&["match", "--config", config.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    for f in ["cluster_pairs.csv", "unit_pairs.csv", "balance_report.csv", "run_summary.json"] {
        assert!(out_dir.join(f).exists(), "{f} missing");
    }
    assert_eq!(header(&out_dir.join("cluster_pairs.csv")), "pair_id,treated_cluster,control_cluster,m,total_distance");
    assert_eq!(header(&out_dir.join("unit_pairs.csv")), "pair_id,treated_unit,control_unit,distance");
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out_dir.join("run_summary.json")).unwrap()).unwrap();
    assert_eq!(summary["balance_violations"], 0);
    assert!(summary["run"]["stage_seconds"]["pair_table"].is_number());
}

#[test]
fn simulate_is_reproducible() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    simulated(a.path(), 9);
    simulated(b.path(), 9);
    for f in ["units.csv", "clusters.csv", "config.json"] {
        assert_eq!(
            fs::read(a.path().join("study").join(f)).unwrap(),
            fs::read(b.path().join("study").join(f)).unwrap(),
            "{f} differs"
        );
    }
}

#[test]
fn compare_is_deterministic_and_dominant() {
    let dir = TempDir::new().unwrap();
    let config = simulated(dir.path(), 2);
    let mut files = Vec::new();
    for name in ["c1", "c2"] {
        let out_dir = dir.path().join(name);
        let out = run(&["compare", "--config", config.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        files.push(fs::read_to_string(out_dir.join("comparison.csv")).unwrap());
    }
    assert_eq!(files[0], files[1]);
    let mut rdr = csv::Reader::from_reader(files[0].as_bytes());
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 3);
    assert_eq!(&rows[0][0], "dynamic");
    assert_eq!(&rows[1][0], "myopic-cardinality");
    assert_eq!(&rows[2][0], "myopic-optimal");
    let units = |r: &csv::StringRecord| r[2].parse::<usize>().unwrap();
    assert!(units(&rows[0]) >= units(&rows[1]));
}

#[test]
fn analyze_and_balance_run_on_a_matched_sample() {
    let dir = TempDir::new().unwrap();
    let config = simulated(dir.path(), 4);
    let out_dir = dir.path().join("a");
    let cfg = config.to_str().unwrap();
    let out = out_dir.to_str().unwrap();
    assert_eq!(code(&run(&["match", "--config", cfg, "--out", out])), 0);
    let analyzed = run(&["analyze", "--config", cfg, "--out", out, "--matched", out]);
    assert_eq!(code(&analyzed), 0, "{}", stderr(&analyzed));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out_dir.join("inference_report.json")).unwrap()).unwrap();
    for key in ["p_one_sided", "tau_hat", "ci", "gamma_star"] {
        assert!(report.get(key).is_some(), "{key} missing");
    }
    let sweep = fs::read_to_string(out_dir.join("gamma_sweep.csv")).unwrap();
    assert_eq!(sweep.lines().next(), Some("gamma,p_upper"));
    let p: Vec<f64> = sweep.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert!(p.windows(2).all(|w| w[1] >= w[0] - 1e-12));

    let balanced = run(&["balance", "--config", cfg, "--out", out, "--matched", out]);
    assert_eq!(code(&balanced), 0, "{}", stderr(&balanced));
    assert_eq!(header(&out_dir.join("table1.csv")), "covariate,mean_treated,mean_control,std_dif");
    assert_eq!(
        header(&out_dir.join("table5.csv")),
        "covariate,treated_all,treated_unmatched,treated_matched,control_matched,control_unmatched,control_all"
    );
}

#[test]
fn config_errors_exit_2_and_name_the_key() {
    let dir = TempDir::new().unwrap();
    let config = dir.path().join("bad.json");
    fs::write(&config, r#"{"units_file": "u.csv", "clusters_file": "c.csv", "schema": [], "colour": 1}"#).unwrap();
    let out = run(&["match", "--config", config.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("colour"), "{}", stderr(&out));

    fs::write(&config, "{ not json").unwrap();
    assert_eq!(code(&run(&["match", "--config", config.to_str().unwrap()])), 2);
}

#[test]
fn data_errors_exit_3() {
    let dir = TempDir::new().unwrap();
    let config = simulated(dir.path(), 1);
    let study = config.parent().unwrap();
    fs::write(study.join("units.csv"), "unit_id,cluster_id,x1\nu1,NOPE,abc\n").unwrap();
    let out = run(&["match", "--config", config.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
}

#[test]
fn infeasible_cluster_balance_exits_4() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    fs::write(d.join("units.csv"), "unit_id,cluster_id,x\nu1,A,1\nu2,A,2\nu3,B,1\nu4,B,2\nu5,C,1\nu6,D,1\n").unwrap();
    fs::write(d.join("clusters.csv"), "cluster_id,treated,w\nA,1,0\nB,0,10\nC,1,1\nD,0,11\n").unwrap();
    let config = d.join("config.json");
    fs::write(
        &config,
        r#"{
  "units_file": "units.csv",
  "clusters_file": "clusters.csv",
  "schema": [
    {"name": "x", "kind": "continuous", "level": "unit"},
    {"name": "w", "kind": "continuous", "level": "cluster"}
  ],
  "balance": {"cluster": [{"type": "mean", "covariate": "w", "tolerance": 0.01}]}
}"#,
    )
    .unwrap();
    let out = run(&["match", "--config", config.to_str().unwrap(), "--out", d.join("o").to_str().unwrap()]);
    assert_eq!(code(&out), 4, "{}", stderr(&out));
    assert!(stderr(&out).contains("w"), "{}", stderr(&out));
}
