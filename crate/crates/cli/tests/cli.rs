use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use sechcal::dgp::{sample_exp1, Exp1World, Exp1WorldConfig};
use sechcal::io::{read_scores, snapshots_csv};

fn sechcal(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sechcal"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(o: &Output) -> String {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn write_snapshots(dir: &Path, name: &str, n: usize, seed: u64) {
    let w = Exp1World::new(&Exp1WorldConfig::default(), 1).unwrap();
    let s = sample_exp1(&w, n, 1.0 / 16.0, seed).unwrap();
    fs::write(dir.join(name), snapshots_csv(&s.batch)).unwrap();
}

#[test]
fn fit_estimate_recalibrate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_snapshots(d, "train.csv", 3000, 1);
    write_snapshots(d, "valid.csv", 1000, 2);
    ok(&sechcal(d, &["fit", "train.csv", "--degree", "3", "--out", "model.json"]));
    let est = ok(&sechcal(d, &["estimate", "model.json", "valid.csv", "--h", "0.0625"]));
    let mut lines = est.lines();
    assert!(lines.next().unwrap().contains("ce2"));
    assert!(lines.next().is_some());

    fs::write(d.join("scores.csv"), "m,sigma2\n0.2,0.01\n0.5,0.2\n0.9,0.0\n").unwrap();
    let out = ok(&sechcal(d, &["recalibrate", "model.json", "scores.csv"]));
    let scores = read_scores(out.as_bytes()).unwrap();
    assert_eq!(scores.len(), 3);
    assert!(scores.iter().all(|s| s.is_feasible()));

    let json = ok(&sechcal(d, &["estimate", "model.json", "valid.csv", "--format", "json"]));
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert!(v["ce2"].as_f64().unwrap() >= 0.0);
}

#[test]
fn perturb_is_seeded_and_feasible() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("s.csv"), "m,sigma2\n0.0,0.0\n1.0,0.0\n0.5,0.25\n0.3,0.1\n").unwrap();
    let a = ok(&sechcal(d, &["perturb", "s.csv", "--h", "0.0625", "--seed", "3"]));
    let b = ok(&sechcal(d, &["perturb", "s.csv", "--h", "0.0625", "--seed", "3"]));
    assert_eq!(a, b);
    let s = read_scores(a.as_bytes()).unwrap();
    assert_eq!(s.len(), 4);
    assert!(s.iter().all(|x| (0.0..=1.0).contains(&x.m) && (0.0..=0.25).contains(&x.sigma2)));
    assert!(!sechcal(d, &["perturb", "s.csv"]).status.success());
}

#[test]
fn malformed_input_names_the_row() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("bad.csv"), "m,sigma2,y1,y2\n0.5,0.1,1,0\n0.5,0.1,2,0\n").unwrap();
    let o = sechcal(d, &["fit", "bad.csv", "--degree", "2"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains('3'));
}

#[test]
fn exp4_requires_dataset_or_surrogate() {
    let dir = tempfile::tempdir().unwrap();
    let o = sechcal(dir.path(), &["exp4"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("--surrogate"));
}

#[test]
fn experiments_write_csv_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("small.toml"), "[exp3]\nrepeats = 2\nn_cal = 800\nn_eval = 1500\n[exp4]\nrepeats = 3\n").unwrap();
    ok(&sechcal(d, &["exp3", "--config", "small.toml", "--out", "res"]));
    ok(&sechcal(d, &["exp4", "--config", "small.toml", "--out", "res", "--surrogate"]));
    let gain = fs::read_to_string(d.join("res/exp3_gain.csv")).unwrap();
    assert!(gain.starts_with("method,tau,mean,lo,hi\n"));
    assert_eq!(gain.lines().count(), 1 + 7 * 71);
    let y = fs::read_to_string(d.join("res/exp4_yield.csv")).unwrap();
    assert!(y.starts_with("method,budget,yield,seed\n"));
    for exp in ["exp3", "exp4"] {
        let m: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(d.join(format!("res/{exp}_manifest.json"))).unwrap()).unwrap();
        assert_eq!(m["experiment"], exp);
        assert!(!m["outputs"].as_array().unwrap().is_empty());
    }
}

#[test]
fn oracle_build_writes_surface_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("o.toml"), "[exp1.oracle]\nn_qmc = 4096\ngrid = { n_m = 65, n_v = 17 }\n").unwrap();
    let out = ok(&sechcal(d, &["oracle-build", "--config", "o.toml", "--out", "s.bin"]));
    assert!(out.starts_with("h,n_qmc,ce2_pert,sha256\n"));
    assert!(d.join("s.bin").exists() && d.join("s.json").exists());
    let checksum = out.lines().nth(1).unwrap().rsplit(',').next().unwrap();
    assert_eq!(checksum.len(), 64);
}
