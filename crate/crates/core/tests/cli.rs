use std::path::PathBuf;

use dyadic_osc::cli::{run, EXIT_DEPTH, EXIT_DOMAIN, EXIT_OK, EXIT_USAGE};
use serde_json::Value;
use sha2::{Digest, Sha256};

fn scratch(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("osc-test-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    d
}

fn osc(args: &[&str], out: &PathBuf) -> i32 {
    let mut argv = vec!["osc", "--out", out.to_str().unwrap()];
    argv.extend_from_slice(args);
    run(argv)
}

fn manifest(dir: &PathBuf) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn manifest_checksums_match_files() {
    let dir = scratch("sums");
    assert_eq!(osc(&["sigma-stats", "--alpha", "0.5", "--seed", "4", "--samples", "64"], &dir), EXIT_OK);
    let m = manifest(&dir);
    assert_eq!(m["subcommand"], "sigma-stats");
    assert_eq!(m["seed"], 4);
    for o in m["outputs"].as_array().unwrap() {
        let body = std::fs::read(dir.join(o["file"].as_str().unwrap())).unwrap();
        assert_eq!(o["sha256"].as_str().unwrap(), hex::encode(Sha256::digest(&body)));
    }
    let csv = std::fs::read_to_string(dir.join("sigma_stats.csv")).unwrap();
    assert!(csv.starts_with("# seed=4"));
    assert!(csv.contains("x,eps,threshold,sigma_measure,stderr"));
}

#[test]
fn equal_parameters_give_equal_manifests() {
    let (a, b) = (scratch("rep-a"), scratch("rep-b"));
    let args = ["lemma32", "--eta", "0.25", "--seed", "9", "--trials", "50"];
    assert_eq!(osc(&args, &a), EXIT_OK);
    assert_eq!(osc(&args, &b), EXIT_OK);
    assert_eq!(manifest(&a), manifest(&b));
    let c = scratch("rep-c");
    assert_eq!(osc(&["lemma32", "--eta", "0.25", "--seed", "10", "--trials", "50"], &c), EXIT_OK);
    assert_ne!(manifest(&a)["outputs"], manifest(&c)["outputs"]);
}

#[test]
fn json_format() {
    let dir = scratch("json");
    assert_eq!(osc(&["--format", "json", "besicovitch", "--eta", "0.5", "--levels", "20"], &dir), EXIT_OK);
    let v: Value = serde_json::from_str(&std::fs::read_to_string(dir.join("besicovitch.json")).unwrap()).unwrap();
    assert_eq!(v["rows"][0]["count"], 21700.0);
}

#[test]
fn extract_respects_depth_cap() {
    let dir = scratch("cap");
    assert_eq!(osc(&["martingale-extract", "--function", "identity", "--alpha", "0.5", "--depth", "30"], &dir), EXIT_DEPTH);
    assert_eq!(osc(&["martingale-extract", "--function", "identity", "--alpha", "0.5", "--depth", "4"], &dir), EXIT_OK);
    let csv = std::fs::read_to_string(dir.join("martingale.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 31);
}

#[test]
fn bad_inputs() {
    let dir = scratch("bad");
    assert_eq!(osc(&["weierstrass", "--alpha", "1.5"], &dir), EXIT_DOMAIN);
    assert_eq!(osc(&["dim-estimate", "--counts", "12"], &dir), EXIT_DOMAIN);
    assert_eq!(osc(&["mass-measure", "--eta", "0.5", "--martingale", "random"], &dir), EXIT_USAGE);
    assert_eq!(osc(&["block", "--delta", "0.25", "--beta", "0.5", "--level", "2", "--index", "4"], &dir), EXIT_DOMAIN);
}

#[test]
fn block_and_schedule() {
    let dir = scratch("sched");
    assert_eq!(osc(&["schedule", "--beta", "0.5", "--stages", "1"], &dir), EXIT_OK);
    let v: Value = serde_json::from_str(&std::fs::read_to_string(dir.join("schedule.json")).unwrap()).unwrap();
    assert_eq!(v["schedule"]["placements"].as_array().unwrap().len(), 12);
    assert_eq!(osc(&["block", "--delta", "0.125", "--beta", "0.5", "--level", "3", "--index", "5"], &dir), EXIT_OK);
}

#[test]
fn growth_level_entropy() {
    let (a, b) = (scratch("gamma"), scratch("eta"));
    assert_eq!(osc(&["phi", "--gamma", "1", "--beta", "1"], &a), EXIT_DOMAIN);
    assert_eq!(osc(&["phi", "--gamma", "0.75", "--beta", "0.5"], &a), EXIT_OK);
    let g = std::fs::read_to_string(a.join("phi.txt")).unwrap();
    let want = dyadic_osc::entropy_dim::entropy_phi(0.75 * (1.0 - 0.5f64.exp2().recip())).unwrap();
    assert!((g.trim().parse::<f64>().unwrap() - want).abs() < 1e-11);
    assert_eq!(osc(&["phi", "--eta", "0.5"], &b), EXIT_OK);
    assert_eq!(std::fs::read_to_string(b.join("phi.txt")).unwrap(), "0.811278124459\n");
}

#[test]
fn mass_measure_reports_content() {
    let dir = scratch("mass");
    assert_eq!(osc(&["mass-measure", "--eta", "0.25", "--depth", "10"], &dir), EXIT_OK);
    let v: Value = serde_json::from_str(&std::fs::read_to_string(dir.join("mass_measure.json")).unwrap()).unwrap();
    let c = v["covering_content"].as_f64().unwrap();
    assert!(c > 0.0 && c <= 1.0);
    assert_eq!(v["report"]["failures"], 0);
}
