use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn relkin(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_relkin"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("RELKIN_SEED")
        .output()
        .expect("binary runs")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn value_function_on_the_free_orbit_is_zero() {
    let dir = TempDir::new().unwrap();
    let o = relkin(&["value-function", "--target", "0,0,-1"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    let psi: f64 = stdout
        .lines()
        .find_map(|l| l.strip_prefix("psi = "))
        .unwrap()
        .trim()
        .parse()
        .unwrap();
    assert!(psi.abs() <= 1e-6);

    let mut r = csv::Reader::from_path(dir.path().join("value.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = r.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 1);
    assert_eq!(&rows[0][6], "ok");
    assert!(rows[0][7].parse::<f64>().unwrap().abs() <= 1e-6);
    assert_eq!(json(&dir.path().join("manifest.json"))["status"], "ok");
}

#[test]
fn simulate_is_bitwise_reproducible() {
    let dirs: Vec<TempDir> = (0..4).map(|_| TempDir::new().unwrap()).collect();
    let base = ["simulate", "--process", "rsde", "--replicas", "1000", "--seed", "7"];
    assert!(relkin(&base, dirs[0].path()).status.success());
    assert!(relkin(&base, dirs[1].path()).status.success());
    let mut one_thread = base.to_vec();
    one_thread.extend(["--threads", "1"]);
    assert!(relkin(&one_thread, dirs[2].path()).status.success());
    let manifest = dirs[0].path().join("manifest.json");
    let rerun = relkin(&["simulate", "--config", manifest.to_str().unwrap()], dirs[3].path());
    assert!(rerun.status.success());

    let paths = |d: &TempDir| std::fs::read(d.path().join("paths.csv")).unwrap();
    let reference = paths(&dirs[0]);
    assert!(reference.len() > 1000);
    for d in &dirs[1..] {
        assert_eq!(paths(d), reference);
    }
    assert_eq!(json(&manifest)["seed"], 7);
}

#[test]
fn chain_for_unit_control_splits_into_four_links() {
    let dir = TempDir::new().unwrap();
    let o = relkin(&["chain", "--omega-const", "1", "--horizon", "2"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v = json(&dir.path().join("chain.json"));
    assert_eq!(v["k"], 3);
    let sigma: Vec<f64> = v["sigma"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    let expected = [0.65761, 1.31521, 1.97282, 2.0];
    assert_eq!(sigma.len(), expected.len());
    for (s, e) in sigma.iter().zip(expected) {
        assert!((s - e).abs() < 1e-5, "{s} vs {e}");
    }
}

#[test]
fn chain_time_hypothesis_can_be_enforced() {
    let dir = TempDir::new().unwrap();
    let o = relkin(
        &["chain", "--omega-const", "1", "--horizon", "2", "--enforce-time-hypothesis"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("hypothesis"));
}

#[test]
fn exit_codes_follow_the_error_class() {
    let dir = TempDir::new().unwrap();
    assert_eq!(relkin(&["bogus"], dir.path()).status.code(), Some(1));
    assert_eq!(relkin(&["simulate", "--bogus"], dir.path()).status.code(), Some(1));
    assert_eq!(relkin(&["simulate", "--replicas", "0"], dir.path()).status.code(), Some(1));

    let help = Command::new(env!("CARGO_BIN_EXE_relkin")).arg("--help").output().unwrap();
    assert_eq!(help.status.code(), Some(0));

    let unreachable = relkin(&["value-function", "--target", "0.5,0.9,-0.5"], dir.path());
    assert_eq!(unreachable.status.code(), Some(1));

    let starved = relkin(
        &["value-function", "--target", "1.5,0.2,-1", "--max-newton", "1"],
        dir.path(),
    );
    assert_eq!(starved.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&starved.stderr).contains("did not converge"));
    assert_eq!(json(&dir.path().join("manifest.json"))["status"], "failed");
}

#[test]
fn flags_override_config_and_config_overrides_env() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"seed": 11, "replicas": 50, "beta": [0.5]}"#).unwrap();
    let out = dir.path().join("a");

    let o = relkin(
        &["hormander", "--config", cfg.to_str().unwrap(), "--seed", "3", "--beta", "0.1,0.2"],
        &out,
    );
    assert_eq!(o.status.code(), Some(1), "replicas is not a hormander flag");

    std::fs::write(&cfg, r#"{"seed": 11, "beta": [0.5]}"#).unwrap();
    let o = relkin(
        &["hormander", "--config", cfg.to_str().unwrap(), "--beta", "0.1,0.2"],
        &out,
    );
    assert!(o.status.success());
    let m = json(&out.join("manifest.json"));
    assert_eq!(m["seed"], 11);
    assert_eq!(m["parameters"]["beta"], serde_json::json!([0.1, 0.2]));

    let run_env = |extra: &[&str]| {
        let o = Command::new(env!("CARGO_BIN_EXE_relkin"))
            .arg("hormander")
            .args(extra)
            .arg("--out")
            .arg(&out)
            .env("RELKIN_SEED", "99")
            .output()
            .unwrap();
        assert!(o.status.success());
        json(&out.join("manifest.json"))["seed"].as_u64().unwrap()
    };
    assert_eq!(run_env(&[]), 99);
    assert_eq!(run_env(&["--config", cfg.to_str().unwrap()]), 11);
    assert_eq!(run_env(&["--seed", "5"]), 5);
}

#[test]
fn batch_value_queries_keep_row_order() {
    let dir = TempDir::new().unwrap();
    let batch = dir.path().join("q.csv");
    std::fs::write(&batch, "p1,y1,t1\n0,0,-1\n0.3,0.1,-0.8\n0.5,0.9,-0.5\n").unwrap();
    let o = relkin(&["value-function", "--batch", batch.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let mut r = csv::Reader::from_path(dir.path().join("value.csv")).unwrap();
    let status: Vec<String> = r.records().map(|x| x.unwrap()[6].to_string()).collect();
    assert_eq!(status, ["ok", "ok", "unreachable"]);
}

#[test]
fn geometry_inverse_round_trips() {
    let dir = TempDir::new().unwrap();
    let o = relkin(&["geometry", "--op", "inverse", "--a", "0.7,-0.2,0.4"], dir.path());
    assert!(o.status.success());
    let inv: Vec<f64> = json(&dir.path().join("geometry.json"))["result"]
        .as_object()
        .map(|m| ["p", "y", "t"].iter().map(|k| m[*k].as_f64().unwrap()).collect())
        .unwrap();
    let arg = format!("{},{},{}", inv[0], inv[1], inv[2]);
    let o = relkin(&["geometry", "--a", "0.7,-0.2,0.4", "--b", &arg], dir.path());
    assert!(o.status.success());
    let r = &json(&dir.path().join("geometry.json"))["result"];
    for k in ["p", "y", "t"] {
        assert!(r[k].as_f64().unwrap().abs() < 1e-12);
    }
}
