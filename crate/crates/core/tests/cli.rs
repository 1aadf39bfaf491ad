use std::fs;
use std::process::{Command, Output};

use noncausal_ar::estimation::lse_with_targets;
use noncausal_ar::export::estimation_csv_string;
use noncausal_ar::simulate::simulate_stationary;
use noncausal_ar::ModelSpec;

fn ncar(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ncar"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn json(o: &Output) -> serde_json::Value {
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&o.stdout).unwrap()
}

#[test]
fn classify_scalar_and_second_order() {
    let v = json(&ncar(&["classify", "--theta", "2"]));
    assert_eq!(v["region"], "PurelyExplosive");
    assert!(v.get("closed_form_region").is_none());
    let v = json(&ncar(&["classify", "--theta", "0.5,0.3"]));
    assert_eq!(v["region"], "Stable");
    assert_eq!(v["closed_form_region"], "Stable");
    assert_eq!(ncar(&["classify", "--theta", "nan"]).status.code(), Some(2));
    assert_eq!(ncar(&["classify"]).status.code(), Some(2));
}

#[test]
fn moments_output_carries_values_and_residuals() {
    let v = json(&ncar(&["moments", "--theta", "2", "--sigma2", "1"]));
    assert!((v["gamma"][0].as_f64().unwrap() - 1.0 / 3.0).abs() < 1e-12);
    assert!((v["gamma"][1].as_f64().unwrap() - 1.0 / 6.0).abs() < 1e-12);
    assert_eq!(v["theta_star"][0], 0.5);
    let v = json(&ncar(&["moments", "--theta", "0,4", "--sigma2", "1"]));
    for key in ["yule_walker", "gamma_form", "sigma_form", "restricted_yule_walker"] {
        assert!(v["residuals"][key].as_f64().unwrap() <= 1e-9, "{key}");
    }
    assert_eq!(v["effective_config"]["command"], "moments");
}

#[test]
fn estimate_from_simulated_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sim");
    let o = ncar(&[
        "simulate", "--theta", "2", "--n", "10000", "--seed", "3", "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let meta: serde_json::Value = serde_json::from_slice(&fs::read(out.join("path.json")).unwrap()).unwrap();
    assert_eq!(meta["seed"], 3);
    assert_eq!(meta["config"]["n"], 10000);

    let csv = out.join("path.csv");
    let v = json(&ncar(&["estimate", "--path", csv.to_str().unwrap(), "--theta", "2"]));
    let hat = v["theta_hat"][0].as_f64().unwrap();
    assert!((hat - 0.5).abs() <= 0.05, "{hat}");
    assert_eq!(v["gram_singular"], false);

    // the inline form simulates the same path and gives the same CSV row
    let inline = ncar(&["estimate", "--theta", "2", "--n", "10000", "--seed", "3", "--format", "csv"]);
    assert!(inline.status.success());
    let spec = ModelSpec::gaussian(vec![2.0], 1.0).unwrap();
    let path = simulate_stationary(&spec, 10000, 3, 1e-12).unwrap();
    let lib = lse_with_targets(path.view(), &[2.0], &[0.5]).unwrap();
    assert_eq!(String::from_utf8(inline.stdout).unwrap(), estimation_csv_string(&lib).unwrap());
}

#[test]
fn estimate_singular_and_short_files() {
    let dir = tempfile::tempdir().unwrap();
    let zero = dir.path().join("zero.csv");
    let mut text = String::from("k,Y_k,Z_k\n0,0.0,\n");
    for k in 1..=20 {
        text.push_str(&format!("{k},0.0,0.0\n"));
    }
    fs::write(&zero, text).unwrap();
    let v = json(&ncar(&["estimate", "--path", zero.to_str().unwrap()]));
    assert_eq!(v["gram_singular"], true);
    assert_eq!(v["theta_hat"], serde_json::json!([0.0]));

    let short = dir.path().join("short.csv");
    fs::write(&short, "k,Y_k,Z_k\n-1,1.0,\n0,2.0,\n1,3.0,0.5\n").unwrap();
    assert_eq!(ncar(&["estimate", "--path", short.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn forward_equiv_report() {
    let v = json(&ncar(&["forward-equiv", "--theta", "0.5", "--n", "1000", "--seed", "5", "--tol", "1e-12"]));
    assert!(v["max_discrepancy"].as_f64().unwrap() <= 1e-10);
    assert_eq!(v["within_bound"], true);
}

#[test]
fn json_config_and_mc_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("mc.json");
    fs::write(
        &cfg,
        r#"{"theta": [2.0], "n": 300, "replications": 150, "seed": 9, "statistic": {"kind": "mean_clt_y"}}"#,
    )
    .unwrap();
    let out = dir.path().join("mc");
    let o = ncar(&["mc", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    let summary = json(&o);
    assert_eq!(summary["replications"], "150");
    let report: serde_json::Value = serde_json::from_slice(&fs::read(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["samples"].as_array().unwrap().len(), 150);
    assert_eq!(report["effective_config"]["seed"], 9);
    let samples = fs::read_to_string(out.join("samples.csv")).unwrap();
    assert_eq!(samples.lines().count(), 151);
    // a config written for another command is rejected
    let other = dir.path().join("other.toml");
    fs::write(&other, "command = \"simulate\"\ntheta = [2.0]\n").unwrap();
    assert_eq!(ncar(&["--config", other.to_str().unwrap(), "moments"]).status.code(), Some(2));
}
