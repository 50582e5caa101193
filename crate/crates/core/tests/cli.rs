use std::path::Path;
use std::process::{Command, Output};

use minp::cli::TestReport;
use minp::linalg::RngStream;
use minp::mcstudy::{gen_linear, DgpSpec};
use minp::models::Family;

fn minp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_minp")).args(args).output().expect("binary runs")
}

fn stderr_json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stderr).unwrap_or_else(|e| panic!("stderr is not JSON ({e}): {}", String::from_utf8_lossy(&out.stderr)))
}

fn write_linear(path: &Path, gamma: Vec<f64>, seed: u64) {
    let data = gen_linear(&DgpSpec::new(Family::Linear, 120, gamma), RngStream::new(seed, 0)).unwrap();
    let mut w = csv::Writer::from_path(path).unwrap();
    w.write_record(["y", "z1", "z2", "x1"]).unwrap();
    for n in 0..data.len() {
        let row = [data.y()[n], data.z().get(n, 0), data.z().get(n, 1), data.x().get(n, 0)];
        w.write_record(row.iter().map(|v| v.to_string())).unwrap();
    }
    w.flush().unwrap();
}

fn test_args<'a>(input: &'a str, output: &'a str, boot: &'a str) -> Vec<&'a str> {
    vec!["test", "--input", input, "--model", "linear", "--k", "2", "--boot", boot, "--stepdown", "--output", output]
}

#[test]
fn test_report_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("d.csv");
    let output = dir.path().join("r.json");
    write_linear(&input, vec![0.8, 0.0], 1);
    let out = minp(&test_args(input.to_str().unwrap(), output.to_str().unwrap(), "199"));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let text = std::fs::read_to_string(&output).unwrap();
    let report: TestReport = serde_json::from_str(&text).unwrap();
    assert_eq!(serde_json::to_string_pretty(&report).unwrap(), text);
    assert_eq!(report.global.len(), 3);
    assert_eq!(report.stepdown.len(), 3);
    assert_eq!(report.fit.observations, 120);
    // A strong first coefficient is found by every variant.
    for g in &report.global {
        assert!(g.reject, "{:?}", g);
    }
    for s in &report.stepdown {
        assert!(s.result.k_hat.contains(&0));
    }
}

#[test]
fn same_seed_same_report() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("d.csv");
    write_linear(&input, vec![0.2, 0.1], 2);
    let reports: Vec<TestReport> = ["a.json", "b.json"]
        .iter()
        .map(|name| {
            let output = dir.path().join(name);
            let out = minp(&test_args(input.to_str().unwrap(), output.to_str().unwrap(), "99"));
            assert!(out.status.success());
            serde_json::from_str(&std::fs::read_to_string(&output).unwrap()).unwrap()
        })
        .collect();
    assert_eq!(reports[0].global, reports[1].global);
    assert_eq!(reports[0].pvalues, reports[1].pvalues);
}

#[test]
fn tiny_pool_never_rejects() {
    // With B = 10 and alpha = 0.05, floor(alpha B) = 0, so no critical value exists.
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("d.csv");
    let output = dir.path().join("r.json");
    write_linear(&input, vec![2.0, 2.0], 3);
    let out = minp(&test_args(input.to_str().unwrap(), output.to_str().unwrap(), "10"));
    assert!(out.status.success());
    let report: TestReport = serde_json::from_str(&std::fs::read_to_string(&output).unwrap()).unwrap();
    for g in &report.global {
        assert_eq!(g.c_m, 0.0);
        assert!(!g.reject);
    }
    for s in &report.stepdown {
        assert!(s.result.k_hat.is_empty());
    }
}

#[test]
fn data_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let output = dir.path().join("r.json");

    let missing = dir.path().join("missing.csv");
    std::fs::write(&missing, "y,z1,x1\n1,2,3\n4,5,6\n").unwrap();
    let out = minp(&test_args(missing.to_str().unwrap(), output.to_str().unwrap(), "99"));
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["kind"], "data");

    let corrupt = dir.path().join("corrupt.csv");
    write_linear(&corrupt, vec![0.0, 0.0], 4);
    let mut text = std::fs::read_to_string(&corrupt).unwrap();
    text = text.replacen('\n', "\nnot,a,number,row\n", 1);
    std::fs::write(&corrupt, text).unwrap();
    let out = minp(&test_args(corrupt.to_str().unwrap(), output.to_str().unwrap(), "99"));
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_json(&out);
    assert_eq!(err["kind"], "data");
    assert!(err["message"].as_str().unwrap().contains("row 1"), "{err}");

    let out = minp(&["test", "--input", "/nonexistent/file.csv", "--model", "rc", "--k", "1", "--output", "x.json"]);
    assert_eq!(out.status.code(), Some(2));

    // Unknown flags are rejected by the argument parser.
    assert_eq!(minp(&["project", "--cov", "1"]).status.code(), Some(2));
}

#[test]
fn numerical_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let output = dir.path().join("r.json");
    // z2 duplicates the covariate, so the unrestricted design is singular.
    let collinear = dir.path().join("collinear.csv");
    let mut text = String::from("y,z1,z2,x1\n");
    for n in 0..60 {
        let x = (n as f64 * 0.37).sin();
        text.push_str(&format!("{},{},{x},{x}\n", (n as f64 * 1.3).cos(), (n as f64 * 0.11).cos()));
    }
    std::fs::write(&collinear, text).unwrap();
    let out = minp(&test_args(collinear.to_str().unwrap(), output.to_str().unwrap(), "99"));
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(stderr_json(&out)["kind"], "numerical");

    let out = minp(&["project", "--cov", "1,2;2,1", "--u", "1,1"]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(stderr_json(&out)["error"], "NotPositiveDefinite");
}

#[test]
fn project_prints_projection() {
    let out = minp(&["project", "--cov", "1,0.9;0.9,1", "--u", "1,-1"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((v["t_c"].as_f64().unwrap() - 19.0).abs() < 1e-9);
    assert_eq!(v["active_set"], serde_json::json!([1]));
    assert!((v["u_bar"][0].as_f64().unwrap() - 1.9).abs() < 1e-12);

    let out = minp(&["project", "--cov", "1,0;0,1", "--u", "-1,-2"]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["t_c"].as_f64().unwrap(), 0.0);
    assert_eq!(v["active_set"], serde_json::json!([0, 1]));
}

#[test]
fn weights_from_file() {
    let dir = tempfile::tempdir().unwrap();
    let cov = dir.path().join("cov.txt");
    std::fs::write(&cov, "1,0\n0,1\n").unwrap();
    let out = minp(&["weights", "--cov", cov.to_str().unwrap(), "--draws", "100000", "--seed", "5"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let w: Vec<f64> = v["w"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    for (a, b) in w.iter().zip([0.25, 0.5, 0.25]) {
        assert!((a - b).abs() < 0.006, "{w:?}");
    }
}

fn study_json(replications: usize) -> String {
    format!(
        r#"[{{"spec": {{"family": "linear", "T": 60, "gamma_true": [0.0, 0.0]}}, "replications": {replications}, "B": 99, "alpha": 0.05, "seed": 9}},
           {{"spec": {{"family": {{"arch": {{"lags": 2}}}}, "T": 60, "gamma_true": [0.3, 0.0]}}, "replications": {replications}, "B": 99, "alpha": 0.05, "seed": 9}}]"#
    )
}

#[test]
fn simulate_is_deterministic_across_workers() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("study.json");
    std::fs::write(&config, study_json(12)).unwrap();
    let tables: Vec<String> = [("1", "a.csv"), ("3", "b.csv")]
        .iter()
        .map(|(workers, name)| {
            let out_path = dir.path().join(name);
            let out = minp(&["simulate", "--config", config.to_str().unwrap(), "--out", out_path.to_str().unwrap(), "--workers", workers]);
            assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
            std::fs::read_to_string(out_path).unwrap()
        })
        .collect();
    assert_eq!(tables[0], tables[1]);
    assert_eq!(tables[0].lines().count(), 3);
    assert!(tables[0].starts_with("family,gamma,T,"));
}

#[test]
fn simulate_rejects_zero_replications() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("study.json");
    std::fs::write(&config, study_json(0)).unwrap();
    let out_path = dir.path().join("t.csv");
    let out = minp(&["simulate", "--config", config.to_str().unwrap(), "--out", out_path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_json(&out);
    assert_eq!(err["error"], "ConfigInvalid");
    assert!(err["message"].as_str().unwrap().contains("replications"));
}
