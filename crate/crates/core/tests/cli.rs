use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn depfdr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_depfdr"))
        .args(args)
        .output()
        .unwrap()
}

fn json(out: &Output) -> serde_json::Value {
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn sample_matrix_reports_bounds() {
    let v = json(&depfdr(&[
        "sample-matrix",
        "--seed",
        "3",
        "--lambda",
        "0.5",
        "--mu",
        "0.1",
    ]));
    assert!(v["slem"].as_f64().unwrap() >= 0.5);
    assert!(v["tlem"].as_f64().unwrap() >= 0.1);
    assert_eq!(v["matrix"].as_array().unwrap().len(), 5);
    assert_eq!(v["null_states"], serde_json::json!([1, 2]));
}

#[test]
fn config_errors_exit_with_two() {
    let out = depfdr(&[
        "sample-matrix",
        "--seed",
        "1",
        "--lambda",
        "0.5",
        "--mu",
        "0.6",
    ]);
    assert_eq!(out.status.code(), Some(2));
    let out = depfdr(&["run", "--out", "x"]);
    assert_eq!(out.status.code(), Some(2), "missing seed");
}

#[test]
fn budget_errors_exit_with_three() {
    let out = depfdr(&[
        "sample-matrix",
        "--seed",
        "1",
        "--lambda",
        "0.999",
        "--mu",
        "0.99",
        "--max-attempts",
        "3",
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn simulate_signal_from_a_matrix_file() {
    let dir = tempfile::tempdir().unwrap();
    let chain = dir.path().join("chain.json");
    let out = depfdr(&[
        "sample-matrix",
        "--seed",
        "4",
        "--lambda",
        "0.3",
        "--out",
        chain.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let theta = dir.path().join("theta.bin");
    let v = json(&depfdr(&[
        "simulate-signal",
        "--matrix-file",
        chain.to_str().unwrap(),
        "--m",
        "5000",
        "--w",
        "2",
        "--seed",
        "1",
        "--theta-out",
        theta.to_str().unwrap(),
    ]));
    let bits = fs::read(&theta).unwrap();
    assert_eq!(bits.len(), 5000);
    let ones = bits.iter().filter(|&&b| b == 1).count() as f64 / 5000.0;
    assert_eq!(v["psig_hat"].as_f64().unwrap(), ones);
    assert_eq!(v["mean"][1][2].as_f64().unwrap(), 1.0);
    assert_eq!(v["second"][0].as_array().unwrap().len(), 5);
}

#[test]
fn test_subcommand_counts_outcomes() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("q.csv");
    fs::write(&input, "value,eta\n0.9,1\n0.5,0\n0.1,0\n").unwrap();
    let decisions = dir.path().join("d.csv");
    let v = json(&depfdr(&[
        "test",
        "--input",
        input.to_str().unwrap(),
        "--procedure",
        "bbh",
        "--alpha",
        "0.2",
        "--truth",
        "eta",
        "--decisions",
        decisions.to_str().unwrap(),
    ]));
    assert_eq!(v["rejections"], 1);
    assert_eq!(v["fdp"], 0.0);
    assert_eq!(v["ntd"], 1);
    assert_eq!(
        fs::read_to_string(&decisions).unwrap(),
        "index,value,reject\n0,0.9,1\n1,0.5,0\n2,0.1,0\n"
    );

    fs::write(&input, "p\n0.01\n0.04\n0.9\n").unwrap();
    let v = json(&depfdr(&[
        "test",
        "--input",
        input.to_str().unwrap(),
        "--column",
        "p",
        "--procedure",
        "bh",
        "--alpha",
        "0.15",
    ]));
    assert_eq!(v["rejections"], 2);
    assert_eq!(v["threshold"], 0.04);
}

fn run_small(dir: &Path) -> Output {
    depfdr(&[
        "run",
        "--seed",
        "11",
        "--preset",
        "moderate-slem",
        "--m",
        "3000",
        "--reps",
        "5",
        "--epsilon",
        "1,2",
        "--alpha",
        "0.2",
        "--density-points",
        "32",
        "--out",
        dir.to_str().unwrap(),
        "--dump-posteriors",
        dir.join("post.csv").to_str().unwrap(),
    ])
}

#[test]
fn run_then_density_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_small(dir.path());
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let records = fs::read_to_string(dir.path().join("records.csv")).unwrap();
    assert_eq!(records.lines().count(), 11);
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["w"], 3);
    assert_eq!(summary["cells"].as_array().unwrap().len(), 2);
    let post = fs::read_to_string(dir.path().join("post.csv")).unwrap();
    assert!(post.starts_with("t,eta,x,logit,posterior,p_value\n"));
    assert_eq!(post.lines().count(), 3001);

    let dens = dir.path().join("again.csv");
    let out = depfdr(&[
        "density",
        "--records",
        dir.path().join("records.csv").to_str().unwrap(),
        "--points",
        "32",
        "--out",
        dens.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    assert_eq!(
        fs::read(dens).unwrap(),
        fs::read(dir.path().join("densities.csv")).unwrap()
    );
}

#[test]
fn oracle_instance() {
    let dir = tempfile::tempdir().unwrap();
    let inst = dir.path().join("i.json");
    fs::write(
        &inst,
        r#"{"pi": [0.5, 0.3, 0.2], "matrix": [[0.5, 0.3, 0.2], [0.5, 0.3, 0.2], [0.5, 0.3, 0.2]],
            "null_states": [1], "x": [0.3, -1.0, 2.5], "epsilon": 1.0}"#,
    )
    .unwrap();
    let v = json(&depfdr(&["oracle", "--instance", inst.to_str().unwrap()]));
    assert!(v["brute_force_max_diff"].as_f64().unwrap() < 1e-12);
    // Independent sites: Bayes rule with prior 0.5 at x = 0.3 and eps = 1.
    let l1 = -0.5 * (0.3f64 - 1.0).powi(2);
    let l0 = -0.5 * 0.3f64.powi(2);
    let expect = 1.0 / (1.0 + (l0 - l1).exp());
    assert!((v["probs"][0].as_f64().unwrap() - expect).abs() < 1e-12);
}
