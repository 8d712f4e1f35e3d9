use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn diffnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_diffnet"))
        .args(args)
        .output()
        .expect("spawn diffnet")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn simulate(dir: &Path, p: usize, n: usize) {
    ok(&diffnet(&[
        "simulate",
        "--p",
        &p.to_string(),
        "--n",
        &n.to_string(),
        "--seed",
        "5",
        "--out",
        dir.to_str().unwrap(),
    ]));
}

/// Small deterministic generator so the tests need no RNG crate.
struct Lcg(u64);

impl Lcg {
    fn next(&mut self) -> f64 {
        self.0 = self.0.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((self.0 >> 11) as f64) / ((1u64 << 53) as f64)
    }
    fn normal(&mut self) -> f64 {
        let (u, v) = (self.next().max(1e-300), self.next());
        (-2.0 * u.ln()).sqrt() * (2.0 * std::f64::consts::PI * v).cos()
    }
}

#[test]
fn simulate_then_test_writes_fits_and_edges() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), 8, 120);
    let g1 = dir.path().join("group1.csv");
    let header = fs::read_to_string(&g1).unwrap().lines().next().unwrap().to_string();
    assert_eq!(header, "X1,X2,X3,X4,X5,X6,X7,X8,W1,W2");
    let out = dir.path().join("res");
    ok(&diffnet(&[
        "test",
        "--group1",
        g1.to_str().unwrap(),
        "--group2",
        dir.path().join("group2.csv").to_str().unwrap(),
        "--covariates",
        "W1,W2",
        "--estimator",
        "gl",
        "--n-lambda",
        "15",
        "--out",
        out.to_str().unwrap(),
    ]));
    let tsv = fs::read_to_string(out.join("edges.tsv")).unwrap();
    let mut lines = tsv.lines();
    assert_eq!(lines.next().unwrap(), "j\tk\tS\tdof\tp\tq\trejected");
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 8 * 7 / 2);
    for r in &rows {
        let f: Vec<&str> = r.split('\t').collect();
        assert_eq!(f.len(), 7);
        assert_eq!(f[3], "3");
        let p: f64 = f[4].parse().unwrap();
        let q: f64 = f[5].parse().unwrap();
        assert!((0.0..=1.0).contains(&p) && q >= p);
    }
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("fits.json")).unwrap()).unwrap();
    assert_eq!(json["estimator"], "NeighborhoodGl");
    assert_eq!(json["d"], 3);
    assert_eq!(json["fits"][0].as_array().unwrap().len(), 8);
    assert_eq!(json["network"]["anti_conservative"], true);
    assert!(json["fits"][1][0]["lambda"].is_number());
}

#[test]
fn output_does_not_depend_on_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), 7, 100);
    let run = |threads: &str| {
        let out = dir.path().join(format!("t{threads}"));
        ok(&diffnet(&[
            "test",
            "--group1",
            dir.path().join("group1.csv").to_str().unwrap(),
            "--group2",
            dir.path().join("group2.csv").to_str().unwrap(),
            "--covariates",
            "W1,W2",
            "--n-lambda",
            "12",
            "--threads",
            threads,
            "--seed",
            "11",
            "--out",
            out.to_str().unwrap(),
        ]));
        (
            fs::read(out.join("fits.json")).unwrap(),
            fs::read(out.join("edges.tsv")).unwrap(),
        )
    };
    let one = run("1");
    let eight = run("8");
    assert!(one.0 == eight.0, "fits differ between 1 and 8 threads");
    assert!(one.1 == eight.1, "edges differ between 1 and 8 threads");
}

#[test]
fn config_file_supplies_defaults_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), 6, 150);
    let cfg = dir.path().join("run.cfg");
    fs::write(
        &cfg,
        format!(
            "# analysis settings\ngroup1 = {}\ngroup2 = {}\ncovariates = W1,W2\nestimator = ols\nkappa = 0.2\n",
            dir.path().join("group1.csv").display(),
            dir.path().join("group2.csv").display()
        ),
    )
    .unwrap();
    let out = dir.path().join("o1");
    let res = diffnet(&["test", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    ok(&res);
    assert!(String::from_utf8_lossy(&res.stdout).contains("at FDR 0.2"));
    let res = diffnet(&[
        "test",
        "--config",
        cfg.to_str().unwrap(),
        "--kappa",
        "0.01",
        "--out",
        out.to_str().unwrap(),
    ]);
    ok(&res);
    assert!(String::from_utf8_lossy(&res.stdout).contains("at FDR 0.01"));
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("fits.json")).unwrap()).unwrap();
    assert_eq!(json["estimator"], "NeighborhoodOls");
}

#[test]
fn single_file_split_by_group_column() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = Lcg(3);
    let mut csv = String::from("a,b,c,d,age,cohort\n");
    for i in 0..160 {
        let label = if i % 2 == 0 { "case" } else { "control" };
        let age = rng.next();
        let b = rng.normal();
        let a = 0.5 * b + rng.normal();
        csv.push_str(&format!(
            "{a},{b},{},{},{age},{label}\n",
            rng.normal(),
            rng.normal()
        ));
    }
    let path = dir.path().join("all.csv");
    fs::write(&path, csv).unwrap();
    let out = dir.path().join("o");
    ok(&diffnet(&[
        "test",
        "--group1",
        path.to_str().unwrap(),
        "--group-column",
        "cohort",
        "--group-values",
        "case,control",
        "--covariates",
        "age",
        "--estimator",
        "sm-lowdim",
        "--out",
        out.to_str().unwrap(),
    ]));
    let tsv = fs::read_to_string(out.join("edges.tsv")).unwrap();
    assert_eq!(tsv.lines().count(), 1 + 6);
    assert!(tsv.lines().nth(1).unwrap().starts_with("a\tb\t"));
}

#[test]
fn unadjusted_baseline_without_covariates() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), 6, 120);
    let out = dir.path().join("o");
    ok(&diffnet(&[
        "test",
        "--group1",
        dir.path().join("group1.csv").to_str().unwrap(),
        "--group2",
        dir.path().join("group2.csv").to_str().unwrap(),
        "--covariates",
        "W1,W2",
        "--basis",
        "none",
        "--estimator",
        "ols",
        "--out",
        out.to_str().unwrap(),
    ]));
    let tsv = fs::read_to_string(out.join("edges.tsv")).unwrap();
    assert!(tsv.lines().skip(1).all(|l| l.split('\t').nth(3) == Some("1")));
}

#[test]
fn errors_exit_nonzero_with_context() {
    let dir = tempfile::tempdir().unwrap();
    let missing = diffnet(&[
        "test",
        "--group1",
        "/nonexistent/g1.csv",
        "--group2",
        "/nonexistent/g2.csv",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(!missing.status.success());
    assert!(String::from_utf8_lossy(&missing.stderr).contains("/nonexistent/g1.csv"));

    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "a,b,age\n1,2,0.1\n3,oops,0.2\n4,5,0.3\n").unwrap();
    let res = diffnet(&[
        "test",
        "--group1",
        bad.to_str().unwrap(),
        "--group2",
        bad.to_str().unwrap(),
        "--covariates",
        "age",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("oops"));

    let other = dir.path().join("other.csv");
    fs::write(&other, "a,c,age\n1,2,0.1\n3,4,0.2\n4,5,0.3\n").unwrap();
    let res = diffnet(&[
        "test",
        "--group1",
        other.to_str().unwrap(),
        "--group2",
        dir.path().join("missing-col.csv").to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(!res.status.success());

    let small = dir.path().join("small.csv");
    fs::write(&small, "a,b,c,age\n1,2,3,0.1\n3,4,1,0.2\n4,5,2,0.3\n").unwrap();
    let res = diffnet(&[
        "test",
        "--group1",
        small.to_str().unwrap(),
        "--group2",
        small.to_str().unwrap(),
        "--covariates",
        "age",
        "--estimator",
        "ols",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("insufficient samples"));
}

#[test]
fn wide_input_with_145_nodes_completes() {
    let dir = tempfile::tempdir().unwrap();
    let p = 145;
    let n = 90;
    let mut rng = Lcg(99);
    for (name, shift) in [("g1.csv", 0.0), ("g2.csv", 0.3)] {
        let mut csv = (1..=p).map(|k| format!("gene{k}")).collect::<Vec<_>>().join(",");
        csv.push_str(",age\n");
        for _ in 0..n {
            let age = rng.next();
            let mut row: Vec<f64> = (0..p).map(|_| rng.normal()).collect();
            row[0] += (0.4 + shift * age) * row[1];
            for v in &row {
                csv.push_str(&format!("{v},"));
            }
            csv.push_str(&format!("{age}\n"));
        }
        fs::write(dir.path().join(name), csv).unwrap();
    }
    let out = dir.path().join("o");
    ok(&diffnet(&[
        "test",
        "--group1",
        dir.path().join("g1.csv").to_str().unwrap(),
        "--group2",
        dir.path().join("g2.csv").to_str().unwrap(),
        "--covariates",
        "age",
        "--n-lambda",
        "10",
        "--cv-folds",
        "5",
        "--out",
        out.to_str().unwrap(),
    ]));
    let tsv = fs::read_to_string(out.join("edges.tsv")).unwrap();
    assert_eq!(tsv.lines().count(), 1 + p * (p - 1) / 2);
}

fn keys(v: &serde_json::Value) -> Vec<String> {
    let mut k: Vec<String> = v.as_object().expect("object").keys().cloned().collect();
    k.sort();
    k
}

#[test]
fn fit_writes_both_groups() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), 6, 100);
    let out = dir.path().join("fits.json");
    ok(&diffnet(&[
        "fit",
        "--group1",
        dir.path().join("group1.csv").to_str().unwrap(),
        "--group2",
        dir.path().join("group2.csv").to_str().unwrap(),
        "--covariates",
        "W1,W2",
        "--n-lambda",
        "10",
        "--out",
        out.to_str().unwrap(),
    ]));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(keys(&json), ["basis", "d", "estimator", "fits", "node_names"]);
    let fits = json["fits"].as_array().unwrap();
    assert_eq!(fits.len(), 2);
    for group in fits {
        let nodes = group.as_array().unwrap();
        assert_eq!(nodes.len(), 6);
        for node in nodes {
            assert_eq!(node["blocks"].as_array().unwrap().len(), 5);
            assert_eq!(node["blocks"][0]["estimate"].as_array().unwrap().len(), 3);
        }
    }
}

#[test]
fn output_schema_is_stable() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), 5, 100);
    let out = dir.path().join("res");
    ok(&diffnet(&[
        "test",
        "--group1",
        dir.path().join("group1.csv").to_str().unwrap(),
        "--group2",
        dir.path().join("group2.csv").to_str().unwrap(),
        "--covariates",
        "W1,W2",
        "--n-lambda",
        "10",
        "--out",
        out.to_str().unwrap(),
    ]));
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("fits.json")).unwrap()).unwrap();
    assert_eq!(
        keys(&json),
        ["basis", "d", "directional", "estimator", "fits", "network", "node_names"]
    );
    assert_eq!(keys(&json["fits"][0][0]), ["blocks", "converged", "lambda", "node", "omega"]);
    assert_eq!(keys(&json["fits"][0][0]["blocks"][0]), ["covariance", "estimate", "k"]);
    assert_eq!(
        keys(&json["network"]),
        ["anti_conservative", "edges", "kappa", "q_values", "rejected"]
    );
    assert_eq!(
        keys(&json["directional"][0]),
        ["direction", "dof", "j", "k", "kind", "p_value", "statistic"]
    );
    let simulated: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("graph.json")).unwrap()).unwrap();
    assert_eq!(keys(&simulated), ["a_star", "edges", "num_nodes", "sigma", "theta"]);
}

#[test]
fn kappa_one_rejects_every_edge() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), 6, 100);
    let out = dir.path().join("res");
    let run = diffnet(&[
        "test",
        "--group1",
        dir.path().join("group1.csv").to_str().unwrap(),
        "--group2",
        dir.path().join("group2.csv").to_str().unwrap(),
        "--covariates",
        "W1,W2",
        "--n-lambda",
        "10",
        "--kappa",
        "1",
        "--out",
        out.to_str().unwrap(),
    ]);
    ok(&run);
    assert!(String::from_utf8_lossy(&run.stdout).contains("15 edges tested, 15 rejected"));
    let tsv = fs::read_to_string(out.join("edges.tsv")).unwrap();
    assert!(tsv.lines().skip(1).all(|l| l.ends_with("\ttrue")));
}

#[test]
fn selfcheck_passes() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("selfcheck.json");
    let out = diffnet(&["selfcheck", "--out", report.to_str().unwrap()]);
    ok(&out);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(!stdout.contains("FAIL"), "{stdout}");
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(report).unwrap()).unwrap();
    assert!(json.as_array().unwrap().iter().all(|c| c["pass"] == true));
}

#[test]
fn table1_has_method_by_k_rows_and_n_columns() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("table1.tsv");
    ok(&diffnet(&[
        "table1",
        "--reps",
        "1",
        "--ns",
        "80,90",
        "--settings",
        "linear",
        "--out",
        out.to_str().unwrap(),
    ]));
    let text = fs::read_to_string(out).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "setting\tmethod\tk\tn=80\tse_n=80\tn=90\tse_n=90"
    );
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split('\t').collect()).collect();
    assert_eq!(rows.len(), 3 * 4);
    for method in ["unadjusted", "linear-adjusted", "cubic-adjusted"] {
        let ks: Vec<&str> = rows.iter().filter(|r| r[1] == method).map(|r| r[2]).collect();
        assert_eq!(ks, ["1", "2", "3", ">=4"]);
    }
    for r in &rows {
        assert_eq!(r.len(), 7);
        for v in &r[3..] {
            let x: f64 = v.parse().unwrap();
            assert!((0.0..=1.0).contains(&x));
        }
    }
}
