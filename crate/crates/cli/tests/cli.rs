use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn countvb(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_countvb"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn simulate(dir: &Path, extra: &[&str]) -> std::path::PathBuf {
    let path = dir.join("data.csv");
    let mut args = vec!["simulate", "--output", s(&path)];
    args.extend_from_slice(extra);
    let out = countvb(&args);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    path
}

#[test]
fn simulate_is_seeded() {
    let a = countvb(&["simulate", "--n", "50", "--seed", "7"]);
    let b = countvb(&["simulate", "--n", "50", "--seed", "7"]);
    let c = countvb(&["simulate", "--n", "50", "--seed", "8"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    assert_ne!(a.stdout, c.stdout);
    let text = String::from_utf8(a.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("y,x1,x2"));
    assert_eq!(lines.count(), 50);
}

#[test]
fn fit_writes_result_and_curves_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), &["--seed", "1"]);
    let (o1, o2) = (dir.path().join("a"), dir.path().join("b"));
    for o in [&o1, &o2] {
        let out = countvb(&["fit", "--input", s(&data), "--output", s(o)]);
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    let json = fs::read(o1.join("fit.json")).unwrap();
    assert_eq!(json, fs::read(o2.join("fit.json")).unwrap());
    let v: serde_json::Value = serde_json::from_slice(&json).unwrap();
    assert_eq!(v["result"]["converged"], true);
    let iterations = v["result"]["iterations"].as_u64().unwrap() as usize;
    assert_eq!(
        v["result"]["elbo_trace"].as_array().unwrap().len(),
        iterations
    );

    let curves = fs::read_to_string(o1.join("curves.csv")).unwrap();
    let rows: Vec<&str> = curves.lines().skip(1).collect();
    assert_eq!(rows.len(), 400);
    for row in rows {
        let f: Vec<&str> = row.split(',').collect();
        let (lo, mean, hi): (f64, f64, f64) = (
            f[3].parse().unwrap(),
            f[2].parse().unwrap(),
            f[4].parse().unwrap(),
        );
        assert!(lo < mean && mean < hi, "{row}");
        // 17 significant digits.
        assert_eq!(
            f[1].split('e')
                .next()
                .unwrap()
                .replace(['.', '-'], "")
                .len(),
            17
        );
    }
}

#[test]
fn fit_reports_non_convergence_with_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), &[]);
    let out = countvb(&[
        "fit",
        "--input",
        s(&data),
        "--output",
        s(&dir.path().join("o")),
        "--max-iter",
        "3",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn malformed_csv_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("bad.csv");
    fs::write(&data, "y,x1,x2\n1,0.1,0.2\n2,0.3,0.4\n3,abc,0.5\n").unwrap();
    let out = countvb(&[
        "fit",
        "--input",
        s(&data),
        "--output",
        s(&dir.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 4"), "{err}");
}

#[test]
fn config_selects_columns_family_and_grouping() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("g.csv");
    let mut text = String::from("count,t,site\n");
    for i in 0..300 {
        let t = i as f64 / 300.0;
        let site = ["a", "b", "c", "d", "e"][i % 5];
        let y = 1 + (3.0 * (6.0 * t).sin().abs()) as u64 + (i % 5) as u64 / 2;
        text.push_str(&format!("{y},{t},{site}\n"));
    }
    fs::write(&data, text).unwrap();
    let config = dir.path().join("model.json");
    fs::write(
        &config,
        r#"{"response": "count", "predictors": ["t"], "smooths": [{"column": "t", "k": 8}],
            "group": "site", "family": "negbin", "hyper": {"kappa_max": 50}}"#,
    )
    .unwrap();
    let o = dir.path().join("o");
    let out = countvb(&[
        "fit",
        "--input",
        s(&data),
        "--config",
        s(&config),
        "--output",
        s(&o),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let v: serde_json::Value =
        serde_json::from_slice(&fs::read(o.join("fit.json")).unwrap()).unwrap();
    assert_eq!(v["family"], "negbin");
    assert_eq!(
        v["result"]["variances"]["blocks"].as_array().unwrap().len(),
        2
    );
    assert!(v["result"]["negbin"]["mu_kappa"].as_f64().unwrap() <= 50.0);

    fs::write(
        &config,
        r#"{"response": "count", "smooths": [{"column": "t", "k": 1}], "predictors": ["t"]}"#,
    )
    .unwrap();
    let out = countvb(&[
        "fit",
        "--input",
        s(&data),
        "--config",
        s(&config),
        "--output",
        s(&o),
    ]);
    assert_eq!(out.status.code(), Some(1));
    fs::write(&config, r#"{"response": "count", "colour": 1}"#).unwrap();
    let out = countvb(&[
        "fit",
        "--input",
        s(&data),
        "--config",
        s(&config),
        "--output",
        s(&o),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn fit_exports_sampler_draws() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), &["--n", "150"]);
    let samples = dir.path().join("draws.csv");
    let out = countvb(&[
        "fit",
        "--input",
        s(&data),
        "--k",
        "6",
        "--output",
        s(&dir.path().join("o")),
        "--mcmc-samples",
        s(&samples),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = fs::read_to_string(samples).unwrap();
    let header = text.lines().next().unwrap();
    assert!(header.starts_with("theta_0,"));
    assert!(header.ends_with("sigma2_1,sigma2_2"));
    assert_eq!(header.split(',').count(), 3 + 12 + 2);
    assert_eq!(text.lines().count(), 1 + 5000);
}

#[test]
fn stream_snapshot_count_and_fields() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), &["--movie", "--n", "437", "--seed", "3"]);
    let out_path = dir.path().join("s.ndjson");
    let out = countvb(&[
        "stream",
        "--input",
        s(&data),
        "--k",
        "10",
        "--n-warm",
        "100",
        "--snapshot-every",
        "25",
        "--f-update",
        "50",
        "--output",
        s(&out_path),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8_lossy(&out.stderr).contains("latency"));
    let text = fs::read_to_string(&out_path).unwrap();
    let lines: Vec<serde_json::Value> = text
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), (437 - 100) / 25 + 1);
    assert_eq!(lines[0]["n"], 100);
    assert_eq!(lines.last().unwrap()["n"], 100 + 13 * 25);
    let last = lines.last().unwrap();
    assert_eq!(last["mu"].as_array().unwrap().len(), 2 + 10);
    assert_eq!(last["sigma_diag"].as_array().unwrap().len(), 2 + 10);
    assert_eq!(last["grid"][0]["mean"].as_array().unwrap().len(), 200);
}

#[test]
fn stream_rejects_oversized_warmup() {
    let out = countvb(&[
        "stream",
        "--n",
        "50",
        "--n-warm",
        "100",
        "--output",
        "/dev/null",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("exceeds"));
}

#[test]
fn benchmark_writes_tables() {
    let dir = tempfile::tempdir().unwrap();
    let o = dir.path().join("bench");
    let args = [
        "benchmark",
        "--family",
        "negbin",
        "--replicates",
        "2",
        "--n",
        "200",
        "--k",
        "6",
        "--burn-in",
        "500",
        "--kept",
        "200",
        "--thin",
        "1",
        "--output",
        s(&o),
    ];
    let out = Command::new(env!("CARGO_BIN_EXE_countvb"))
        .args(args)
        .env("COUNTVB_THREADS", "2")
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let summary = fs::read_to_string(o.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().next(), Some("parameter,median,q1,q3"));
    assert_eq!(summary.lines().count(), 1 + 9 + 2 + 1);
    assert!(summary.contains("kappa,"));
    let accuracy = fs::read_to_string(o.join("accuracy.csv")).unwrap();
    assert_eq!(accuracy.lines().count(), 1 + 2 * 12);

    let again = dir.path().join("again");
    let mut args2 = args.to_vec();
    let last = args2.len() - 1;
    args2[last] = s(&again);
    assert!(countvb(&args2).status.success());
    assert_eq!(
        accuracy,
        fs::read_to_string(again.join("accuracy.csv")).unwrap()
    );
}
