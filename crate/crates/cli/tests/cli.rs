use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_isospec"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn zero_file(dir: &Path) -> PathBuf {
    write(dir, "zero.json", r#"{"format":1,"n":2,"kind":"zero"}"#)
}

fn diag_file(dir: &Path) -> PathBuf {
    write(dir, "diag.json", r#"{"format":1,"n":2,"kind":"constant_diagonal","diag":[0.0,10.0]}"#)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json_stdout(o: &Output) -> Value {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&o.stdout).unwrap()
}

fn lambdas(report: &Value) -> Vec<(f64, u64)> {
    report["groups"]
        .as_array()
        .unwrap()
        .iter()
        .map(|g| (g["lambda"].as_f64().unwrap(), g["k"].as_u64().unwrap()))
        .collect()
}

#[test]
fn spectrum_of_closed_forms() {
    let dir = tempfile::tempdir().unwrap();
    let r = json_stdout(&run(&["spectrum", s(&zero_file(dir.path()))]));
    let got = lambdas(&r);
    assert_eq!(got.len(), 3);
    for (i, (l, k)) in got.iter().enumerate() {
        assert_eq!(*k, 2);
        assert!((l - ((i + 1) as f64 * PI).powi(2)).abs() < 1e-6);
    }
    assert_eq!(r["potential_hash"].as_str().unwrap().len(), 64);

    let r = json_stdout(&run(&["spectrum", s(&diag_file(dir.path())), "--lambda-max", "60"]));
    assert_eq!(lambdas(&r).iter().map(|p| p.1).collect::<Vec<_>>(), vec![1, 1, 1, 1]);
}

#[test]
fn reports_are_deterministic_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let v = write(dir.path(), "f.json", r#"{"format":1,"n":2,"kind":"random_fourier","modes":3,"amplitude":2.0}"#);
    let a = run(&["spectrum", s(&v), "--seed", "5", "--lambda-max", "60"]);
    let b = run(&["spectrum", s(&v), "--seed", "5", "--lambda-max", "60", "--jobs", "1"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let other = run(&["spectrum", s(&v), "--seed", "6", "--lambda-max", "60"]);
    assert_ne!(a.stdout, other.stdout);
}

#[test]
fn config_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let v = zero_file(dir.path());
    let conf = write(dir.path(), "c.json", r#"{"steps": 2048, "lambda_max": 45}"#);
    let r = json_stdout(&run(&["spectrum", s(&v), "--config", s(&conf)]));
    assert_eq!(r["diagnostics"]["steps"], 2048);
    assert_eq!(lambdas(&r).len(), 2);
    let r = json_stdout(&run(&["spectrum", s(&v), "--config", s(&conf), "--steps", "1024"]));
    assert_eq!(r["diagnostics"]["steps"], 1024);
    let r = json_stdout(&run(&["spectrum", s(&v)]));
    assert_eq!(r["diagnostics"]["steps"], 4096);

    let bad = write(dir.path(), "bad.json", r#"{"stepz": 10}"#);
    assert_eq!(run(&["spectrum", s(&v), "--config", s(&bad)]).status.code(), Some(2));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let v = zero_file(dir.path());
    assert_eq!(run(&[]).status.code(), Some(1));
    assert_eq!(run(&["spectrum"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    assert_eq!(run(&["spectrum", s(&v), "--steps", "15"]).status.code(), Some(1));
    assert_eq!(run(&["spectrum", s(&v), "--jobs", "0"]).status.code(), Some(1));
    let broken = write(dir.path(), "broken.json", r#"{"format":1,"n":2,"kind":"constant_diagonal","diag":[0.0]}"#);
    let o = run(&["verify", s(&broken)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("diag"));
    assert_eq!(run(&["spectrum", s(&dir.path().join("missing.json"))]).status.code(), Some(2));
    let truncated = write(dir.path(), "t.json", r#"{"format":1,"n":2,"kind":"ze"#);
    assert_eq!(run(&["spectrum", s(&truncated)]).status.code(), Some(2));
}

#[test]
fn data_report_carries_group_data_and_residues() {
    let dir = tempfile::tempdir().unwrap();
    let r = json_stdout(&run(&["data", s(&diag_file(dir.path())), "--lambda-max", "30"]));
    let groups = r["groups"].as_array().unwrap();
    assert_eq!(groups.len(), 2);
    let g1 = &groups[0]["g_alpha"].as_array().unwrap()[0];
    assert!((g1[0].as_f64().unwrap() - 1.0 / (2.0 * PI * PI)).abs() < 1e-9);
    for key in ["S_alpha", "B_alpha", "F_alpha", "checks"] {
        assert!(groups[0].get(key).is_some(), "missing {key}");
    }
    assert_eq!(groups[0]["F_alpha"].as_array().unwrap().len(), 1);
    for res in r["residues"].as_array().unwrap() {
        assert!(res["relative_error"].as_f64().unwrap() < 1e-4);
    }
}

#[test]
fn transform_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let v = zero_file(dir.path());
    // identity target for V = 0, alpha = 1
    let b = 2.0 * PI * PI;
    let ident = write(dir.path(), "id.json", &format!(r#"{{"alpha":1,"B":[[{b},0],[0,0],[0,0],[{b},0]]}}"#));
    let out1 = dir.path().join("t1.json");
    let out2 = dir.path().join("t2.json");
    for out in [&out1, &out2] {
        let o = run(&["transform", s(&v), s(&ident), "--out", s(out), "--diagnostics", s(&dir.path().join("d.json"))]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let (t1, t2) = (std::fs::read(&out1).unwrap(), std::fs::read(&out2).unwrap());
    assert_eq!(t1, t2);
    let parsed: Value = serde_json::from_slice(&t1).unwrap();
    assert_eq!(parsed["kind"], "grid");
    assert_eq!(parsed["materialized_from"], "darboux");
    let max = parsed["values"]
        .as_array()
        .unwrap()
        .iter()
        .flat_map(|m| m.as_array().unwrap().iter().flat_map(|z| z.as_array().unwrap().iter().map(|x| x.as_f64().unwrap().abs())))
        .fold(0.0, f64::max);
    assert!(max < 1e-12, "identity transform moved V by {max}");

    // a norming change: the transformed file is isospectral with its base
    let change = write(dir.path(), "ch.json", &format!(r#"{{"alpha":1,"B":[[{b},0],[0,0],[0,0],[{},0]]}}"#, 4.0 * b));
    let out = dir.path().join("t3.json");
    assert!(run(&["transform", s(&v), s(&change), "--out", s(&out), "--diagnostics", s(&dir.path().join("d3.json"))]).status.success());
    let diag: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("d3.json")).unwrap()).unwrap();
    assert_eq!(diag["depth"], 1);
    assert!(diag["stages"][0]["boundary_residual"].as_f64().unwrap() < 1e-7);
    let base = lambdas(&json_stdout(&run(&["spectrum", s(&v)])));
    let moved = lambdas(&json_stdout(&run(&["spectrum", s(&out)])));
    assert_eq!(base.len(), moved.len());
    for (a, b) in base.iter().zip(&moved) {
        assert_eq!(a.1, b.1);
        assert!((a.0 - b.0).abs() < 1e-5, "{} vs {}", a.0, b.0);
    }

    // composed list of specs
    let list = write(
        dir.path(),
        "list.json",
        &format!(r#"[{}, {{"alpha":1,"B":[[{b},0],[0,0],[0,0],[{b},0]]}}]"#, std::fs::read_to_string(&change).unwrap()),
    );
    let o = run(&["transform", s(&v), s(&list), "--diagnostics", s(&dir.path().join("d4.json"))]);
    let back = json_stdout(&o);
    assert_eq!(back["depth"], 2);
    let max = back["values"]
        .as_array()
        .unwrap()
        .iter()
        .flat_map(|m| m.as_array().unwrap().iter().flat_map(|z| z.as_array().unwrap().iter().map(|x| x.as_f64().unwrap().abs())))
        .fold(0.0, f64::max);
    assert!(max < 1e-4, "round trip left {max}");
}

#[test]
fn rejected_transform() {
    let dir = tempfile::tempdir().unwrap();
    let b = 2.0 * PI * PI;
    let spec = write(dir.path(), "bad.json", &format!(r#"{{"alpha":1,"B":[[0,0],[0,0],[0,0],[{b},0]]}}"#));
    let o = run(&["transform", s(&diag_file(dir.path())), s(&spec)]);
    assert_eq!(o.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&o.stderr).contains("F_alpha"));
    let rank = write(dir.path(), "rank.json", r#"{"alpha":1,"B":[[1,0],[0,0],[0,0],[1,0]]}"#);
    assert_eq!(run(&["transform", s(&diag_file(dir.path())), s(&rank)]).status.code(), Some(4));
    let malformed = write(dir.path(), "m.json", r#"{"alpha":1,"B":[[1,0],[0,0],[0,0]]}"#);
    assert_eq!(run(&["transform", s(&diag_file(dir.path())), s(&malformed)]).status.code(), Some(2));
}

#[test]
fn verify_passes_on_closed_forms() {
    let dir = tempfile::tempdir().unwrap();
    for v in [zero_file(dir.path()), diag_file(dir.path())] {
        let o = run(&["verify", s(&v)]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        let reports: Value = serde_json::from_slice(&o.stdout).unwrap();
        let reports = reports.as_array().unwrap();
        assert!(reports.len() > 40);
        assert!(reports.iter().all(|r| r["passed"].as_bool().unwrap()));
    }
}

#[test]
fn plot_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let z = zero_file(dir.path());
    let o = run(&["plot", s(&z), "--points", "11"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap().split(',').count(), 9);
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 11);
    assert!(rows.iter().all(|r| r.split(',').skip(1).all(|v| v.parse::<f64>().unwrap() == 0.0)));

    let o = run(&["plot", s(&z), "--sigma-scan", "--points", "101", "--lambda-max", "100"]);
    let text = String::from_utf8(o.stdout).unwrap();
    let scan: Vec<(f64, f64)> = text
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<f64> = l.split(',').map(|x| x.parse().unwrap()).collect();
            (f[0], f[1])
        })
        .collect();
    // local minima of the scan sit next to (pi n)^2
    let minima: Vec<f64> = scan.windows(3).filter(|w| w[1].1 < w[0].1 && w[1].1 < w[2].1).map(|w| w[1].0).collect();
    assert_eq!(minima.len(), 3, "{minima:?}");
    for (i, m) in minima.iter().enumerate() {
        assert!((m - ((i + 1) as f64 * PI).powi(2)).abs() <= 1.0);
    }

    let report = dir.path().join("r.json");
    assert!(run(&["spectrum", s(&z), "--out", s(&report)]).status.success());
    let o = run(&["plot", s(&report)]);
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert!(text.starts_with("alpha,lambda,k\n1,"));

    let scan_csv = dir.path().join("scan.csv");
    assert!(run(&["spectrum", s(&z), "--scan-csv", s(&scan_csv), "--scan-points", "21"]).status.success());
    assert_eq!(std::fs::read_to_string(&scan_csv).unwrap().lines().count(), 22);
}

#[test]
fn plot_of_transformed_potential_is_stable() {
    let dir = tempfile::tempdir().unwrap();
    let b = 2.0 * PI * PI;
    let change = write(dir.path(), "ch.json", &format!(r#"{{"alpha":1,"B":[[{b},0],[0,0],[0,0],[{},0]]}}"#, 4.0 * b));
    let t = dir.path().join("t.json");
    assert!(run(&["transform", s(&zero_file(dir.path())), s(&change), "--out", s(&t), "--diagnostics", s(&dir.path().join("d.json"))]).status.success());
    let a = run(&["plot", s(&t)]).stdout;
    let b2 = run(&["plot", s(&t)]).stdout;
    assert_eq!(a, b2);
    // smooth bump in the (2,2) entry, vanishing at x = 0
    let text = String::from_utf8(a).unwrap();
    let v22: Vec<f64> = text.lines().skip(1).map(|l| l.split(',').nth(7).unwrap().parse().unwrap()).collect();
    assert!(v22[0].abs() < 1e-12);
    assert!(v22.iter().any(|x| x.abs() > 1.0));
    let jumps = v22.windows(2).map(|w| (w[1] - w[0]).abs()).fold(0.0, f64::max);
    assert!(jumps < 5.0, "largest jump {jumps}");
}
