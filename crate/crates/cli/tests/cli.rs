use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_radar-autocal"))
}

fn repo_file(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn simulate(dir: &Path, scenario: Option<&Path>) -> PathBuf {
    let out = dir.join("sim");
    let mut args = vec!["simulate", "--out", s(&out)];
    if let Some(sc) = scenario {
        args.extend(["--scenario", s(sc)]);
    }
    let o = run(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

fn calibrate(sim: &Path, out: &Path) -> Output {
    run(&[
        "calibrate",
        "--radar",
        s(&sim.join("radar.jsonl")),
        "--pose",
        s(&sim.join("pose.csv")),
        "--config",
        s(&repo_file("configs/default.toml")),
        "--out",
        s(out),
    ])
}

fn evaluate(sim: &Path, calib: &Path, out: &Path) -> Output {
    run(&[
        "evaluate",
        "--radar",
        s(&sim.join("radar.jsonl")),
        "--pose",
        s(&sim.join("pose.csv")),
        "--calib",
        s(calib),
        "--out",
        s(out),
    ])
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn simulate_writes_parseable_files_and_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let a = simulate(&dir.path().join("a"), None);
    let b = simulate(&dir.path().join("b"), Some(&repo_file("scenarios/canonical.toml")));
    for f in ["radar.jsonl", "pose.csv", "truth.json", "labels.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert_eq!(json(&a.join("truth.json"))["schema"], 1);
    let o = run(&["inspect", "--radar", s(&a.join("radar.jsonl"))]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("frames            1051"));
}

#[test]
fn simulate_rejects_zero_rate() {
    let dir = tempfile::tempdir().unwrap();
    let sc = dir.path().join("bad.toml");
    fs::write(&sc, "radar_rate_hz = 0.0\n").unwrap();
    let o = run(&["simulate", "--scenario", s(&sc), "--out", s(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("radar_rate_hz"));
}

#[test]
fn calibrate_recovers_truth_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulate(dir.path(), None);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = calibrate(&sim, out);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(fs::read(a.join("calibration.json")).unwrap(), fs::read(b.join("calibration.json")).unwrap());
    let strip = |p: &Path| {
        let mut v = json(&p.join("report.json"));
        v.as_object_mut().unwrap().remove("generated_at");
        v
    };
    assert_eq!(strip(&a), strip(&b));
    assert!(fs::read_to_string(a.join("report.txt")).unwrap().contains("mean angle"));

    // Compare in the site frame: the calibration origin is the first pose sample.
    let cal = json(&a.join("calibration.json"));
    let truth = json(&sim.join("truth.json"));
    let shift = [
        cal["origin"][0].as_f64().unwrap() - truth["origin"][0].as_f64().unwrap(),
        cal["origin"][1].as_f64().unwrap() - truth["origin"][1].as_f64().unwrap(),
        0.0,
    ];
    for i in 0..3 {
        let got = cal["t"][i].as_f64().unwrap() + shift[i];
        assert!((got - truth["t"][i].as_f64().unwrap()).abs() < 1e-3, "t[{i}] = {got}");
        assert!((cal["rpy_deg"][i].as_f64().unwrap() - truth["rpy_deg"][i].as_f64().unwrap()).abs() < 0.02);
    }
}

#[test]
fn missing_pose_log_is_an_ingest_failure() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulate(dir.path(), None);
    fs::remove_file(sim.join("pose.csv")).unwrap();
    let o = calibrate(&sim, &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("ingest"));
}

#[test]
fn single_pass_has_no_consistent_hypotheses() {
    let dir = tempfile::tempdir().unwrap();
    let sc = dir.path().join("one.toml");
    fs::write(&sc, "passes = 1\n").unwrap();
    let sim = simulate(dir.path(), Some(&sc));
    let o = calibrate(&sim, &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(5));
    assert!(String::from_utf8_lossy(&o.stderr).contains("insufficient consistent passes"));
}

#[test]
fn set_override_reaches_the_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulate(dir.path(), None);
    let out = dir.path().join("out");
    let o = run(&[
        "calibrate",
        "--radar",
        s(&sim.join("radar.jsonl")),
        "--pose",
        s(&sim.join("pose.csv")),
        "--out",
        s(&out),
        "--set",
        "refine.enabled=false",
    ]);
    assert!(o.status.success());
    assert_eq!(json(&out.join("calibration.json"))["refined"], false);

    let o = run(&["calibrate", "--radar", "x", "--pose", "y", "--out", s(&out), "--set", "cluster.nope=1"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn evaluate_truth_and_perturbed_calibrations() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulate(dir.path(), None);
    let truth = sim.join("truth.json");

    let o = evaluate(&sim, &truth, &dir.path().join("e0"));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m0 = json(&dir.path().join("e0/metrics.json"));
    assert!(m0["r_i_pct"].as_f64().unwrap() >= 95.0);
    let diag = fs::read_to_string(dir.path().join("e0/diagnostics.csv")).unwrap();
    assert_eq!(diag.lines().count() as u64 - 1, m0["n_targets"].as_u64().unwrap());

    // +1 m and +2 m along x: inliers fall and the outlier error grows.
    let mut last = (m0["r_i_pct"].as_f64().unwrap(), m0["delta_op_m"].as_f64().unwrap());
    for (k, dx) in [1.0, 2.0].into_iter().enumerate() {
        let mut cal = json(&truth);
        cal["t"][0] = Value::from(cal["t"][0].as_f64().unwrap() + dx);
        let path = dir.path().join(format!("p{k}.json"));
        fs::write(&path, cal.to_string()).unwrap();
        let out = dir.path().join(format!("e{}", k + 1));
        assert!(evaluate(&sim, &path, &out).status.success());
        let m = json(&out.join("metrics.json"));
        let cur = (m["r_i_pct"].as_f64().unwrap(), m["delta_op_m"].as_f64().unwrap());
        assert!(cur.0 < last.0 && cur.1 > last.1, "{last:?} -> {cur:?}");
        last = cur;
    }
}

#[test]
fn evaluate_rejects_other_schema_and_far_calibrations() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulate(dir.path(), None);
    let mut cal = json(&sim.join("truth.json"));
    cal["schema"] = Value::from(2);
    let bad = dir.path().join("bad.json");
    fs::write(&bad, cal.to_string()).unwrap();
    assert_eq!(evaluate(&sim, &bad, &dir.path().join("o")).status.code(), Some(2));

    let mut cal = json(&sim.join("truth.json"));
    cal["t"][1] = Value::from(cal["t"][1].as_f64().unwrap() + 50.0);
    let far = dir.path().join("far.json");
    fs::write(&far, cal.to_string()).unwrap();
    assert_eq!(evaluate(&sim, &far, &dir.path().join("o")).status.code(), Some(7));
}
