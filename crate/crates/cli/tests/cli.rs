use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_noise-witness"));
    c.env_remove("NOISE_WITNESS_SEED");
    c
}

fn run(out: &Path, args: &[&str]) -> Output {
    bin().arg("--out").arg(out).args(args).output().expect("spawn")
}

fn ok(out: &Path, args: &[&str]) -> Output {
    let o = run(out, args);
    assert!(
        o.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    o
}

fn json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn csv_rows(p: &Path) -> Vec<Vec<f64>> {
    fs::read_to_string(p)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect()
}

fn replay_ok(dir: &Path, into: &Path) {
    let o = bin()
        .arg("--out")
        .arg(into)
        .arg("replay")
        .arg(dir.join("manifest.json"))
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in json(&dir.join("manifest.json"))["outputs"].as_array().unwrap() {
        let name = f["file"].as_str().unwrap();
        assert_eq!(fs::read(dir.join(name)).unwrap(), fs::read(into.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn generate_trajectory_ensemble_and_replay() {
    let t = tempfile::tempdir().unwrap();
    let a = t.path().join("a");
    ok(&a, &["generate", "--delta", "0.1", "--tc", "2.5", "--seed", "3"]);
    let rows = csv_rows(&a.join("trajectory.csv"));
    assert_eq!(rows.len(), 626);
    assert_eq!(json(&a.join("manifest.json"))["seed"], 3);
    replay_ok(&a, &t.path().join("a2"));

    let b = t.path().join("b");
    ok(&b, &["generate", "--delta", "0.1", "--tc", "2.5", "--ic", "quenched", "--n", "4", "--tmax", "0.1"]);
    let rows = csv_rows(&b.join("ensemble.csv"));
    assert_eq!(rows.len(), 4 * 26);
    assert!(rows.iter().filter(|r| r[1] == 0.0).all(|r| r[2] == 0.0));

    let c = t.path().join("c");
    ok(&c, &["generate", "--kind", "second-order", "--drive", "0.054", "--omega0", "6", "--beta", "0.1", "--n", "8", "--format", "binary", "--tmax", "0.5"]);
    assert_eq!(fs::metadata(c.join("ensemble.bin")).unwrap().len(), 32 + 8 * 501 * 8);
    replay_ok(&c, &t.path().join("c2"));
}

#[test]
fn worker_count_does_not_change_outputs() {
    let t = tempfile::tempdir().unwrap();
    let args = ["simulate", "--delta", "0.1", "--tc", "2.5", "--n", "3000", "--seed", "11"];
    let a = t.path().join("w1");
    let b = t.path().join("w4");
    bin().args(["--workers", "1", "--out"]).arg(&a).args(args).status().unwrap();
    bin().args(["--workers", "4", "--out"]).arg(&b).args(args).status().unwrap();
    assert_eq!(fs::read(a.join("ramsey.csv")).unwrap(), fs::read(b.join("ramsey.csv")).unwrap());
    replay_ok(&a, &t.path().join("w1r"));
}

#[test]
fn seed_falls_back_to_environment() {
    let t = tempfile::tempdir().unwrap();
    let o = bin()
        .env("NOISE_WITNESS_SEED", "42")
        .arg("--out")
        .arg(t.path())
        .args(["generate", "--delta", "0.1", "--tc", "2.5"])
        .output()
        .unwrap();
    assert!(o.status.success());
    assert_eq!(json(&t.path().join("manifest.json"))["seed"], 42);
}

#[test]
fn correlate_analytic_and_empirical() {
    let t = tempfile::tempdir().unwrap();
    ok(t.path(), &["correlate", "--delta", "0.1", "--tc", "2.5", "--points", "5"]);
    let rows = csv_rows(&t.path().join("correlation.csv"));
    assert_eq!(rows.len(), 25);
    // Equilibrium: corr(t, t) = delta² in canonical units (0.8 rad/µs).
    for r in rows.iter().filter(|r| r[0] == r[1]) {
        assert!((r[2] - 0.64).abs() < 1e-12);
    }
    assert!(t.path().join("spectrum.csv").exists());

    let e = t.path().join("emp");
    ok(&e, &["correlate", "--delta", "0.1", "--tc", "2.5", "--ic", "quenched", "--points", "3", "--empirical", "--n", "2000"]);
    let rows = csv_rows(&e.join("correlation.csv"));
    for r in rows {
        assert!((r[3] - r[2]).abs() <= 5.0 * r[4] + 1e-12, "{r:?}");
    }
    assert!(!e.join("spectrum.csv").exists());
}

#[test]
fn analytic_second_order_revives_near_period() {
    let t = tempfile::tempdir().unwrap();
    ok(
        t.path(),
        &["analytic", "--kind", "second-order", "--omega0", "6", "--beta", "0.1", "--drive", "0.054", "--ic", "equilibrium", "--tmax", "2.5"],
    );
    let rows = csv_rows(&t.path().join("ramsey.csv"));
    let beta: f64 = 0.1;
    let period = 2.0 * std::f64::consts::PI / (36.0 - beta * beta / 4.0).sqrt();
    let peak = rows
        .windows(3)
        .find(|w| w[1][0] > 0.5 && w[1][1] > w[0][1] && w[1][1] >= w[2][1])
        .map(|w| w[1][0])
        .expect("a local maximum");
    assert!((peak - period).abs() < 0.01, "peak {peak} vs {period}");
    let series = json(&t.path().join("series.json"));
    assert_eq!(series["short_time"][0]["power"], 2);
    assert!(t.path().join("chi.csv").exists());
    replay_ok(t.path(), &t.path().join("r"));
}

#[test]
fn oracle_matches_closed_form() {
    let t = tempfile::tempdir().unwrap();
    ok(t.path(), &["oracle", "--delta", "0.1", "--tc", "2.5", "--ic", "delayed-quench", "--td", "0.5", "--tmax", "5"]);
    let rows = csv_rows(&t.path().join("oracle.csv"));
    assert_eq!(rows.len(), 10);
    for r in rows {
        assert!(r[4] < 1e-6, "{r:?}");
    }
}

#[test]
fn joint_fit_resolves_correlation_time() {
    let t = tempfile::tempdir().unwrap();
    let sim = |ic: &str, seed: &str, name: &str| {
        let d = t.path().join(name);
        ok(&d, &["simulate", "--delta", "0.1", "--tc", "2.5", "--ic", ic, "--n", "10000", "--seed", seed]);
        let dst = t.path().join(format!("{name}.csv"));
        fs::copy(d.join("ramsey.csv"), &dst).unwrap();
        dst
    };
    let eq = sim("equilibrium", "1", "eq");
    let qu = sim("quenched", "2", "quenched");
    let f = t.path().join("fit");
    let o = ok(
        &f,
        &["fit", "--joint", eq.to_str().unwrap(), qu.to_str().unwrap(), "--free", "delta,tc", "--share", "delta,tc"],
    );
    let report = String::from_utf8_lossy(&o.stdout);
    assert!(report.contains("t_c"), "{report}");
    let fit = json(&f.join("fit.json"));
    let est = fit["fits"][0]["result"]["estimates"].as_array().unwrap();
    let tc = est.iter().find(|e| e["label"] == "t_c").unwrap();
    assert!(tc["dependency"].as_f64().unwrap() < 0.9);
    assert!((tc["value"].as_f64().unwrap() / 2.5 - 1.0).abs() < 0.15);
    assert!(f.join("fit_curve_1.csv").exists());
    replay_ok(&f, &t.path().join("fit2"));
}

#[test]
fn classify_markovian_quenched_curve() {
    let t = tempfile::tempdir().unwrap();
    ok(&t.path().join("a"), &["analytic", "--delta", "0.1", "--tc", "10", "--ic", "quenched", "--tmax", "5"]);
    let curve = t.path().join("a").join("ramsey.csv");
    let o = ok(&t.path().join("c"), &["classify", curve.to_str().unwrap(), "--hints", "quenched"]);
    let label = json(&t.path().join("c").join("label.json"));
    assert_eq!(label["memory"], "markovian");
    assert!(String::from_utf8_lossy(&o.stdout).contains("Markovian"));
}

#[test]
fn validate_pass_and_fail_exit_codes() {
    let t = tempfile::tempdir().unwrap();
    let a = t.path().join("pass");
    let o = ok(&a, &["validate", "--kind", "markovian", "--delta", "0.1", "--tc", "2.5", "--n", "10000", "--seed", "7"]);
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("PASS"));
    let v = json(&a.join("validation.json"));
    assert_eq!(v["pass"], true);
    assert!(v["max_z"].as_f64().unwrap() <= 5.0);

    let b = t.path().join("fail");
    let o = run(&b, &["validate", "--delta", "0.1", "--tc", "2.5", "--n", "200", "--k", "1e-9"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(json(&b.join("validation.json"))["pass"], false);
    assert!(b.join("manifest.json").exists());

    let c = t.path().join("bath");
    ok(&c, &["validate", "--source", "rotating-bath", "--omega-rot", "20", "--tc", "2", "--delta", "0.1", "--n", "2000", "--tmax", "1", "--slack", "0.01"]);
}

#[test]
fn bad_arguments_exit_2_and_name_the_field() {
    let t = tempfile::tempdir().unwrap();
    let cases: &[(&[&str], &str)] = &[
        (&["analytic", "--delta", "0.1", "--tc=-1"], "t_c"),
        (&["analytic", "--delta", "0.1"], "--tc"),
        (&["analytic", "--kind", "second-order", "--drive", "1", "--tc", "2"], "--omega0"),
        (&["analytic", "--delta", "0.1", "--tc", "2", "--ic", "delayed-quench"], "--td"),
        (&["analytic", "--delta", "0.1", "--tc", "2", "--td", "1"], "--td"),
        (&["analytic", "--delta", "0.1", "--drive", "1", "--tc", "2"], "--drive"),
        (&["generate", "--delta", "0.1", "--tc", "2", "--dt", "10", "--tmax", "1"], "dt"),
    ];
    for (args, field) in cases {
        let o = run(t.path(), args);
        assert_eq!(o.status.code(), Some(2), "{args:?}");
        let err = String::from_utf8_lossy(&o.stderr);
        assert!(err.contains(field), "{args:?}: {err}");
    }
}

#[test]
fn replay_rejects_tampering() {
    let t = tempfile::tempdir().unwrap();
    let a = t.path().join("a");
    ok(&a, &["analytic", "--delta", "0.1", "--tc", "2.5"]);
    let path = a.join("manifest.json");
    let mut m = json(&path);
    m["outputs"][0]["sha256"] = Value::from("00");
    fs::write(&path, serde_json::to_string(&m).unwrap()).unwrap();
    let o = bin().arg("--out").arg(t.path().join("r")).arg("replay").arg(&path).output().unwrap();
    assert_eq!(o.status.code(), Some(1));

    m["command"]["noise"]["tc"] = Value::from(3.0);
    fs::write(&path, serde_json::to_string(&m).unwrap()).unwrap();
    let o = bin().arg("--out").arg(t.path().join("r")).arg("replay").arg(&path).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("config_hash"));
}
