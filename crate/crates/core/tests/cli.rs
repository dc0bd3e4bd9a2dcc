use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use sigsurv::cli::{RunManifest, SplitFile};
use sigsurv::intensity::IntensityParams;
use sigsurv::simulate::SimManifest;

fn sigsurv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sigsurv"))
        .args(args)
        .output()
        .expect("run binary")
}

fn ok(args: &[&str]) -> Output {
    let out = sigsurv(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn simulate(dir: &Path, seed: &str) {
    ok(&["simulate", "--gen", "thinning", "--seed", seed, "--n", "80", "--out", p(dir)]);
}

fn fit(sim: &Path, out: &Path, method: &str) {
    ok(&[
        "fit",
        "--dataset",
        p(&sim.join("longitudinal.csv")),
        "--records",
        p(&sim.join("records.csv")),
        "--method",
        method,
        "--depth",
        "2",
        "--eta1",
        "0.01",
        "--eta2",
        "0.01",
        "--seed",
        "5",
        "--out",
        p(out),
    ]);
}

#[test]
fn simulate_is_deterministic_and_writes_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    simulate(&a, "11");
    simulate(&b, "11");
    simulate(&c, "12");
    for f in ["longitudinal.csv", "records.csv", "manifest.json", "truth.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert_ne!(
        fs::read(a.join("records.csv")).unwrap(),
        fs::read(c.join("records.csv")).unwrap()
    );
    let m: SimManifest = serde_json::from_str(&fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m.n, 80);
    assert_eq!(m.seed, 11);
    assert_eq!(m.generator, "thinning");
    assert_eq!(m.config_hash.len(), 64);
    assert!((0.0..=1.0).contains(&m.censoring_rate));
}

#[test]
fn fit_evaluate_predict_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    simulate(&sim, "3");
    let (f1, f2) = (tmp.path().join("f1"), tmp.path().join("f2"));
    fit(&sim, &f1, "coxsig");
    fit(&sim, &f2, "coxsig");
    for f in ["model.json", "split.json", "trace.csv", "manifest.json"] {
        assert_eq!(fs::read(f1.join(f)).unwrap(), fs::read(f2.join(f)).unwrap(), "{f}");
    }
    let model: IntensityParams = serde_json::from_str(&fs::read_to_string(f1.join("model.json")).unwrap()).unwrap();
    assert!(matches!(model, IntensityParams::CoxSig(ref c) if c.depth == 2 && !c.plus));
    let split: SplitFile = serde_json::from_str(&fs::read_to_string(f1.join("split.json")).unwrap()).unwrap();
    assert_eq!(split.train.len(), 64);
    assert_eq!(split.test.len(), 16);
    let manifest: RunManifest =
        serde_json::from_str(&fs::read_to_string(f1.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest.command, "fit");
    assert_eq!(manifest.config_hash, sigsurv::cli::config_hash(&manifest.config));

    let trace = fs::read_to_string(f1.join("trace.csv")).unwrap();
    assert!(trace.starts_with("iter,objective,step"));

    let ev = tmp.path().join("ev");
    let out = ok(&[
        "evaluate",
        "--dataset",
        p(&sim.join("longitudinal.csv")),
        "--records",
        p(&sim.join("records.csv")),
        "--model",
        p(&f1.join("model.json")),
        "--split",
        p(&f1.join("split.json")),
        "--delta-t",
        "0.5",
        "--out",
        p(&ev),
    ]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("C-index"));
    let metrics: serde_json::Value = serde_json::from_str(&fs::read_to_string(ev.join("metrics.json")).unwrap()).unwrap();
    assert!(metrics["averages"]["brier"].as_f64().unwrap() >= 0.0);
    assert!(ev.join("metrics.csv").is_file());

    let pr = tmp.path().join("pr");
    ok(&[
        "predict",
        "--dataset",
        p(&sim.join("longitudinal.csv")),
        "--records",
        p(&sim.join("records.csv")),
        "--model",
        p(&f1.join("model.json")),
        "--delta-t",
        "0.5",
        "--out",
        p(&pr),
    ]);
    let mut rdr = csv::Reader::from_path(pr.join("survival.csv")).unwrap();
    let mut rows = 0;
    for rec in rdr.records() {
        let s: f64 = rec.unwrap()[3].parse().unwrap();
        assert!((0.0..=1.0).contains(&s));
        rows += 1;
    }
    assert!(rows >= 80);
}

#[test]
fn cv_writes_table_for_every_grid_point() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    simulate(&sim, "4");
    let grid = tmp.path().join("grid.json");
    fs::write(&grid, r#"{"eta1":[0.1,0.01],"eta2":[0.1],"depths":[1,2],"train_fraction":0.8}"#).unwrap();
    let out = tmp.path().join("cv");
    ok(&[
        "cv",
        "--dataset",
        p(&sim.join("longitudinal.csv")),
        "--records",
        p(&sim.join("records.csv")),
        "--method",
        "coxsig+",
        "--grid-file",
        p(&grid),
        "--delta-t",
        "0.5",
        "--seed",
        "1",
        "--out",
        p(&out),
    ]);
    let table = fs::read_to_string(out.join("cv_table.csv")).unwrap();
    assert_eq!(table.lines().next().unwrap(), "eta1,eta2,depth,mixed");
    assert_eq!(table.lines().count(), 5);
    assert!(out.join("model.json").is_file());
}

#[test]
fn ncde_fit_writes_loss_curve() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    simulate(&sim, "6");
    let out = tmp.path().join("ncde");
    ok(&[
        "fit",
        "--dataset",
        p(&sim.join("longitudinal.csv")),
        "--records",
        p(&sim.join("records.csv")),
        "--method",
        "ncde",
        "--epochs",
        "3",
        "--seed",
        "2",
        "--out",
        p(&out),
    ]);
    let loss = fs::read_to_string(out.join("loss.csv")).unwrap();
    assert_eq!(loss.lines().count(), 4);
    let model: IntensityParams = serde_json::from_str(&fs::read_to_string(out.join("model.json")).unwrap()).unwrap();
    assert!(matches!(model, IntensityParams::Ncde(_)));
}

#[test]
fn diagnose_reports_every_check() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("diag");
    ok(&["diagnose", "--seed", "1", "--n", "60", "--perturbations", "3", "--out", p(&out)]);
    let report: Vec<serde_json::Value> =
        serde_json::from_str(&fs::read_to_string(out.join("diagnostics.json")).unwrap()).unwrap();
    let names: Vec<&str> = report.iter().map(|c| c["name"].as_str().unwrap()).collect();
    assert_eq!(names, ["factorial_decay", "linearization_truncation", "pinsker_sandwich"]);
    assert!(report.iter().all(|c| c["pass"].as_bool().unwrap()));
}

#[test]
fn invalid_input_exits_with_code_two() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = sigsurv(&[
        "fit",
        "--dataset",
        "/nonexistent/long.csv",
        "--records",
        "/nonexistent/rec.csv",
        "--method",
        "coxsig",
        "--seed",
        "1",
        "--out",
        p(tmp.path()),
    ]);
    assert_eq!(missing.status.code(), Some(2));
    assert_eq!(sigsurv(&["fit", "--method", "bogus"]).status.code(), Some(2));

    let sim = tmp.path().join("sim");
    simulate(&sim, "1");
    let bad_dt = sigsurv(&[
        "cv",
        "--dataset",
        p(&sim.join("longitudinal.csv")),
        "--records",
        p(&sim.join("records.csv")),
        "--method",
        "coxsig",
        "--delta-t",
        "-1",
        "--seed",
        "1",
        "--out",
        p(&tmp.path().join("cv")),
    ]);
    assert_eq!(bad_dt.status.code(), Some(2));
}

#[test]
fn overflowing_model_exits_with_code_three() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    simulate(&sim, "2");
    let model = tmp.path().join("model.json");
    fs::write(
        &model,
        r#"{"model":"coxsig","depth":1,"alpha":{"1":0.0,"2":0.0},"beta":[500.0],"plus":false}"#,
    )
    .unwrap();
    let out = sigsurv(&[
        "evaluate",
        "--dataset",
        p(&sim.join("longitudinal.csv")),
        "--records",
        p(&sim.join("records.csv")),
        "--model",
        p(&model),
        "--delta-t",
        "0.5",
        "--out",
        p(&tmp.path().join("ev")),
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}
