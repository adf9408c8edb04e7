use std::path::PathBuf;
use std::process::{Command, Output};

use nalgebra::DMatrix;
use nmfsem::io::{save_artifact, RunArtifact};
use nmfsem::model::equilibrium;
use nmfsem::{FitConfig, FitResult, ModelParams, NonNegMatrix};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_nmfsem"));
    c.env_remove("NMFSEM_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn fixture(name: &str) -> String {
    let p: PathBuf = [env!("CARGO_MANIFEST_DIR"), "tests", "fixtures", "feedforward", name].iter().collect();
    p.display().to_string()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Values of the single data row under the `Q rho AR ...` header.
fn table_row(text: &str) -> Vec<String> {
    let mut lines = text.lines().skip_while(|l| !l.trim_start().starts_with("Q "));
    lines.next().expect("header");
    lines.next().expect("row").split_whitespace().map(str::to_string).collect()
}

#[test]
fn missing_data_flag() {
    let o = run(&["fit", "--spec", "s.toml"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--data"), "{}", stderr(&o));
    assert!(stderr(&o).to_lowercase().contains("usage"));
}

#[test]
fn zero_latent_dimension() {
    let o = run(&["fit", "--data", &fixture("data.csv"), "--spec", &fixture("spec.toml"), "--q", "0"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("q must be >= 1"), "{}", stderr(&o));
}

#[test]
fn unreadable_data_names_the_file() {
    let o = run(&["fit", "--data", "/nonexistent/x.csv", "--spec", &fixture("spec.toml"), "--q", "2"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("/nonexistent/x.csv"));
}

// The fixture was produced by `simulate --rho-true 0 --n 200 --r 1 --seed 7
// --export-dir`. Without any sparsity penalty the fit keeps a small
// unidentified feedback (AR about 1.03); a mild penalty on Theta1 removes it.
#[test]
fn feedforward_fixture_has_unit_amplification() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fit.json");
    let o = run(&[
        "fit",
        "--data",
        &fixture("data.csv"),
        "--spec",
        &fixture("spec.toml"),
        "--q",
        "3",
        "--lambda1",
        "1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let row = table_row(&stdout(&o));
    assert_eq!(row[0], "3");
    let ar: f64 = row[2].parse().unwrap();
    assert!((ar - 1.0).abs() <= 0.01, "AR = {ar}");
    let sc_map: f64 = row[3].parse().unwrap();
    assert!(sc_map >= 0.98);

    let m = run(&["metrics", "--artifact", out.to_str().unwrap()]);
    assert_eq!(m.status.code(), Some(0));
    assert_eq!(table_row(&stdout(&m)), row);

    let d1 = run(&["diagram", "--artifact", out.to_str().unwrap()]);
    let d2 = run(&["diagram", "--artifact", out.to_str().unwrap()]);
    assert_eq!(d1.status.code(), Some(0));
    assert!(stdout(&d1).starts_with("digraph"));
    assert!(stdout(&d1).contains("\"y1\""));
    assert_eq!(d1.stdout, d2.stdout);
}

#[test]
fn simulate_smoke_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let base = ["simulate", "--table1", "--r", "3", "--seed", "5", "--max-iter", "200", "--out"];
    let oa = run(&[&base[..], &[a.to_str().unwrap()]].concat());
    assert_eq!(oa.status.code(), Some(0), "{}", stderr(&oa));
    let ob = bin()
        .args([&base[..], &[b.to_str().unwrap()]].concat())
        .env("NMFSEM_THREADS", "1")
        .output()
        .unwrap();
    assert_eq!(ob.status.code(), Some(0));
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let table = stdout(&oa);
    let rows: Vec<&str> = table.lines().skip(1).collect();
    assert_eq!(rows.len(), 4);
    for r in rows {
        let nums: Vec<f64> = r.split_whitespace().rev().take(5).map(|v| v.parse().unwrap()).collect();
        assert!(nums.iter().all(|v| v.is_finite()), "{r}");
    }
}

fn unstable_artifact(path: &std::path::Path) {
    let x = NonNegMatrix::new(DMatrix::from_element(2, 2, 0.5)).unwrap();
    let t1 = NonNegMatrix::new(DMatrix::from_element(2, 2, 1.0)).unwrap();
    let t2 = NonNegMatrix::new(DMatrix::from_element(2, 1, 0.3)).unwrap();
    let params = ModelParams::new(x, t1, t2).unwrap();
    let eq = equilibrium(&params).unwrap();
    assert!(!eq.stable);
    let r = FitResult {
        m_simple: eq.m_direct.clone(),
        params,
        loss_trace: vec![1.0],
        iterations: 0,
        converged: false,
        equilibrium: eq,
        metrics: None,
    };
    let mut art = RunArtifact::new(FitConfig::new(2), vec!["a".into(), "b".into()], vec!["z".into()]).unwrap();
    art.fit = Some(r);
    save_artifact(&art, path).unwrap();
}

#[test]
fn unstable_fit_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("u.json");
    unstable_artifact(&p);
    let o = run(&["metrics", "--artifact", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("unstable"));
    assert_eq!(table_row(&stdout(&o))[2], "-");
    let d = run(&["diagram", "--artifact", p.to_str().unwrap()]);
    assert!(stdout(&d).contains("warning"));
}

#[test]
fn old_artifact_version_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("old.json");
    unstable_artifact(&p);
    let text = std::fs::read_to_string(&p).unwrap().replacen("\"version\": \"1\"", "\"version\": \"0\"", 1);
    std::fs::write(&p, text).unwrap();
    let o = run(&["metrics", "--artifact", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("regenerate"));
}

#[test]
fn export_then_cv() {
    let dir = tempfile::tempdir().unwrap();
    let exp = dir.path().join("exp");
    let o = run(&[
        "simulate", "--rho-true", "0.2", "--n", "40", "--r", "1", "--seed", "3", "--max-iter", "50", "--export-dir",
        exp.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = dir.path().join("cv.json");
    let csv = dir.path().join("cv.csv");
    let o = run(&[
        "cv",
        "--data",
        exp.join("data.csv").to_str().unwrap(),
        "--spec",
        exp.join("spec.toml").to_str().unwrap(),
        "--q",
        "2",
        "--lambda1-values",
        "0,0.1",
        "--lambda2-values",
        "0",
        "--folds",
        "3",
        "--max-iter",
        "100",
        "--out",
        out.to_str().unwrap(),
        "--csv",
        csv.to_str().unwrap(),
    ]);
    assert!(matches!(o.status.code(), Some(0) | Some(2)), "{}", stderr(&o));
    assert!(stdout(&o).contains("<- selected"));
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 3);
    let art = nmfsem::io::load_artifact(&out).unwrap();
    assert!(art.cv.is_some() && art.fit.is_some());
}
