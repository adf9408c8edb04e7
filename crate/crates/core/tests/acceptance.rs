//! Acceptance suite. Runs every criterion, prints one PASS/FAIL/SKIP line
//! each, and exits non-zero if any criterion fails.
//!
//! Criterion 9 needs the nine-test ability dataset, which is not shipped:
//! set `NMFSEM_ABILITY_CSV` and `NMFSEM_ABILITY_SPEC` to run it.

use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nmfsem::estimation::update_step;
use nmfsem::evaluation::{bootstrap, BootstrapResult};
use nmfsem::io::{self, DiagramLabels, EdgeThreshold, RunArtifact};
use nmfsem::matrix::{self, op_norm_1};
use nmfsem::model::equilibrium;
use nmfsem::selection::{cross_validate, kfold_split, CvGrid};
use nmfsem::simulation::{self, SimCondition};
use nmfsem::{fit, Dataset, FitConfig, FitResult, ModelParams, NonNegMatrix, Penalties};

// Pinned tolerances.
const REFERENCE_R: usize = 50;
const REFERENCE_SEED: u64 = 1;
const SC_MIN: f64 = 0.98;
const MAE_MAX: f64 = 0.05;
const AR_BOUND_DRAWS: usize = 1000;
const AR_BOUND_NORM: f64 = 0.9;
const AR_BOUND_TOL: f64 = 1e-10;
const NEUMANN_SYSTEMS: usize = 200;
const NEUMANN_TOL: f64 = 1e-8;
const MONO_DATASETS: usize = 20;
const MONO_ITERS: usize = 500;
const MONO_SLACK: f64 = 1e-10;
const FIXED_POINT_TOL: f64 = 1e-10;
const SELF_CONSISTENCY_TOL: f64 = 1e-8;
const BOOT_B: usize = 200;
const BOOT_OUTER: usize = 20;
const BOOT_COVERAGE: f64 = 0.90;

type Check = Result<String, String>;

/// Stable fits collected along the way for the self-consistency check.
struct Collected {
    fits: Vec<(FitResult, Dataset)>,
    truths: Vec<(ModelParams, Dataset)>,
    artifact_parts: Option<(FitResult, BootstrapResult)>,
    cv: Option<nmfsem::selection::CvResult>,
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn criterion_1(col: &mut Collected) -> Check {
    let conds = simulation::reference_conditions(REFERENCE_R, REFERENCE_SEED);
    let cfg = FitConfig::new(3);
    let outcomes = simulation::run_study_outcomes(&conds, &cfg).map_err(|e| e.to_string())?;
    let summaries: Vec<_> = conds.iter().zip(&outcomes).map(|(c, o)| simulation::summarize(c, o)).collect();
    println!("{}", simulation::summary_table(&summaries));
    for s in &summaries {
        let l = s.condition.label();
        ensure(s.n_ok > 0, || format!("{l}: no usable replicate"))?;
        ensure(s.mean_sc_map >= SC_MIN, || format!("{l}: SC_map {:.4} < {SC_MIN}", s.mean_sc_map))?;
        ensure(s.mean_sc_cov >= SC_MIN, || format!("{l}: SC_cov {:.4} < {SC_MIN}", s.mean_sc_cov))?;
        ensure(s.mean_mae <= MAE_MAX, || format!("{l}: MAE {:.4} > {MAE_MAX}", s.mean_mae))?;
    }
    // Table order: (0, 50), (0, 200), (0.2, 50), (0.2, 200).
    for (lo, hi) in [(0, 2), (1, 3)] {
        let (a, b) = (summaries[lo].mean_ar, summaries[hi].mean_ar);
        ensure(b > a, || format!("N = {}: AR {b:.5} (rho_true 0.2) not above {a:.5} (rho_true 0)", conds[lo].n))?;
    }
    let excluded: usize = summaries.iter().map(|s| s.n_excluded).sum();
    for o in outcomes.into_iter().flatten() {
        if let Ok(f) = o.fit {
            if f.equilibrium.stable {
                col.fits.push((f, o.data));
            }
        }
    }
    Ok(format!(
        "AR {:.4} < {:.4} (N=50), {:.4} < {:.4} (N=200); min SC_map {:.4}, max MAE {:.4}; {excluded} excluded",
        summaries[0].mean_ar,
        summaries[2].mean_ar,
        summaries[1].mean_ar,
        summaries[3].mean_ar,
        summaries.iter().map(|s| s.mean_sc_map).fold(f64::INFINITY, f64::min),
        summaries.iter().map(|s| s.mean_mae).fold(0.0, f64::max),
    ))
}

fn random_stochastic(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    let mut x = DMatrix::from_fn(rows, cols, |_, _| rng.gen::<f64>() + 1e-3);
    for mut c in x.column_iter_mut() {
        let s = c.sum();
        c /= s;
    }
    x
}

fn nn(m: DMatrix<f64>) -> NonNegMatrix {
    NonNegMatrix::new(m).unwrap()
}

fn criterion_2() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst_low = f64::INFINITY;
    let mut worst_gap = f64::INFINITY;
    for draw in 0..AR_BOUND_DRAWS {
        let (p1, p2, q) = (rng.gen_range(1..=8), rng.gen_range(1..=4), rng.gen_range(1..=4));
        let x = random_stochastic(&mut rng, p1, q);
        let raw = DMatrix::from_fn(q, p1, |_, _| rng.gen::<f64>());
        let norm = op_norm_1(&(&x * &raw));
        let target = AR_BOUND_NORM * rng.gen::<f64>();
        let t1 = raw * (target / norm);
        let t2 = DMatrix::from_fn(q, p2, |_, _| rng.gen::<f64>() + 1e-3);
        let feedback_norm = op_norm_1(&(&x * &t1));
        let direct = &x * &t2;
        let params = ModelParams::new(nn(x), nn(t1), nn(t2)).map_err(|e| e.to_string())?;
        let eq = equilibrium(&params).map_err(|e| format!("draw {draw}: {e}"))?;
        let ar = eq.ar.ok_or_else(|| format!("draw {draw}: AR absent"))?;
        let upper = 1.0 / (1.0 - feedback_norm);
        ensure(ar >= 1.0 - AR_BOUND_TOL, || format!("draw {draw}: AR {ar} < 1"))?;
        ensure(ar <= upper + AR_BOUND_TOL, || format!("draw {draw}: AR {ar} > bound {upper}"))?;
        let m = eq.m_model.as_ref().unwrap();
        let min_diff = (m - &direct).min();
        ensure(min_diff >= -AR_BOUND_TOL, || format!("draw {draw}: M below X Theta2 by {min_diff}"))?;
        worst_low = worst_low.min(ar - 1.0);
        worst_gap = worst_gap.min(upper - ar);
    }
    Ok(format!(
        "{AR_BOUND_DRAWS} draws; min AR-1 = {worst_low:.2e}, min bound-AR = {worst_gap:.2e}"
    ))
}

fn criterion_3() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for s in 0..NEUMANN_SYSTEMS {
        let (p1, p2, q) = (rng.gen_range(1..=10), rng.gen_range(1..=4), rng.gen_range(1..=5));
        let x = random_stochastic(&mut rng, p1, q);
        let raw = DMatrix::from_fn(q, p1, |_, _| rng.gen::<f64>());
        let f = nn(&x * &raw);
        let rho = matrix::rho(&f).map_err(|e| e.to_string())?;
        let target = 0.95 * rng.gen::<f64>();
        let a = nn(f.as_matrix() * (target / rho));
        let b = &x * DMatrix::from_fn(q, p2, |_, _| rng.gen::<f64>());
        let neumann = matrix::neumann_inverse(&a, 1e-15, 200_000).map_err(|e| format!("system {s}: {e}"))?;
        let solved = matrix::solve_i_minus(&a, &b).map_err(|e| format!("system {s}: {e}"))?;
        let diff = (neumann * &b - solved).abs().max();
        worst = worst.max(diff);
        ensure(diff < NEUMANN_TOL, || format!("system {s}: max difference {diff:e}"))?;
    }
    Ok(format!("{NEUMANN_SYSTEMS} systems; max entrywise difference {worst:.2e}"))
}

fn random_dataset(seed: u64, p1: usize, p2: usize, n: usize) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let y1 = DMatrix::from_fn(p1, n, |_, _| rng.gen::<f64>());
    let y2 = DMatrix::from_fn(p2, n, |_, _| rng.gen::<f64>());
    Dataset::new(nn(y1), nn(y2)).unwrap()
}

fn criterion_4(col: &mut Collected) -> Check {
    let penalty_sets = [
        Penalties::default(),
        Penalties {
            lambda_x: 100.0,
            lambda_1: 0.1,
            lambda_2: 0.1,
        },
        Penalties::zero(),
        Penalties {
            lambda_x: 1.0,
            lambda_1: 1.0,
            lambda_2: 0.0,
        },
    ];
    let mut worst = f64::NEG_INFINITY;
    for k in 0..MONO_DATASETS {
        let data = random_dataset(400 + k as u64, 9, 3, 100);
        let mut cfg = FitConfig::new(3);
        cfg.penalties = penalty_sets[k % penalty_sets.len()];
        cfg.max_iter = MONO_ITERS;
        cfg.rel_tol = f64::MIN_POSITIVE;
        cfg.seed = k as u64;
        let r = fit(&data, &cfg).map_err(|e| format!("dataset {k}: {e}"))?;
        ensure(r.loss_trace.len() == MONO_ITERS + 1, || {
            format!("dataset {k}: stopped after {} iterations", r.iterations)
        })?;
        for (t, w) in r.loss_trace.windows(2).enumerate() {
            let rel = (w[1] - w[0]) / w[0];
            worst = worst.max(rel);
            ensure(w[1] <= w[0] * (1.0 + MONO_SLACK), || {
                format!("dataset {k}, step {t}: {} -> {} (relative increase {rel:e})", w[0], w[1])
            })?;
        }
        if r.equilibrium.stable {
            col.fits.push((r, data));
        }
    }
    Ok(format!(
        "{MONO_DATASETS} datasets x {MONO_ITERS} steps; largest relative change {worst:.2e}"
    ))
}

fn criterion_5(col: &mut Collected) -> Check {
    let mut worst = 0.0f64;
    let mut count = 0;
    for seed in 0..10u64 {
        for rho in [0.0, 0.2, 0.5] {
            let c = SimCondition {
                seed,
                ..SimCondition::new(0.0, rho, 60)
            };
            let (data, truth) = simulation::generate(&c).map_err(|e| e.to_string())?;
            let next = update_step(&truth, &data, &Penalties::zero(), 1e-12).map_err(|e| e.to_string())?;
            let diff = [
                (next.x().as_matrix() - truth.x().as_matrix()).abs().max(),
                (next.theta1().as_matrix() - truth.theta1().as_matrix()).abs().max(),
                (next.theta2().as_matrix() - truth.theta2().as_matrix()).abs().max(),
            ]
            .into_iter()
            .fold(0.0, f64::max);
            worst = worst.max(diff);
            ensure(diff <= FIXED_POINT_TOL, || format!("seed {seed}, rho {rho}: parameter moved by {diff:e}"))?;
            col.truths.push((truth, data));
            count += 1;
        }
    }
    Ok(format!("{count} exact datasets; largest parameter change {worst:.2e}"))
}

/// `||Y - X(Theta1 Y + Theta2 Y2)||_F / ||Y||_F` for `Y = M Y2`.
fn residual(params: &ModelParams, m: &DMatrix<f64>, y2: &NonNegMatrix) -> f64 {
    let y = m * y2.as_matrix();
    let implied = params.x().as_matrix()
        * (params.theta1().as_matrix() * &y + params.theta2().as_matrix() * y2.as_matrix());
    (&y - implied).norm() / y.norm()
}

fn criterion_6(col: &Collected) -> Check {
    let mut worst = 0.0f64;
    let mut n = 0;
    for (f, d) in &col.fits {
        let m = f.equilibrium.m_model.as_ref().ok_or("stable fit without M")?;
        let r = residual(&f.params, m, d.y2());
        worst = worst.max(r);
        n += 1;
        ensure(r < SELF_CONSISTENCY_TOL, || format!("fit {n}: residual {r:e}"))?;
    }
    for (p, d) in &col.truths {
        let eq = equilibrium(p).map_err(|e| e.to_string())?;
        let r = residual(p, eq.m_model.as_ref().ok_or("stable truth without M")?, d.y2());
        worst = worst.max(r);
        n += 1;
        ensure(r < SELF_CONSISTENCY_TOL, || format!("true parameters: residual {r:e}"))?;
    }
    Ok(format!("{n} stable solutions; largest residual {worst:.2e}"))
}

fn criterion_7(col: &mut Collected) -> Check {
    let mut detail = Vec::new();
    for (seed, rho) in [(71u64, 0.2), (72, 0.5), (73, 0.0)] {
        let c = SimCondition {
            seed,
            ..SimCondition::new(0.02, rho, 100)
        };
        let (data, _) = simulation::generate(&c).map_err(|e| e.to_string())?;
        let grid = CvGrid::default_for(&data);
        let mut base = FitConfig::new(3);
        base.seed = seed;
        let cv = cross_validate(&data, &grid, &base).map_err(|e| e.to_string())?;
        let best = cv.best_cell().clone();
        ensure(best.stable, || "selected cell not flagged stable".into())?;
        // Refit the winning cell on every fold independently.
        let folds = kfold_split(data.n(), grid.k_folds, seed).map_err(|e| e.to_string())?;
        ensure(folds == cv.fold_assignments, || "fold assignment not reproducible".into())?;
        let mut max_rho = 0.0f64;
        for f in 0..grid.k_folds {
            let train: Vec<usize> = (0..data.n()).filter(|&i| folds[i] != f).collect();
            let mut cfg = base.clone();
            cfg.q = best.q;
            cfg.penalties.lambda_x = grid.lambda_x;
            cfg.penalties.lambda_1 = best.lambda_1;
            cfg.penalties.lambda_2 = best.lambda_2;
            let r = fit(&data.select_columns(&train).unwrap(), &cfg).map_err(|e| e.to_string())?;
            max_rho = max_rho.max(r.equilibrium.rho);
            ensure(r.equilibrium.rho < 1.0, || format!("fold {f}: winning fit has rho {}", r.equilibrium.rho))?;
        }
        let n_unstable = cv.cells.iter().filter(|c| !c.stable).count();
        detail.push(format!(
            "rho_true {rho}: picked (l1 {:.3}, l2 {:.3}), max fold rho {max_rho:.3}, {n_unstable}/{} cells infeasible",
            best.lambda_1,
            best.lambda_2,
            cv.cells.len()
        ));
        col.cv.get_or_insert(cv);
    }
    Ok(detail.join("; "))
}

fn criterion_8(col: &mut Collected) -> Check {
    let c = SimCondition {
        seed: 800,
        ..SimCondition::new(0.0, 0.2, 200)
    };
    let (data, _) = simulation::generate(&c).map_err(|e| e.to_string())?;
    let cfg = FitConfig::new(3);
    let a = bootstrap(&data, &cfg, 30, 5).map_err(|e| e.to_string())?;
    let b = bootstrap(&data, &cfg, 30, 5).map_err(|e| e.to_string())?;
    ensure(a == b, || "same seed gave different bootstrap results".into())?;

    let mut covered = 0;
    let mut retained = 0;
    for k in 0..BOOT_OUTER {
        let c = SimCondition {
            seed: 1000 + k as u64,
            ..SimCondition::new(0.0, 0.2, 200)
        };
        let (data, _) = simulation::generate(&c).map_err(|e| e.to_string())?;
        let mut cfg = FitConfig::new(3);
        cfg.seed = k as u64;
        let r = bootstrap(&data, &cfg, BOOT_B, 77 + k as u64).map_err(|e| format!("repetition {k}: {e}"))?;
        let (lo, hi) = r.rho_interval;
        ensure(lo <= hi, || format!("repetition {k}: rho interval [{lo}, {hi}]"))?;
        ensure(r.ar_interval.0 <= r.ar_interval.1, || format!("repetition {k}: AR interval reversed"))?;
        if lo <= r.rho_point && r.rho_point <= hi {
            covered += 1;
        }
        retained += r.retained();
        if k == 0 {
            let point = fit(&data, &cfg).map_err(|e| e.to_string())?;
            col.artifact_parts = Some((point, r));
        }
    }
    let rate = covered as f64 / BOOT_OUTER as f64;
    ensure(rate >= BOOT_COVERAGE, || format!("point inside its interval in {covered}/{BOOT_OUTER}"))?;
    Ok(format!(
        "reproducible; point inside interval in {covered}/{BOOT_OUTER}; mean retained {:.1}/{BOOT_B}",
        retained as f64 / BOOT_OUTER as f64
    ))
}

/// Returns `None` when the dataset is not configured.
fn criterion_9() -> Option<Check> {
    let csv = std::env::var("NMFSEM_ABILITY_CSV").ok()?;
    let spec = std::env::var("NMFSEM_ABILITY_SPEC").ok()?;
    Some((|| {
        let specs = io::load_column_spec(&spec).map_err(|e| e.to_string())?;
        let d = io::load_dataset(&csv, &specs).map_err(|e| e.to_string())?;
        ensure(d.data.p1() == 9, || format!("expected 9 endogenous tests, got {}", d.data.p1()))?;
        let mut cfg = FitConfig::new(3);
        cfg.penalties.lambda_x = 100.0;
        let r = fit(&d.data, &cfg).map_err(|e| e.to_string())?;
        let x = r.params.x().as_matrix();
        let argmax = |i: usize| x.row(i).transpose().argmax().0;
        for g in 0..3 {
            let f = argmax(3 * g);
            ensure((3 * g..3 * g + 3).all(|i| argmax(i) == f), || format!("group {} split across factors", g + 1))?;
        }
        let groups: std::collections::BTreeSet<usize> = (0..3).map(|g| argmax(3 * g)).collect();
        ensure(groups.len() == 3, || "groups share a factor".into())?;
        let ar = r.equilibrium.ar.ok_or("unstable fit")?;
        let sc = r.metrics.ok_or("metrics undefined")?.sc_map;
        ensure((1.1..=1.6).contains(&ar), || format!("AR {ar:.3} outside [1.1, 1.6]"))?;
        ensure(sc >= 0.99, || format!("SC_map {sc:.4} < 0.99"))?;
        Ok(format!("block pattern recovered; AR {ar:.3}, SC_map {sc:.4}"))
    })())
}

fn criterion_10(col: &Collected) -> Check {
    let (point, boot) = col.artifact_parts.clone().ok_or("no bootstrap run to serialize")?;
    let mut art = RunArtifact::new(FitConfig::new(3), (1..=9).map(|i| format!("y{i}")).collect(), vec![
        "z1".into(),
        "z2".into(),
        "z3".into(),
    ])
    .map_err(|e| e.to_string())?;
    art.fit = Some(point.clone());
    art.bootstrap = Some(boot);
    art.cv = col.cv.clone();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("run.json");
    io::save_artifact(&art, &path).map_err(|e| e.to_string())?;
    let back = io::load_artifact(&path).map_err(|e| e.to_string())?;
    ensure(back == art, || "artifact changed on round trip".into())?;
    let first = std::fs::read(&path).map_err(|e| e.to_string())?;
    io::save_artifact(&back, &path).map_err(|e| e.to_string())?;
    ensure(std::fs::read(&path).map_err(|e| e.to_string())? == first, || "re-saved artifact differs".into())?;

    let labels = DiagramLabels {
        endogenous: art.endogenous.clone(),
        exogenous: art.exogenous.clone(),
    };
    let dot_a = io::export_diagram(&point, &labels, EdgeThreshold::default()).map_err(|e| e.to_string())?;
    let dot_b = io::export_diagram(&back.fit.unwrap(), &labels, EdgeThreshold::default()).map_err(|e| e.to_string())?;
    ensure(dot_a == dot_b, || "DOT output differs".into())?;
    Ok(format!("{} byte artifact round-trips exactly; DOT {} bytes identical", first.len(), dot_a.len()))
}

fn main() {
    let mut col = Collected {
        fits: Vec::new(),
        truths: Vec::new(),
        artifact_parts: None,
        cv: None,
    };
    let mut failures = 0;
    let mut report = |id: u32, name: &str, result: Option<Check>, started: Instant| {
        let secs = started.elapsed().as_secs_f64();
        match result {
            Some(Ok(d)) => println!("[PASS] {id:>2} {name}: {d} ({secs:.1}s)"),
            Some(Err(e)) => {
                failures += 1;
                println!("[FAIL] {id:>2} {name}: {e} ({secs:.1}s)");
            }
            None => println!(
                "[SKIP] {id:>2} {name}: set NMFSEM_ABILITY_CSV and NMFSEM_ABILITY_SPEC to run"
            ),
        }
    };

    let t = Instant::now();
    let r = criterion_1(&mut col);
    report(1, "noise-free study, qualitative pattern", Some(r), t);
    let t = Instant::now();
    report(2, "amplification ratio bounds", Some(criterion_2()), t);
    let t = Instant::now();
    report(3, "Neumann series vs direct solve", Some(criterion_3()), t);
    let t = Instant::now();
    let r = criterion_4(&mut col);
    report(4, "loss monotonicity", Some(r), t);
    let t = Instant::now();
    let r = criterion_5(&mut col);
    report(5, "exact data is a fixed point", Some(r), t);
    let t = Instant::now();
    report(6, "equilibrium self-consistency", Some(criterion_6(&col)), t);
    let t = Instant::now();
    let r = criterion_7(&mut col);
    report(7, "selection returns stable fits only", Some(r), t);
    let t = Instant::now();
    let r = criterion_8(&mut col);
    report(8, "bootstrap reproducibility and coverage", Some(r), t);
    let t = Instant::now();
    report(9, "ability data block pattern", criterion_9(), t);
    let t = Instant::now();
    report(10, "serialization and diagram determinism", Some(criterion_10(&col)), t);

    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}
