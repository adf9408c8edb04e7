//! Synthetic data with known structure and the Monte Carlo harness used to
//! check that the fitted metrics respond to noise and feedback strength.
//!
//! Reference generator: columns of `X_true` are symmetric Dirichlet,
//! `Theta2_true` and `Y2` are uniform on `[0, 1]`, and `Theta1_true` is a
//! uniform draw rescaled so that `rho(X_true Theta1_true)` equals the
//! requested feedback strength. `Y1` is the exact equilibrium plus
//! Gaussian noise truncated so no entry goes negative.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::estimation::{fit, FitConfig, FitResult};
use crate::matrix::{self, NonNegMatrix};
use crate::model::{self, ModelParams};

/// Concentration of the symmetric Dirichlet for columns of `X_true`.
pub const DIRICHLET_ALPHA: f64 = 1.0;
const MAX_REDRAWS: usize = 100;
const MAX_NOISE_REJECTIONS: usize = 1000;
/// Power-iteration tolerance used when planting the feedback strength.
const PLANT_TOL: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimCondition {
    pub p1: usize,
    pub p2: usize,
    pub q: usize,
    pub n: usize,
    pub sigma: f64,
    pub rho_true: f64,
    /// Number of replications.
    pub r: usize,
    pub seed: u64,
}

impl SimCondition {
    /// Default shape (P1 = 9, P2 = 3, Q = 3) with the given noise level,
    /// feedback strength and sample size.
    pub fn new(sigma: f64, rho_true: f64, n: usize) -> Self {
        Self {
            p1: 9,
            p2: 3,
            q: 3,
            n,
            sigma,
            rho_true,
            r: 50,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho_true >= 0.0 && self.rho_true < 1.0) {
            return Err(Error::InvalidConfig(format!("rho_true must be in [0, 1), got {}", self.rho_true)));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidConfig(format!("sigma must be >= 0, got {}", self.sigma)));
        }
        if self.p1 == 0 || self.p2 == 0 || self.q == 0 || self.n < 2 {
            return Err(Error::InvalidConfig("p1, p2, q must be >= 1 and n >= 2".into()));
        }
        Ok(())
    }

    /// Row label in the style `rho_true=0.2, N=200` (noise appended when
    /// non-zero).
    pub fn label(&self) -> String {
        let mut s = format!("rho_true={}, N={}", self.rho_true, self.n);
        if self.sigma > 0.0 {
            let _ = write!(s, ", sigma={}", self.sigma);
        }
        s
    }
}

/// The four noise-free conditions of the reference study, in table order.
pub fn reference_conditions(r: usize, seed: u64) -> Vec<SimCondition> {
    [(0.0, 50), (0.0, 200), (0.2, 50), (0.2, 200)]
        .into_iter()
        .map(|(rho, n)| SimCondition {
            r,
            seed,
            ..SimCondition::new(0.0, rho, n)
        })
        .collect()
}

/// Deterministic seed for a (base seed, condition, replicate) triple.
pub fn stream_seed(seed: u64, condition: usize, replicate: usize) -> u64 {
    // splitmix64 finalizer over a simple mix of the three indices
    let mut z = seed
        .wrapping_add((condition as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add((replicate as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9))
        .wrapping_add(0x94D0_49BB_1331_11EB);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn dirichlet_columns(rng: &mut ChaCha8Rng, rows: usize, cols: usize, alpha: f64) -> DMatrix<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("alpha > 0");
    let mut x = DMatrix::from_fn(rows, cols, |_, _| gamma.sample(rng));
    for mut c in x.column_iter_mut() {
        let s = c.sum();
        if s > 0.0 {
            c.scale_mut(1.0 / s);
        } else {
            c.fill(1.0 / rows as f64);
        }
    }
    x
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.gen::<f64>())
}

/// Draws one dataset and the parameters that generated it.
pub fn generate(condition: &SimCondition) -> Result<(Dataset, ModelParams)> {
    generate_with_rng(condition, &mut ChaCha8Rng::seed_from_u64(condition.seed))
}

fn generate_with_rng(c: &SimCondition, rng: &mut ChaCha8Rng) -> Result<(Dataset, ModelParams)> {
    c.validate()?;
    let x = dirichlet_columns(rng, c.p1, c.q, DIRICHLET_ALPHA);
    let t2 = uniform(rng, c.q, c.p2);
    let x_nn = NonNegMatrix::from_trusted(x.clone());

    let t1 = if c.rho_true == 0.0 {
        DMatrix::zeros(c.q, c.p1)
    } else {
        let mut planted = None;
        for _ in 0..MAX_REDRAWS {
            let raw = uniform(rng, c.q, c.p1);
            let f = NonNegMatrix::from_trusted(&x * &raw);
            let r = matrix::spectral_radius(&f, PLANT_TOL, 100_000)?.value;
            if r > 0.0 {
                planted = Some(raw * (c.rho_true / r));
                break;
            }
        }
        planted.ok_or_else(|| {
            Error::DegenerateInput("could not draw a Theta1 with positive spectral radius".into())
        })?
    };
    let params = ModelParams::new(
        x_nn,
        NonNegMatrix::from_trusted(t1),
        NonNegMatrix::from_trusted(t2),
    )?;

    let y2 = uniform(rng, c.p2, c.n);
    let m = if c.rho_true == 0.0 {
        params.direct().into_inner()
    } else {
        matrix::solve_i_minus(&params.feedback(), params.direct().as_matrix())?
    };
    let mut y1 = m * &y2;
    if c.sigma > 0.0 {
        let normal = Normal::new(0.0, c.sigma).expect("sigma >= 0");
        for v in y1.iter_mut() {
            let floor = -*v;
            let mut eps = normal.sample(rng);
            let mut tries = 0;
            while eps < floor && tries < MAX_NOISE_REJECTIONS {
                eps = normal.sample(rng);
                tries += 1;
            }
            *v = (*v + eps).max(0.0);
        }
    } else {
        y1.apply(|v| *v = v.max(0.0));
    }
    let data = Dataset::new(NonNegMatrix::new(y1)?, NonNegMatrix::from_trusted(y2))?;
    Ok((data, params))
}

/// Replaces the first observation by zeros in both blocks. The equilibrium
/// maps zero input to zero output, so the relation between the blocks is
/// kept, and every variable then has minimum 0: the `[0, 1]` rescaling done
/// on load becomes a pure per-variable scaling, which the model absorbs
/// exactly. Used when exporting synthetic data to CSV.
pub fn anchor_at_origin(data: &Dataset) -> Result<Dataset> {
    let mut y1 = data.y1().as_matrix().clone();
    let mut y2 = data.y2().as_matrix().clone();
    y1.column_mut(0).fill(0.0);
    y2.column_mut(0).fill(0.0);
    Dataset::new(NonNegMatrix::new(y1)?, NonNegMatrix::new(y2)?)
}

/// Everything produced by one Monte Carlo replicate.
#[derive(Debug)]
pub struct ReplicateOutcome {
    pub condition: usize,
    pub replicate: usize,
    pub data: Dataset,
    pub truth: ModelParams,
    pub fit: Result<FitResult>,
}

impl ReplicateOutcome {
    /// `(rho_hat, AR, SC_map, SC_cov, MAE)` when the fit succeeded, was
    /// stable and all metrics are defined.
    pub fn record(&self) -> Option<[f64; 5]> {
        let f = self.fit.as_ref().ok()?;
        let m = f.metrics?;
        Some([f.equilibrium.rho, f.equilibrium.ar?, m.sc_map, m.sc_cov, m.mae])
    }
}

/// The dataset and true parameters of one replicate, as used by
/// [`simulate_replicate`].
pub fn replicate_data(condition: &SimCondition, condition_index: usize, replicate: usize) -> Result<(Dataset, ModelParams)> {
    let s = stream_seed(condition.seed, condition_index, replicate);
    generate_with_rng(condition, &mut ChaCha8Rng::seed_from_u64(s))
}

/// Generates and fits one replicate. The fit seed is derived from the same
/// stream as the data.
pub fn simulate_replicate(
    condition: &SimCondition,
    condition_index: usize,
    replicate: usize,
    fit_config: &FitConfig,
) -> Result<ReplicateOutcome> {
    let s = stream_seed(condition.seed, condition_index, replicate);
    let (data, truth) = replicate_data(condition, condition_index, replicate)?;
    let mut cfg = fit_config.clone();
    cfg.q = condition.q;
    cfg.seed = s;
    let fit = fit(&data, &cfg);
    Ok(ReplicateOutcome {
        condition: condition_index,
        replicate,
        data,
        truth,
        fit,
    })
}

/// Per-condition means and standard deviations over successful replicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSummary {
    pub condition: SimCondition,
    pub mean_rho_hat: f64,
    pub mean_ar: f64,
    pub mean_sc_map: f64,
    pub mean_sc_cov: f64,
    pub mean_mae: f64,
    pub sd_rho_hat: f64,
    pub sd_ar: f64,
    pub sd_sc_map: f64,
    pub sd_sc_cov: f64,
    pub sd_mae: f64,
    /// Replicates contributing to the means.
    pub n_ok: usize,
    /// Replicates excluded: failed fits, unstable fits, or undefined metrics.
    pub n_excluded: usize,
}

/// Runs every replicate of every condition. Replicates run in parallel;
/// the returned order is (condition, replicate) regardless of scheduling.
pub fn run_study_outcomes(
    conditions: &[SimCondition],
    fit_config: &FitConfig,
) -> Result<Vec<Vec<ReplicateOutcome>>> {
    for c in conditions {
        c.validate()?;
    }
    conditions
        .iter()
        .enumerate()
        .map(|(ci, c)| {
            (0..c.r)
                .into_par_iter()
                .map(|r| simulate_replicate(c, ci, r, fit_config))
                .collect::<Result<Vec<_>>>()
        })
        .collect()
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = if v.len() > 1 {
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, sd)
}

pub fn summarize(condition: &SimCondition, outcomes: &[ReplicateOutcome]) -> SimSummary {
    let records: Vec<[f64; 5]> = outcomes.iter().filter_map(|o| o.record()).collect();
    let n_excluded = outcomes.len() - records.len();
    if n_excluded > 0 {
        log::warn!("{}: {n_excluded} replicate(s) excluded", condition.label());
    }
    let col = |k: usize| mean_sd(&records.iter().map(|r| r[k]).collect::<Vec<_>>());
    let (mr, sr) = col(0);
    let (ma, sa) = col(1);
    let (mm, sm) = col(2);
    let (mc, sc) = col(3);
    let (me, se) = col(4);
    SimSummary {
        condition: condition.clone(),
        mean_rho_hat: mr,
        mean_ar: ma,
        mean_sc_map: mm,
        mean_sc_cov: mc,
        mean_mae: me,
        sd_rho_hat: sr,
        sd_ar: sa,
        sd_sc_map: sm,
        sd_sc_cov: sc,
        sd_mae: se,
        n_ok: records.len(),
        n_excluded,
    }
}

pub fn run_study(conditions: &[SimCondition], fit_config: &FitConfig) -> Result<Vec<SimSummary>> {
    let outcomes = run_study_outcomes(conditions, fit_config)?;
    Ok(conditions
        .iter()
        .zip(&outcomes)
        .map(|(c, o)| summarize(c, o))
        .collect())
}

/// CSV with one row per condition.
pub fn summary_csv(summaries: &[SimSummary]) -> String {
    let mut out = String::from(
        "condition,sigma,rho_true,n,r,rho_hat,ar_hat,sc_map,sc_cov,mae,\
         sd_rho_hat,sd_ar_hat,sd_sc_map,sd_sc_cov,sd_mae,n_ok,n_excluded\n",
    );
    for s in summaries {
        let c = &s.condition;
        let _ = writeln!(
            out,
            "\"{}\",{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{},{}",
            c.label(),
            c.sigma,
            c.rho_true,
            c.n,
            c.r,
            s.mean_rho_hat,
            s.mean_ar,
            s.mean_sc_map,
            s.mean_sc_cov,
            s.mean_mae,
            s.sd_rho_hat,
            s.sd_ar,
            s.sd_sc_map,
            s.sd_sc_cov,
            s.sd_mae,
            s.n_ok,
            s.n_excluded
        );
    }
    out
}

/// Aligned text table: Condition, rho_hat, AR_hat, SC_map, SC_cov, MAE.
pub fn summary_table(summaries: &[SimSummary]) -> String {
    let labels: Vec<String> = summaries.iter().map(|s| s.condition.label()).collect();
    let w = labels.iter().map(String::len).chain([9]).max().unwrap_or(9);
    let mut out = format!(
        "{:<w$}  {:>7}  {:>7}  {:>7}  {:>7}  {:>7}\n",
        "Condition", "rho_hat", "AR_hat", "SC_map", "SC_cov", "MAE"
    );
    for (s, label) in summaries.iter().zip(&labels) {
        let _ = writeln!(
            out,
            "{:<w$}  {:>7.3}  {:>7.2}  {:>7.3}  {:>7.3}  {:>7.3}",
            label, s.mean_rho_hat, s.mean_ar, s.mean_sc_map, s.mean_sc_cov, s.mean_mae
        );
    }
    out
}

/// Relative equilibrium residual of a stable fit on its own data; `None`
/// for unstable or failed fits.
pub fn self_consistency(outcome: &ReplicateOutcome) -> Option<f64> {
    let f = outcome.fit.as_ref().ok()?;
    let y_hat = model::predict(&f.equilibrium, outcome.data.y2()).ok()?;
    Some(model::equilibrium_residual(&f.params, &y_hat, outcome.data.y2()))
}
