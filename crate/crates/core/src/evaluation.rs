//! Structural fidelity metrics and bootstrap intervals for the feedback
//! quantities.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::estimation::{fit, FitConfig};
use crate::matrix::NonNegMatrix;
use crate::model::{self, EquilibriumSummary};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    /// Correlation of `vec(M_model)` with `vec(M_simple)`.
    pub sc_map: f64,
    /// Correlation of model-implied and sample second moments of `Y1`.
    pub sc_cov: f64,
    /// Mean absolute error of the equilibrium prediction `M_model Y2`.
    pub mae: f64,
}

/// Pearson correlation of two equally sized value sequences.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!("{} vs {} values", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(Error::Dimension("correlation needs at least 2 values".into()));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 {
        return Err(Error::UndefinedCorrelation("first argument"));
    }
    if sbb == 0.0 {
        return Err(Error::UndefinedCorrelation("second argument"));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

fn same_shape(a: &DMatrix<f64>, b: &DMatrix<f64>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension(format!(
            "{what}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Input-output structural correlation between the equilibrium operator
/// and the feed-forward benchmark.
pub fn sc_map(m_model: &DMatrix<f64>, m_simple: &DMatrix<f64>) -> Result<f64> {
    same_shape(m_model, m_simple, "sc_map")?;
    pearson(m_model.as_slice(), m_simple.as_slice())
}

/// Second-moment structural correlation between
/// `S_model = M (Y2 Y2') M'` and `S_sample = Y1 Y1'` (uncentered).
pub fn sc_cov(m_model: &DMatrix<f64>, data: &Dataset) -> Result<f64> {
    if m_model.nrows() != data.p1() || m_model.ncols() != data.p2() {
        return Err(Error::Dimension(format!(
            "M_model is {}x{}, data has P1={} and P2={}",
            m_model.nrows(),
            m_model.ncols(),
            data.p1(),
            data.p2()
        )));
    }
    let y1 = data.y1().as_matrix();
    let y2 = data.y2().as_matrix();
    let s_y2 = y2 * y2.transpose();
    let s_model = m_model * s_y2 * m_model.transpose();
    let s_sample = y1 * y1.transpose();
    pearson(s_model.as_slice(), s_sample.as_slice())
}

/// Mean absolute entrywise deviation.
pub fn mae(y1: &NonNegMatrix, y1_hat: &DMatrix<f64>) -> Result<f64> {
    same_shape(y1.as_matrix(), y1_hat, "mae")?;
    Ok((y1.as_matrix() - y1_hat).abs().sum() / y1.len() as f64)
}

/// All three metrics for a stable equilibrium.
pub fn evaluate(eq: &EquilibriumSummary, m_simple: &DMatrix<f64>, data: &Dataset) -> Result<EvalMetrics> {
    let m = eq.m_model()?;
    let y1_hat = model::predict(eq, data.y2())?;
    Ok(EvalMetrics {
        sc_map: sc_map(m, m_simple)?,
        sc_cov: sc_cov(m, data)?,
        mae: mae(data.y1(), &y1_hat)?,
    })
}

/// Percentile with linear interpolation between order statistics of
/// already sorted values.
pub fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of an empty sample");
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Central percentile interval `(lo, hi)` at the given coverage level.
pub fn percentile_interval(values: &[f64], level: f64) -> (f64, f64) {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    (percentile_sorted(&v, tail), percentile_sorted(&v, 1.0 - tail))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Resampling {
    /// Draw N columns with replacement.
    #[default]
    WithReplacement,
    /// Reuse the original columns and seed; every replicate reproduces the
    /// point fit. Only useful for testing the plumbing.
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapOptions {
    pub replicates: usize,
    pub seed: u64,
    pub level: f64,
    pub resampling: Resampling,
}

impl BootstrapOptions {
    pub fn new(replicates: usize, seed: u64) -> Self {
        Self {
            replicates,
            seed,
            level: 0.95,
            resampling: Resampling::WithReplacement,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    /// Requested replicates.
    pub b: usize,
    pub level: f64,
    pub rho_point: f64,
    pub rho_interval: (f64, f64),
    /// Absent when the point fit is unstable.
    pub ar_point: Option<f64>,
    pub ar_interval: (f64, f64),
    /// Replicates whose refit had `rho >= 1`; excluded from the intervals.
    pub n_unstable: usize,
    /// Replicates whose refit failed outright; excluded from the intervals.
    pub n_failed: usize,
    /// Values of the retained replicates, in replicate order.
    pub rho_values: Vec<f64>,
    pub ar_values: Vec<f64>,
}

impl BootstrapResult {
    pub fn retained(&self) -> usize {
        self.rho_values.len()
    }
}

enum Replicate {
    Stable { rho: f64, ar: f64 },
    Unstable,
    Failed,
}

/// Column indices for one replicate; stream `r` of the bootstrap seed.
fn resample_indices(n: usize, seed: u64, r: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(r as u64);
    (0..n).map(|_| rng.gen_range(0..n)).collect()
}

/// Nonparametric bootstrap of `rho(X Theta1)` and the amplification
/// ratio with fixed hyperparameters.
pub fn bootstrap(data: &Dataset, config: &FitConfig, b: usize, seed: u64) -> Result<BootstrapResult> {
    bootstrap_with(data, config, &BootstrapOptions::new(b, seed))
}

pub fn bootstrap_with(data: &Dataset, config: &FitConfig, opts: &BootstrapOptions) -> Result<BootstrapResult> {
    if opts.replicates < 2 {
        return Err(Error::InvalidConfig(format!(
            "bootstrap needs at least 2 replicates, got {}",
            opts.replicates
        )));
    }
    if !(opts.level > 0.0 && opts.level < 1.0) {
        return Err(Error::InvalidConfig(format!("level must be in (0, 1), got {}", opts.level)));
    }
    let point = fit(data, config)?;

    let outcomes: Vec<Replicate> = (0..opts.replicates)
        .into_par_iter()
        .map(|r| {
            let (sample, cfg) = match opts.resampling {
                Resampling::Identity => (data.clone(), config.clone()),
                Resampling::WithReplacement => {
                    let idx = resample_indices(data.n(), opts.seed, r);
                    let sample = match data.select_columns(&idx) {
                        Ok(s) => s,
                        Err(_) => return Replicate::Failed,
                    };
                    let mut cfg = config.clone();
                    cfg.seed = config.seed.wrapping_add(r as u64);
                    (sample, cfg)
                }
            };
            match fit(&sample, &cfg) {
                Ok(f) => match f.equilibrium.ar {
                    Some(ar) if f.equilibrium.stable => Replicate::Stable {
                        rho: f.equilibrium.rho,
                        ar,
                    },
                    _ => Replicate::Unstable,
                },
                Err(e) => {
                    log::debug!("bootstrap replicate {r} failed: {e}");
                    Replicate::Failed
                }
            }
        })
        .collect();

    let (mut rho_values, mut ar_values) = (Vec::new(), Vec::new());
    let (mut n_unstable, mut n_failed) = (0, 0);
    for o in outcomes {
        match o {
            Replicate::Stable { rho, ar } => {
                rho_values.push(rho);
                ar_values.push(ar);
            }
            Replicate::Unstable => n_unstable += 1,
            Replicate::Failed => n_failed += 1,
        }
    }
    if rho_values.len() < 2 {
        return Err(Error::InsufficientReplicates {
            stable: rho_values.len(),
            requested: opts.replicates,
        });
    }
    Ok(BootstrapResult {
        b: opts.replicates,
        level: opts.level,
        rho_point: point.equilibrium.rho,
        rho_interval: percentile_interval(&rho_values, opts.level),
        ar_point: point.equilibrium.ar,
        ar_interval: percentile_interval(&ar_values, opts.level),
        n_unstable,
        n_failed,
        rho_values,
        ar_values,
    })
}
