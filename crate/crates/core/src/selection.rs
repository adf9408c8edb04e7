//! K-fold cross-validation of the penalty weights (and optionally the latent
//! dimension) by held-out equilibrium MAE, restricted to stable fits.
//!
//! Every fold refits the whole model on its training columns. A cell is
//! feasible only when all of its fold fits succeed and are stable.

use std::cmp::Ordering;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::estimation::{fit, FitConfig};
use crate::evaluation;
use crate::model;

pub const DEFAULT_K_FOLDS: usize = 5;
pub const DEFAULT_LAMBDA_X: f64 = 100.0;
/// Multipliers of the data scale used by [`CvGrid::default_for`].
pub const DEFAULT_GRID_MULTIPLIERS: [f64; 5] = [0.0, 0.001, 0.01, 0.1, 1.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvGrid {
    pub lambda1_values: Vec<f64>,
    pub lambda2_values: Vec<f64>,
    pub lambda_x: f64,
    pub k_folds: usize,
    /// Candidate latent dimensions; `None` keeps the base config's `q`.
    pub q_values: Option<Vec<usize>>,
}

impl CvGrid {
    pub fn new(lambda1_values: Vec<f64>, lambda2_values: Vec<f64>) -> Self {
        Self {
            lambda1_values,
            lambda2_values,
            lambda_x: DEFAULT_LAMBDA_X,
            k_folds: DEFAULT_K_FOLDS,
            q_values: None,
        }
    }

    /// The multipliers in [`DEFAULT_GRID_MULTIPLIERS`] times the data scale
    /// `||Y1||_F^2 / P1`, the mean squared norm of an endogenous variable.
    pub fn default_for(data: &Dataset) -> Self {
        let scale = data_scale(data);
        let values: Vec<f64> = DEFAULT_GRID_MULTIPLIERS.iter().map(|m| m * scale).collect();
        Self::new(values.clone(), values)
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.lambda1_values.is_empty() || self.lambda2_values.is_empty() {
            return Err(Error::InvalidConfig("penalty grids must be non-empty".into()));
        }
        for &v in self.lambda1_values.iter().chain(&self.lambda2_values).chain([&self.lambda_x]) {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidConfig(format!("penalty values must be finite and >= 0, got {v}")));
            }
        }
        if let Some(qs) = &self.q_values {
            if qs.is_empty() || qs.contains(&0) {
                return Err(Error::InvalidConfig("q_values must be non-empty and >= 1".into()));
            }
        }
        if self.k_folds < 2 || self.k_folds > n {
            return Err(Error::InvalidConfig(format!(
                "k_folds must satisfy 2 <= k <= N = {n}, got {}",
                self.k_folds
            )));
        }
        Ok(())
    }
}

pub fn data_scale(data: &Dataset) -> f64 {
    data.y1().norm_squared() / data.p1() as f64
}

/// One grid cell with its per-fold and aggregated outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvCell {
    pub q: usize,
    pub lambda_1: f64,
    pub lambda_2: f64,
    /// Held-out MAE per fold; `None` when the fold fit failed or was unstable.
    pub fold_mae: Vec<Option<f64>>,
    /// Mean held-out MAE; present only when every fold contributed.
    pub mean_mae: Option<f64>,
    pub stable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    /// Cells in grid order: q outermost, then lambda_1, then lambda_2.
    pub cells: Vec<CvCell>,
    /// Index into `cells` of the selected cell.
    pub best: usize,
    /// Fold id of every column of the data.
    pub fold_assignments: Vec<usize>,
}

impl CvResult {
    pub fn best_cell(&self) -> &CvCell {
        &self.cells[self.best]
    }

    /// `q, lambda_1, lambda_2, mean_mae, stable` per cell, with fold MAEs
    /// appended.
    pub fn to_csv(&self) -> String {
        let k = self.cells.first().map_or(0, |c| c.fold_mae.len());
        let mut out = String::from("q,lambda_1,lambda_2,mean_mae,stable");
        for f in 0..k {
            out.push_str(&format!(",fold{f}_mae"));
        }
        out.push('\n');
        let fmt = |v: Option<f64>| v.map_or_else(String::new, |x| format!("{x}"));
        for c in &self.cells {
            out.push_str(&format!("{},{},{},{},{}", c.q, c.lambda_1, c.lambda_2, fmt(c.mean_mae), c.stable));
            for m in &c.fold_mae {
                out.push(',');
                out.push_str(&fmt(*m));
            }
            out.push('\n');
        }
        out
    }
}

/// Random partition of `0..n` into `k` folds whose sizes differ by at most
/// one. Returns the fold id of every index.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 || k > n {
        return Err(Error::InvalidConfig(format!("k-fold split needs 2 <= k <= n, got k = {k}, n = {n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        folds[i] = pos % k;
    }
    Ok(folds)
}

/// Orders feasible cells: lower mean MAE first, then the sparser cell
/// (larger `lambda_1 + lambda_2`), then larger `lambda_1`, then smaller `q`.
fn preference(a: &CvCell, b: &CvCell) -> Ordering {
    let (ma, mb) = (a.mean_mae.unwrap_or(f64::INFINITY), b.mean_mae.unwrap_or(f64::INFINITY));
    ma.total_cmp(&mb)
        .then_with(|| (b.lambda_1 + b.lambda_2).total_cmp(&(a.lambda_1 + a.lambda_2)))
        .then_with(|| b.lambda_1.total_cmp(&a.lambda_1))
        .then_with(|| a.q.cmp(&b.q))
}

/// Index of the preferred stable cell.
pub fn select_best(cells: &[CvCell]) -> Result<usize> {
    cells
        .iter()
        .enumerate()
        .filter(|(_, c)| c.stable && c.mean_mae.is_some())
        .min_by(|(_, a), (_, b)| preference(a, b))
        .map(|(i, _)| i)
        .ok_or(Error::NoFeasibleModel)
}

/// Fits every grid cell on every fold and selects the stable cell with the
/// smallest mean held-out equilibrium MAE.
///
/// `base_config` supplies the optimizer settings and the seed; its
/// penalties and `q` are overridden by the grid. The same seed drives the
/// fold split.
pub fn cross_validate(data: &Dataset, grid: &CvGrid, base_config: &FitConfig) -> Result<CvResult> {
    grid.validate(data.n())?;
    base_config.validate()?;
    let folds = kfold_split(data.n(), grid.k_folds, base_config.seed)?;
    let k = grid.k_folds;

    let splits: Vec<(Dataset, Dataset)> = (0..k)
        .map(|f| {
            let train: Vec<usize> = (0..data.n()).filter(|&i| folds[i] != f).collect();
            let test: Vec<usize> = (0..data.n()).filter(|&i| folds[i] == f).collect();
            Ok((data.select_columns(&train)?, held_out(data, &test)?))
        })
        .collect::<Result<_>>()?;

    let qs = grid.q_values.clone().unwrap_or_else(|| vec![base_config.q]);
    let mut cells_spec = Vec::new();
    for &q in &qs {
        for &l1 in &grid.lambda1_values {
            for &l2 in &grid.lambda2_values {
                cells_spec.push((q, l1, l2));
            }
        }
    }

    let jobs: Vec<(usize, usize)> = (0..cells_spec.len()).flat_map(|c| (0..k).map(move |f| (c, f))).collect();
    let maes: Vec<Option<f64>> = jobs
        .par_iter()
        .map(|&(c, f)| {
            let (q, l1, l2) = cells_spec[c];
            let mut cfg = base_config.clone();
            cfg.q = q;
            cfg.penalties.lambda_x = grid.lambda_x;
            cfg.penalties.lambda_1 = l1;
            cfg.penalties.lambda_2 = l2;
            fold_mae(&splits[f].0, &splits[f].1, &cfg)
        })
        .collect();

    let cells: Vec<CvCell> = cells_spec
        .iter()
        .enumerate()
        .map(|(c, &(q, lambda_1, lambda_2))| {
            let fold_mae = maes[c * k..(c + 1) * k].to_vec();
            let stable = fold_mae.iter().all(Option::is_some);
            let mean_mae = stable.then(|| fold_mae.iter().flatten().sum::<f64>() / k as f64);
            CvCell {
                q,
                lambda_1,
                lambda_2,
                fold_mae,
                mean_mae,
                stable,
            }
        })
        .collect();
    let best = select_best(&cells)?;
    Ok(CvResult {
        cells,
        best,
        fold_assignments: folds,
    })
}

/// Held-out columns may be a single observation, which [`Dataset::new`]
/// rejects; the test block only needs the two matrices side by side.
fn held_out(data: &Dataset, idx: &[usize]) -> Result<Dataset> {
    if idx.len() >= 2 {
        return data.select_columns(idx);
    }
    let doubled = [idx[0], idx[0]];
    data.select_columns(&doubled)
}

fn fold_mae(train: &Dataset, test: &Dataset, cfg: &FitConfig) -> Option<f64> {
    let result = match fit(train, cfg) {
        Ok(r) => r,
        Err(e) => {
            log::debug!("cv fit failed (q = {}, penalties {:?}): {e}", cfg.q, cfg.penalties);
            return None;
        }
    };
    if !result.equilibrium.stable {
        return None;
    }
    let y1_hat = model::predict(&result.equilibrium, test.y2()).ok()?;
    evaluation::mae(test.y1(), &y1_hat).ok()
}
