//! Joint estimation of `(X, Theta1, Theta2)`.
//!
//! A fit proceeds in two stages. The feed-forward model `Y1 ~ X0 Theta0 Y2`
//! is fitted first; its basis seeds `X`, its coefficients seed `Theta2`, and
//! `M_simple = X0 Theta0` is kept as the structural benchmark. The full
//! model is then refined by the regularized multiplicative updates in
//! [`updates`] until the relative change of the penalized loss drops below
//! `rel_tol`. Stability is not enforced while iterating; it is reported on
//! the final parameters and enforced at selection time.

mod init;
mod updates;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub use init::{init_basis, init_feedforward, FeedForward, InitMethod};
pub use updates::{loss, update_step};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::evaluation::{self, EvalMetrics};
use crate::matrix;
use crate::model::{self, EquilibriumSummary, ModelParams};

/// Fraction of `mean(Theta0)` used as the constant starting value of
/// every `Theta1` entry.
pub const THETA1_INIT_FRACTION: f64 = 0.01;

/// Penalty weights of the objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Penalties {
    /// Orthogonality of the columns of `X`.
    pub lambda_x: f64,
    /// L1 sparsity of `Theta1`.
    pub lambda_1: f64,
    /// L1 sparsity of `Theta2`.
    pub lambda_2: f64,
}

impl Penalties {
    pub fn zero() -> Self {
        Self {
            lambda_x: 0.0,
            lambda_1: 0.0,
            lambda_2: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_x", self.lambda_x),
            ("lambda_1", self.lambda_1),
            ("lambda_2", self.lambda_2),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

impl Default for Penalties {
    fn default() -> Self {
        Self {
            lambda_x: 100.0,
            lambda_1: 0.0,
            lambda_2: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    /// Latent dimension Q.
    pub q: usize,
    pub penalties: Penalties,
    pub max_iter: usize,
    pub rel_tol: f64,
    pub init: InitMethod,
    pub epsilon_floor: f64,
    pub seed: u64,
}

impl FitConfig {
    pub fn new(q: usize) -> Self {
        Self {
            q,
            penalties: Penalties::default(),
            max_iter: 2000,
            rel_tol: 1e-6,
            init: InitMethod::Nndsvdar,
            epsilon_floor: 1e-12,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.q == 0 {
            return Err(Error::InvalidConfig("latent dimension q must be >= 1".into()));
        }
        self.penalties.validate()?;
        if !(self.rel_tol > 0.0) {
            return Err(Error::InvalidConfig(format!("rel_tol must be > 0, got {}", self.rel_tol)));
        }
        if !(self.epsilon_floor > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "epsilon_floor must be > 0, got {}",
                self.epsilon_floor
            )));
        }
        Ok(())
    }
}

/// A fitted model with its benchmark mapping, optimization trace and
/// equilibrium summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: ModelParams,
    /// Feed-forward benchmark `X0 Theta0` (P1 x P2).
    #[serde(with = "matrix::dense_serde")]
    pub m_simple: DMatrix<f64>,
    /// Penalized loss at the starting point followed by one entry per
    /// iteration.
    pub loss_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub equilibrium: EquilibriumSummary,
    /// In-sample metrics; absent for unstable fits or when a correlation is
    /// undefined.
    pub metrics: Option<EvalMetrics>,
}

/// Fits the full model.
pub fn fit(data: &Dataset, config: &FitConfig) -> Result<FitResult> {
    let ff = init_feedforward(data, config)?;
    let m_simple = ff.x0.as_matrix() * ff.theta0.as_matrix();

    let theta1_init = (THETA1_INIT_FRACTION * ff.theta0.mean()).max(config.epsilon_floor);
    let mut x = ff.x0.into_inner();
    let mut t2 = ff.theta0.into_inner();
    let mut t1 = DMatrix::from_element(config.q, data.p1(), theta1_init);

    let mom = updates::Moments::new(data);
    let (y1, y2) = (data.y1().as_matrix(), data.y2().as_matrix());
    let pen = &config.penalties;
    let mut trace = Vec::with_capacity(config.max_iter.min(10_000) + 1);
    trace.push(updates::loss_parts(&x, &t1, &t2, y1, y2, pen));
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=config.max_iter {
        updates::step_in_place(&mut x, &mut t1, &mut t2, &mom, pen, config.epsilon_floor);
        iterations = it;
        let l = updates::loss_parts(&x, &t1, &t2, y1, y2, pen);
        if !l.is_finite() {
            return Err(Error::NumericalFailure { iteration: it });
        }
        let prev = *trace.last().unwrap();
        trace.push(l);
        if init::relative_change(prev, l) < config.rel_tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::debug!("fit stopped at max_iter = {} before reaching rel_tol", config.max_iter);
    }

    let params = ModelParams::from_trusted(x, t1, t2);
    let equilibrium = model::equilibrium(&params)?;
    let metrics = if equilibrium.stable {
        evaluation::evaluate(&equilibrium, &m_simple, data).ok()
    } else {
        None
    };
    Ok(FitResult {
        params,
        m_simple,
        loss_trace: trace,
        iterations,
        converged,
        equilibrium,
        metrics,
    })
}
