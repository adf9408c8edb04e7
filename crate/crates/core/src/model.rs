//! Structural objects of the model: the parameter triple `(X, Theta1,
//! Theta2)`, the coefficient matrix `B = Theta1 Y1 + Theta2 Y2`, and the
//! equilibrium operator `M = (I - X Theta1)^{-1} X Theta2` with its
//! amplification summaries.
//!
//! Feedback is interpreted as an equilibrium, not as transient dynamics;
//! nothing here iterates the system forward in time.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::matrix::{self, op_norm_1, NonNegMatrix, NEAR_CRITICAL_RHO};

/// Column sums of `X` must be within this of one.
pub const COLUMN_SUM_TOL: f64 = 1e-8;
/// Below this the direct-effect norm is treated as zero.
pub const DEGENERATE_DIRECT_NORM: f64 = 1e-12;

/// Fitted parameters. `x` is P1 x Q with columns summing to one, `theta1`
/// is Q x P1 (feedback), `theta2` is Q x P2 (exogenous drivers).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams")]
pub struct ModelParams {
    x: NonNegMatrix,
    theta1: NonNegMatrix,
    theta2: NonNegMatrix,
}

#[derive(Deserialize)]
struct RawParams {
    x: NonNegMatrix,
    theta1: NonNegMatrix,
    theta2: NonNegMatrix,
}

impl TryFrom<RawParams> for ModelParams {
    type Error = Error;

    fn try_from(r: RawParams) -> Result<Self> {
        ModelParams::new(r.x, r.theta1, r.theta2)
    }
}

impl ModelParams {
    pub fn new(x: NonNegMatrix, theta1: NonNegMatrix, theta2: NonNegMatrix) -> Result<Self> {
        check_shapes(&x, &theta1, &theta2)?;
        for (j, col) in x.column_iter().enumerate() {
            let s: f64 = col.sum();
            if (s - 1.0).abs() > COLUMN_SUM_TOL {
                return Err(Error::InvalidConfig(format!(
                    "column {j} of X sums to {s}, expected 1"
                )));
            }
        }
        Ok(Self { x, theta1, theta2 })
    }

    /// Rescales each column of `x` to sum to one and scales the matching
    /// rows of `theta1`/`theta2` by the inverse factor, so `X B` is
    /// unchanged.
    pub fn normalized(x: NonNegMatrix, theta1: NonNegMatrix, theta2: NonNegMatrix) -> Result<Self> {
        check_shapes(&x, &theta1, &theta2)?;
        let (mut x, mut t1, mut t2) = (x.into_inner(), theta1.into_inner(), theta2.into_inner());
        for j in 0..x.ncols() {
            let s = x.column(j).sum();
            if s <= 0.0 {
                return Err(Error::DegenerateInput(format!("column {j} of X is zero")));
            }
            x.column_mut(j).scale_mut(1.0 / s);
            t1.row_mut(j).scale_mut(s);
            t2.row_mut(j).scale_mut(s);
        }
        Self::new(
            NonNegMatrix::from_trusted(x),
            NonNegMatrix::from_trusted(t1),
            NonNegMatrix::from_trusted(t2),
        )
    }

    pub(crate) fn from_trusted(x: DMatrix<f64>, theta1: DMatrix<f64>, theta2: DMatrix<f64>) -> Self {
        Self {
            x: NonNegMatrix::from_trusted(x),
            theta1: NonNegMatrix::from_trusted(theta1),
            theta2: NonNegMatrix::from_trusted(theta2),
        }
    }

    pub fn x(&self) -> &NonNegMatrix {
        &self.x
    }

    pub fn theta1(&self) -> &NonNegMatrix {
        &self.theta1
    }

    pub fn theta2(&self) -> &NonNegMatrix {
        &self.theta2
    }

    /// Latent dimension Q.
    pub fn q(&self) -> usize {
        self.x.ncols()
    }

    pub fn p1(&self) -> usize {
        self.x.nrows()
    }

    pub fn p2(&self) -> usize {
        self.theta2.ncols()
    }

    /// Latent feedback operator `X Theta1` (P1 x P1).
    pub fn feedback(&self) -> NonNegMatrix {
        NonNegMatrix::from_trusted(self.x.as_matrix() * self.theta1.as_matrix())
    }

    /// Direct-effect operator `X Theta2` (P1 x P2).
    pub fn direct(&self) -> NonNegMatrix {
        NonNegMatrix::from_trusted(self.x.as_matrix() * self.theta2.as_matrix())
    }

    pub(crate) fn into_parts(self) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        (self.x.into_inner(), self.theta1.into_inner(), self.theta2.into_inner())
    }
}

fn check_shapes(x: &NonNegMatrix, t1: &NonNegMatrix, t2: &NonNegMatrix) -> Result<()> {
    let q = x.ncols();
    if t1.nrows() != q || t2.nrows() != q {
        return Err(Error::Dimension(format!(
            "latent dimension disagrees: X has {q} columns, Theta1 has {} rows, Theta2 has {} rows",
            t1.nrows(),
            t2.nrows()
        )));
    }
    if t1.ncols() != x.nrows() {
        return Err(Error::Dimension(format!(
            "Theta1 must be {q}x{}, got {}x{}",
            x.nrows(),
            t1.nrows(),
            t1.ncols()
        )));
    }
    Ok(())
}

fn check_data(params: &ModelParams, data: &Dataset) -> Result<()> {
    if data.p1() != params.p1() || data.p2() != params.p2() {
        return Err(Error::Dimension(format!(
            "parameters expect P1={} and P2={}, data has P1={} and P2={}",
            params.p1(),
            params.p2(),
            data.p1(),
            data.p2()
        )));
    }
    Ok(())
}

/// `B = Theta1 Y1 + Theta2 Y2` (Q x N).
pub fn coefficient_matrix(params: &ModelParams, data: &Dataset) -> Result<NonNegMatrix> {
    check_data(params, data)?;
    let b = params.theta1.as_matrix() * data.y1().as_matrix()
        + params.theta2.as_matrix() * data.y2().as_matrix();
    Ok(NonNegMatrix::from_trusted(b))
}

/// Equilibrium quantities of a parameter set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumSummary {
    /// `(I - X Theta1)^{-1} X Theta2`; absent when unstable.
    #[serde(with = "matrix::dense_serde::option")]
    pub m_model: Option<DMatrix<f64>>,
    /// `X Theta2`.
    #[serde(with = "matrix::dense_serde")]
    pub m_direct: DMatrix<f64>,
    /// Spectral radius of `X Theta1`.
    pub rho: f64,
    /// Operator 1-norm of `X Theta1`.
    pub feedback_norm: f64,
    /// Amplification ratio; absent when unstable.
    pub ar: Option<f64>,
    /// `1 / (1 - ||X Theta1||_1)`, only when that norm is below one.
    pub ar_upper_bound: Option<f64>,
    pub stable: bool,
    /// `rho` above [`NEAR_CRITICAL_RHO`].
    pub near_critical: bool,
}

impl EquilibriumSummary {
    pub fn m_model(&self) -> Result<&DMatrix<f64>> {
        self.m_model.as_ref().ok_or(Error::Unstable { rho: self.rho })
    }
}

pub fn equilibrium(params: &ModelParams) -> Result<EquilibriumSummary> {
    let feedback = params.feedback();
    let direct = params.direct();
    let direct_norm = direct.op_norm_1();
    if direct_norm < DEGENERATE_DIRECT_NORM {
        return Err(Error::DegenerateDirectEffect { norm: direct_norm });
    }
    let rho = matrix::rho(&feedback)?;
    let feedback_norm = feedback.op_norm_1();
    let ar_upper_bound = (feedback_norm < 1.0).then(|| 1.0 / (1.0 - feedback_norm));
    let stable = rho < 1.0;
    let (m_model, ar) = if stable {
        let m = matrix::solve_i_minus(&feedback, direct.as_matrix())?;
        let ar = op_norm_1(&m) / direct_norm;
        (Some(m), Some(ar))
    } else {
        (None, None)
    };
    Ok(EquilibriumSummary {
        m_model,
        m_direct: direct.into_inner(),
        rho,
        feedback_norm,
        ar,
        ar_upper_bound,
        stable,
        near_critical: rho > NEAR_CRITICAL_RHO,
    })
}

/// Neumann terms `[XT2, (XT1) XT2, ..., (XT1)^k XT2]` of the equilibrium
/// operator; each term is one more round of latent propagation.
pub fn neumann_terms(params: &ModelParams, k: usize) -> Result<Vec<DMatrix<f64>>> {
    let feedback = params.feedback();
    let rho = matrix::rho(&feedback)?;
    if rho >= 1.0 {
        return Err(Error::Unstable { rho });
    }
    let mut terms = Vec::with_capacity(k + 1);
    let mut term = params.direct().into_inner();
    for _ in 0..k {
        let next = feedback.as_matrix() * &term;
        terms.push(term);
        term = next;
    }
    terms.push(term);
    Ok(terms)
}

/// Equilibrium prediction `M_model Y2` (P1 x N).
pub fn predict(summary: &EquilibriumSummary, y2: &NonNegMatrix) -> Result<DMatrix<f64>> {
    let m = summary.m_model()?;
    if m.ncols() != y2.nrows() {
        return Err(Error::Dimension(format!(
            "M_model has {} columns, y2 has {} rows",
            m.ncols(),
            y2.nrows()
        )));
    }
    Ok(m * y2.as_matrix())
}

/// Relative fixed-point residual `||Y - X(Theta1 Y + Theta2 Y2)||_F / ||Y||_F`
/// of a candidate equilibrium `Y`.
pub fn equilibrium_residual(params: &ModelParams, y1_hat: &DMatrix<f64>, y2: &NonNegMatrix) -> f64 {
    let implied = params.x.as_matrix()
        * (params.theta1.as_matrix() * y1_hat + params.theta2.as_matrix() * y2.as_matrix());
    let denom = y1_hat.norm();
    if denom == 0.0 {
        return implied.norm();
    }
    (y1_hat - implied).norm() / denom
}
