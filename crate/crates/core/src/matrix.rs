//! Dense non-negative matrices and the spectral quantities used by the
//! equilibrium analysis: spectral radius, operator 1-norm, and the two
//! routes to `(I - A)^{-1}` (truncated Neumann series and LU solve).

use std::ops::Deref;

use nalgebra::DMatrix;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Default relative tolerance for [`spectral_radius`].
pub const POWER_TOL: f64 = 1e-10;
/// Default iteration cap for [`spectral_radius`].
pub const POWER_MAX_ITER: usize = 10_000;
/// Spectral radii above this are flagged as near-critical in summaries.
pub const NEAR_CRITICAL_RHO: f64 = 0.99;
/// Consecutive iterations the extrapolated stopping rule must hold.
const FALLBACK_STREAK: usize = 5;

/// A dense real matrix whose entries are all finite and non-negative.
///
/// Validation happens once, at construction. The wrapped matrix is only
/// reachable through shared references so the invariant cannot be broken
/// afterwards.
#[derive(Debug, Clone, PartialEq)]
pub struct NonNegMatrix(DMatrix<f64>);

impl NonNegMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() == 0 || m.ncols() == 0 {
            return Err(Error::EmptyMatrix {
                rows: m.nrows(),
                cols: m.ncols(),
            });
        }
        for j in 0..m.ncols() {
            for i in 0..m.nrows() {
                let v = m[(i, j)];
                if !v.is_finite() {
                    return Err(Error::InvalidEntry {
                        row: i,
                        col: j,
                        value: v,
                        reason: "not finite",
                    });
                }
                if v < 0.0 {
                    return Err(Error::InvalidEntry {
                        row: i,
                        col: j,
                        value: v,
                        reason: "negative",
                    });
                }
            }
        }
        Ok(Self(m))
    }

    /// Builds from row-major values.
    pub fn from_row_slice(rows: usize, cols: usize, values: &[f64]) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{} values supplied for a {rows}x{cols} matrix",
                values.len()
            )));
        }
        Self::new(DMatrix::from_row_slice(rows, cols, values))
    }

    pub fn zeros(rows: usize, cols: usize) -> Result<Self> {
        Self::new(DMatrix::zeros(rows, cols))
    }

    pub fn identity(n: usize) -> Result<Self> {
        Self::new(DMatrix::identity(n, n))
    }

    /// Wraps a matrix the caller has already established to be finite and
    /// non-negative (products and multiplicative updates of valid inputs).
    pub(crate) fn from_trusted(m: DMatrix<f64>) -> Self {
        debug_assert!(m.iter().all(|v| v.is_finite() && *v >= 0.0));
        Self(m)
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn is_square(&self) -> bool {
        self.0.nrows() == self.0.ncols()
    }

    /// Operator 1-norm: the largest column sum.
    pub fn op_norm_1(&self) -> f64 {
        op_norm_1(&self.0)
    }

    /// Product of two non-negative matrices, which is again non-negative.
    pub fn mul(&self, rhs: &NonNegMatrix) -> Result<NonNegMatrix> {
        if self.ncols() != rhs.nrows() {
            return Err(Error::Dimension(format!(
                "cannot multiply {}x{} by {}x{}",
                self.nrows(),
                self.ncols(),
                rhs.nrows(),
                rhs.ncols()
            )));
        }
        Ok(Self::from_trusted(&self.0 * &rhs.0))
    }
}

impl Deref for NonNegMatrix {
    type Target = DMatrix<f64>;

    fn deref(&self) -> &DMatrix<f64> {
        &self.0
    }
}

impl TryFrom<DMatrix<f64>> for NonNegMatrix {
    type Error = Error;

    fn try_from(m: DMatrix<f64>) -> Result<Self> {
        Self::new(m)
    }
}

/// Operator 1-norm (maximum absolute column sum) of a real matrix.
pub fn op_norm_1(m: &DMatrix<f64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Outcome of a power iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralRadius {
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Dominant eigenvalue of a non-negative square matrix by power iteration.
///
/// The iteration runs on the shifted matrix `A + I`, whose Perron root is
/// `rho(A) + 1` and which has no other eigenvalue of equal modulus, so
/// cyclic (periodic) matrices do not make the iterate oscillate. While the
/// iterate is strictly positive the Collatz-Wielandt quotients
/// `min_i (Bv)_i / v_i <= rho(B) <= max_i (Bv)_i / v_i` bracket the answer;
/// iteration stops once that bracket is narrower than `tol` relative to the
/// shifted root. Reducible matrices whose bracket never closes fall back on
/// an extrapolated (Aitken) error estimate of the norm sequence, held to a
/// hundredth of `tol` for several consecutive iterations.
pub fn spectral_radius(m: &NonNegMatrix, tol: f64, max_iter: usize) -> Result<SpectralRadius> {
    if !m.is_square() {
        return Err(Error::Dimension(format!(
            "spectral radius needs a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidConfig(format!("power-iteration tol must be > 0, got {tol}")));
    }
    let n = m.nrows();
    let a = m.as_matrix();
    let mut v = nalgebra::DVector::from_element(n, 1.0 / (n as f64).sqrt());
    let mut estimate = f64::NAN;
    let mut prev_delta = f64::NAN;
    let mut worst_ratio = [1.0_f64; FALLBACK_STREAK];
    let mut settled = 0;

    for it in 1..=max_iter.max(1) {
        let w = a * &v + &v;
        let norm = w.norm();
        // Collatz-Wielandt bracket for the shifted matrix.
        let (mut lo, mut hi) = (f64::INFINITY, 0.0_f64);
        for i in 0..n {
            let q = w[i] / v[i];
            lo = lo.min(q);
            hi = hi.max(q);
        }
        v = w / norm;

        if hi - lo <= tol * hi {
            return Ok(SpectralRadius {
                value: (0.5 * (lo + hi) - 1.0).max(0.0),
                iterations: it,
                converged: true,
            });
        }
        if estimate.is_finite() {
            let delta = (norm - estimate).abs();
            // A complex subdominant pair makes single step ratios oscillate,
            // so the error estimate uses the worst of the recent ones.
            let ratio = if prev_delta > 0.0 { delta / prev_delta } else { 1.0 };
            worst_ratio.rotate_left(1);
            worst_ratio[FALLBACK_STREAK - 1] = ratio;
            let r = worst_ratio.iter().copied().fold(0.0, f64::max);
            let err = if r < 1.0 { delta * r / (1.0 - r) } else { f64::INFINITY };
            if delta <= tol * norm && err <= 1e-2 * tol * norm {
                settled += 1;
            } else {
                settled = 0;
            }
            if settled >= FALLBACK_STREAK {
                return Ok(SpectralRadius {
                    value: (norm - 1.0).max(0.0),
                    iterations: it,
                    converged: true,
                });
            }
            prev_delta = delta;
        }
        estimate = norm;
    }
    Ok(SpectralRadius {
        value: (estimate - 1.0).max(0.0),
        iterations: max_iter,
        converged: false,
    })
}

/// [`spectral_radius`] with the default tolerance and iteration cap,
/// returning only the value.
pub fn rho(m: &NonNegMatrix) -> Result<f64> {
    let sr = spectral_radius(m, POWER_TOL, POWER_MAX_ITER)?;
    if !sr.converged {
        log::warn!(
            "power iteration stopped at {} iterations without converging (estimate {})",
            sr.iterations,
            sr.value
        );
    }
    Ok(sr.value)
}

fn require_square(m: &NonNegMatrix, what: &str) -> Result<()> {
    if m.is_square() {
        Ok(())
    } else {
        Err(Error::Dimension(format!(
            "{what} needs a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )))
    }
}

/// Truncated Neumann series `I + A + A^2 + ...`.
///
/// Terms are accumulated until the most recently added term has operator
/// 1-norm below `tol`.
pub fn neumann_inverse(a: &NonNegMatrix, tol: f64, max_terms: usize) -> Result<DMatrix<f64>> {
    require_square(a, "Neumann inverse")?;
    let r = rho(a)?;
    if r >= 1.0 {
        return Err(Error::Unstable { rho: r });
    }
    let n = a.nrows();
    let mut sum = DMatrix::<f64>::identity(n, n);
    let mut term = DMatrix::<f64>::identity(n, n);
    for k in 1..=max_terms {
        term = &term * a.as_matrix();
        sum += &term;
        if op_norm_1(&term) < tol {
            log::trace!("Neumann series truncated after {k} terms");
            return Ok(sum);
        }
    }
    Err(Error::NonConvergence {
        terms: max_terms,
        partial_sum: Box::new(sum),
    })
}

/// `(I - A)^{-1} B` by LU decomposition with partial pivoting.
pub fn solve_i_minus(a: &NonNegMatrix, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    require_square(a, "solve_i_minus")?;
    if b.nrows() != a.nrows() {
        return Err(Error::Dimension(format!(
            "right-hand side has {} rows, system has {}",
            b.nrows(),
            a.nrows()
        )));
    }
    let n = a.nrows();
    let lhs = DMatrix::<f64>::identity(n, n) - a.as_matrix();
    let lu = lhs.lu();
    // Pivots this small relative to the unit diagonal mean I - A is
    // numerically singular.
    let u = lu.u();
    if (0..n).any(|i| u[(i, i)].abs() < 1e-14) {
        return Err(Error::Singular);
    }
    lu.solve(b).ok_or(Error::Singular)
}

/// Row-major `{rows, cols, values}` representation used for serialization.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct MatrixRepr {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl MatrixRepr {
    fn from_matrix(m: &DMatrix<f64>) -> Self {
        let mut values = Vec::with_capacity(m.len());
        for i in 0..m.nrows() {
            values.extend(m.row(i).iter());
        }
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            values,
        }
    }

    fn into_matrix(self) -> std::result::Result<DMatrix<f64>, String> {
        if self.rows == 0 || self.cols == 0 {
            return Err(format!("empty matrix ({}x{})", self.rows, self.cols));
        }
        if self.values.len() != self.rows * self.cols {
            return Err(format!(
                "{} values for a {}x{} matrix",
                self.values.len(),
                self.rows,
                self.cols
            ));
        }
        Ok(DMatrix::from_row_slice(self.rows, self.cols, &self.values))
    }
}

impl Serialize for NonNegMatrix {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        MatrixRepr::from_matrix(&self.0).serialize(s)
    }
}

impl<'de> Deserialize<'de> for NonNegMatrix {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let m = MatrixRepr::deserialize(d)?
            .into_matrix()
            .map_err(serde::de::Error::custom)?;
        NonNegMatrix::new(m).map_err(serde::de::Error::custom)
    }
}

/// Serde helpers for plain real matrices, using the same row-major layout
/// as [`NonNegMatrix`].
pub mod dense_serde {
    use super::*;

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
        MatrixRepr::from_matrix(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<DMatrix<f64>, D::Error> {
        MatrixRepr::deserialize(d)?
            .into_matrix()
            .map_err(serde::de::Error::custom)
    }

    pub mod option {
        use super::*;

        pub fn serialize<S: Serializer>(
            m: &Option<DMatrix<f64>>,
            s: S,
        ) -> std::result::Result<S::Ok, S::Error> {
            m.as_ref().map(MatrixRepr::from_matrix).serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(
            d: D,
        ) -> std::result::Result<Option<DMatrix<f64>>, D::Error> {
            Option::<MatrixRepr>::deserialize(d)?
                .map(|r| r.into_matrix().map_err(serde::de::Error::custom))
                .transpose()
        }
    }
}
