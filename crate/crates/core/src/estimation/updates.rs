//! Penalized objective and the regularized multiplicative updates.
//!
//! With `B = T1 Y1 + T2 Y2` every quantity the updates need can be formed
//! from the second-moment matrices `S11 = Y1 Y1'`, `S12 = Y1 Y2'` and
//! `S22 = Y2 Y2'`, so one step costs O(P^2 Q) regardless of N:
//!
//! * `Y1 B' = (T1 S11 + T2 S21)'`
//! * `B B'  = (T1 S11 + T2 S21) T1' + (T1 S12 + T2 S22) T2'`
//! * `X' Yhat Y1' = X'X (T1 S11 + T2 S21)`, `X' Yhat Y2' = X'X (T1 S12 + T2 S22)`
//!
//! The objective itself is evaluated on the residual matrix directly; the
//! moment-expansion form loses too many digits near an exact fit.

use nalgebra::DMatrix;

use super::Penalties;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::model::ModelParams;

/// Columns of `X` whose sum falls below this before renormalization are
/// considered dead and reset to uniform.
const DEAD_COLUMN_SUM: f64 = 1e-10;

/// Second moments of a dataset, computed once per fit.
#[derive(Debug, Clone)]
pub(crate) struct Moments {
    pub s11: DMatrix<f64>,
    pub s12: DMatrix<f64>,
    pub s21: DMatrix<f64>,
    pub s22: DMatrix<f64>,
}

impl Moments {
    pub fn new(data: &Dataset) -> Self {
        let y1 = data.y1().as_matrix();
        let y2 = data.y2().as_matrix();
        let s12 = y1 * y2.transpose();
        Self {
            s11: y1 * y1.transpose(),
            s21: s12.transpose(),
            s12,
            s22: y2 * y2.transpose(),
        }
    }
}

fn check(params: &ModelParams, data: &Dataset) -> Result<()> {
    if params.p1() != data.p1() || params.p2() != data.p2() {
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

/// Squared off-diagonal Frobenius norm of the Gram matrix `X'X`.
fn off_diagonal_gram_sq(x: &DMatrix<f64>) -> f64 {
    let g = x.transpose() * x;
    let mut s = 0.0;
    for j in 0..g.ncols() {
        for i in 0..g.nrows() {
            if i != j {
                s += g[(i, j)] * g[(i, j)];
            }
        }
    }
    s
}

pub(crate) fn loss_parts(
    x: &DMatrix<f64>,
    t1: &DMatrix<f64>,
    t2: &DMatrix<f64>,
    y1: &DMatrix<f64>,
    y2: &DMatrix<f64>,
    pen: &Penalties,
) -> f64 {
    let b = t1 * y1 + t2 * y2;
    let resid = y1 - x * b;
    let mut l = resid.norm_squared();
    if pen.lambda_x > 0.0 {
        l += 0.5 * pen.lambda_x * off_diagonal_gram_sq(x);
    }
    l + pen.lambda_1 * t1.sum() + pen.lambda_2 * t2.sum()
}

/// Penalized objective
/// `||Y1 - X(T1 Y1 + T2 Y2)||_F^2 + lx/2 ||X'X - diag(X'X)||_F^2 + l1 |T1|_1 + l2 |T2|_1`.
pub fn loss(params: &ModelParams, data: &Dataset, penalties: &Penalties) -> Result<f64> {
    check(params, data)?;
    Ok(loss_parts(
        params.x(),
        params.theta1(),
        params.theta2(),
        data.y1(),
        data.y2(),
        penalties,
    ))
}

/// `m <- m .* num ./ max(den, floor)`.
fn multiplicative(m: &mut DMatrix<f64>, num: &DMatrix<f64>, den: &DMatrix<f64>, floor: f64) {
    for ((v, &n), &d) in m.iter_mut().zip(num.iter()).zip(den.iter()) {
        if *v != 0.0 {
            *v *= n / d.max(floor);
        }
    }
}

/// Orthogonality gradient term `X (X'X - diag(X'X))`.
fn orthogonality_term(x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut g = x.transpose() * x;
    g.fill_diagonal(0.0);
    x * g
}

/// Rescales columns of `x` to unit sum and the matching rows of each
/// `rows` matrix by the old sum, leaving `X B` unchanged.
pub(crate) fn renormalize(x: &mut DMatrix<f64>, rows: &mut [&mut DMatrix<f64>]) {
    let p1 = x.nrows() as f64;
    for j in 0..x.ncols() {
        let s = x.column(j).sum();
        if s < DEAD_COLUMN_SUM {
            log::warn!("latent component {j} collapsed (column sum {s:e}); resetting to uniform");
            x.column_mut(j).fill(1.0 / p1);
            continue;
        }
        x.column_mut(j).scale_mut(1.0 / s);
        for r in rows.iter_mut() {
            r.row_mut(j).scale_mut(s);
        }
    }
}

/// One sweep X -> Theta1 -> Theta2 on raw matrices.
pub(crate) fn step_in_place(
    x: &mut DMatrix<f64>,
    t1: &mut DMatrix<f64>,
    t2: &mut DMatrix<f64>,
    mom: &Moments,
    pen: &Penalties,
    floor: f64,
) {
    // X update: Y1 B' / (X B B' + lx X (X'X - diag)).
    let k1 = &*t1 * &mom.s11 + &*t2 * &mom.s21; // B Y1'
    let k2 = &*t1 * &mom.s12 + &*t2 * &mom.s22; // B Y2'
    let bbt = &k1 * t1.transpose() + &k2 * t2.transpose();
    let num = k1.transpose();
    let mut den = &*x * bbt;
    if pen.lambda_x > 0.0 {
        den += orthogonality_term(x) * pen.lambda_x;
    }
    multiplicative(x, &num, &den, floor);
    renormalize(x, &mut [&mut *t1, &mut *t2]);

    let xtx = x.transpose() * &*x;

    // Theta1 update: X' Y1 Y1' / (X' Yhat Y1' + l1/2).
    let num = x.transpose() * &mom.s11;
    let mut den = &xtx * (&*t1 * &mom.s11 + &*t2 * &mom.s21);
    den.add_scalar_mut(0.5 * pen.lambda_1);
    multiplicative(t1, &num, &den, floor);

    // Theta2 update: X' Y1 Y2' / (X' Yhat Y2' + l2/2).
    let num = x.transpose() * &mom.s12;
    let mut den = &xtx * (&*t1 * &mom.s12 + &*t2 * &mom.s22);
    den.add_scalar_mut(0.5 * pen.lambda_2);
    multiplicative(t2, &num, &den, floor);
}

/// One sweep of the feed-forward (`Theta1 = 0`) model `Y1 ~ X T Y2`.
pub(crate) fn feedforward_step_in_place(
    x: &mut DMatrix<f64>,
    t: &mut DMatrix<f64>,
    mom: &Moments,
    pen: &Penalties,
    floor: f64,
) {
    let k2 = &*t * &mom.s22; // B Y2'
    let bbt = &k2 * t.transpose();
    let num = &mom.s12 * t.transpose(); // Y1 B'
    let mut den = &*x * bbt;
    if pen.lambda_x > 0.0 {
        den += orthogonality_term(x) * pen.lambda_x;
    }
    multiplicative(x, &num, &den, floor);
    renormalize(x, &mut [&mut *t]);

    let xtx = x.transpose() * &*x;
    let num = x.transpose() * &mom.s12;
    let mut den = &xtx * (&*t * &mom.s22);
    den.add_scalar_mut(0.5 * pen.lambda_2);
    multiplicative(t, &num, &den, floor);
}

/// Applies the three regularized multiplicative rules in the order
/// `X`, `Theta1`, `Theta2`, each using the freshly updated predecessors.
///
/// Denominators are floored at `epsilon_floor`. After the `X` update its
/// columns are rescaled to sum to one and the rows of both `Theta`
/// matrices absorb the scale, so the fitted `X B` is not disturbed by the
/// renormalization. Entries that are exactly zero stay zero.
pub fn update_step(
    params: &ModelParams,
    data: &Dataset,
    penalties: &Penalties,
    epsilon_floor: f64,
) -> Result<ModelParams> {
    check(params, data)?;
    let mom = Moments::new(data);
    let (mut x, mut t1, mut t2) = params.clone().into_parts();
    step_in_place(&mut x, &mut t1, &mut t2, &mom, penalties, epsilon_floor);
    Ok(ModelParams::from_trusted(x, t1, t2))
}
