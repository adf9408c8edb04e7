//! Non-negative matrix factorization with an embedded simultaneous-equation
//! (latent feedback) structure.
//!
//! Endogenous data `Y1` are factored as `Y1 ~ X B` with the coefficient
//! matrix itself driven by the data, `B = Theta1 Y1 + Theta2 Y2`. Solving
//! the resulting system gives the equilibrium input-output operator
//! `M = (I - X Theta1)^{-1} X Theta2`, a latent analogue of the Leontief
//! inverse.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod error;
pub mod estimation;
pub mod evaluation;
pub mod io;
pub mod matrix;
pub mod model;
pub mod selection;
pub mod simulation;

pub use dataset::Dataset;
pub use error::{Error, Result};
pub use estimation::{fit, FitConfig, FitResult, InitMethod, Penalties};
pub use evaluation::{BootstrapResult, EvalMetrics};
pub use matrix::NonNegMatrix;
pub use model::{EquilibriumSummary, ModelParams};
