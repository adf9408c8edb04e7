use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::NonNegMatrix;

/// Paired observations: endogenous `y1` (P1 x N) and exogenous `y2`
/// (P2 x N). Variables are rows, observations are columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    y1: NonNegMatrix,
    y2: NonNegMatrix,
}

impl Dataset {
    pub fn new(y1: NonNegMatrix, y2: NonNegMatrix) -> Result<Self> {
        if y1.ncols() != y2.ncols() {
            return Err(Error::Dimension(format!(
                "y1 has {} observations, y2 has {}",
                y1.ncols(),
                y2.ncols()
            )));
        }
        if y1.ncols() < 2 {
            return Err(Error::Dimension(format!(
                "need at least 2 observations, got {}",
                y1.ncols()
            )));
        }
        Ok(Self { y1, y2 })
    }

    pub fn y1(&self) -> &NonNegMatrix {
        &self.y1
    }

    pub fn y2(&self) -> &NonNegMatrix {
        &self.y2
    }

    /// Number of endogenous variables (P1).
    pub fn p1(&self) -> usize {
        self.y1.nrows()
    }

    /// Number of exogenous variables (P2).
    pub fn p2(&self) -> usize {
        self.y2.nrows()
    }

    /// Number of observations (N).
    pub fn n(&self) -> usize {
        self.y1.ncols()
    }

    /// Dataset made of the given observation columns, in the given order.
    /// Indices may repeat (bootstrap resampling).
    pub fn select_columns(&self, idx: &[usize]) -> Result<Self> {
        if let Some(&bad) = idx.iter().find(|&&i| i >= self.n()) {
            return Err(Error::Dimension(format!(
                "column index {bad} out of range for {} observations",
                self.n()
            )));
        }
        let y1 = NonNegMatrix::from_trusted(self.y1.select_columns(idx));
        let y2 = NonNegMatrix::from_trusted(self.y2.select_columns(idx));
        Self::new(y1, y2)
    }
}
