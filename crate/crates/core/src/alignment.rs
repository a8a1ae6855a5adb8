use std::ops::Deref;

use ndarray::Array2;

use crate::{Error, Result};

/// `n1 x n2` nonnegative matrix of matching scores between source and target nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentMatrix(Array2<f64>);

impl AlignmentMatrix {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::Numerical(format!(
                "alignment matrix entries must be finite and nonnegative, found {v}"
            )));
        }
        Ok(AlignmentMatrix(values))
    }

    pub(crate) fn new_unchecked(values: Array2<f64>) -> Self {
        debug_assert!(values.iter().all(|v| v.is_finite() && *v >= 0.0));
        AlignmentMatrix(values)
    }

    /// All entries `1 / (n1 n2)`.
    pub fn uniform(n1: usize, n2: usize) -> Self {
        AlignmentMatrix(Array2::from_elem((n1, n2), 1.0 / (n1 * n2) as f64))
    }

    pub fn n1(&self) -> usize {
        self.0.nrows()
    }

    pub fn n2(&self) -> usize {
        self.0.ncols()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }

    pub fn total_mass(&self) -> f64 {
        self.0.sum()
    }

    /// Applies ReLU, then divides by the global sum.
    ///
    /// Returns `None` when nothing positive survives the ReLU.
    pub fn from_similarity(sim: &Array2<f64>) -> Option<Self> {
        let relu = sim.mapv(|v| if v > 0.0 { v } else { 0.0 });
        let total = relu.sum();
        if !(total > 0.0 && total.is_finite()) {
            return None;
        }
        Some(AlignmentMatrix(relu / total))
    }
}

impl Deref for AlignmentMatrix {
    type Target = Array2<f64>;

    fn deref(&self) -> &Array2<f64> {
        &self.0
    }
}
