use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Coupling between a source set of N points and a target set of M points.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    weights: DMatrix<f64>,
    source_marginal: Vec<f64>,
    target_marginal: Vec<f64>,
}

impl TransportPlan {
    /// Builds a plan and checks non-negativity and both marginals to `tol`.
    pub fn new(
        weights: DMatrix<f64>,
        source_marginal: Vec<f64>,
        target_marginal: Vec<f64>,
        tol: f64,
    ) -> Result<Self> {
        let plan = Self::from_parts(weights, source_marginal, target_marginal)?;
        let err = plan.marginal_error();
        if err > tol {
            return Err(Error::InvalidInput(format!(
                "plan marginals violated by {err:e} (tolerance {tol:e})"
            )));
        }
        Ok(plan)
    }

    fn from_parts(
        weights: DMatrix<f64>,
        source_marginal: Vec<f64>,
        target_marginal: Vec<f64>,
    ) -> Result<Self> {
        if weights.nrows() != source_marginal.len() || weights.ncols() != target_marginal.len() {
            return Err(Error::DimensionMismatch(format!(
                "plan is {}x{} but marginals have lengths {} and {}",
                weights.nrows(),
                weights.ncols(),
                source_marginal.len(),
                target_marginal.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidInput("plan entries must be finite and non-negative".into()));
        }
        Ok(Self {
            weights,
            source_marginal,
            target_marginal,
        })
    }

    /// Plan with uniform marginals `1/N`, `1/M`; marginals are not re-checked.
    pub(crate) fn with_uniform_marginals(weights: DMatrix<f64>) -> Self {
        let (n, m) = weights.shape();
        Self {
            weights,
            source_marginal: vec![1.0 / n as f64; n],
            target_marginal: vec![1.0 / m as f64; m],
        }
    }

    /// `1/N` times the permutation matrix sending row `i` to column `perm[i]`.
    pub fn from_permutation(perm: &[usize]) -> Self {
        let n = perm.len();
        let mut w = DMatrix::zeros(n, n);
        for (i, &j) in perm.iter().enumerate() {
            w[(i, j)] = 1.0 / n as f64;
        }
        Self::with_uniform_marginals(w)
    }

    pub fn identity(n: usize) -> Self {
        Self::from_permutation(&(0..n).collect::<Vec<_>>())
    }

    /// Product coupling `a bᵀ` of uniform marginals.
    pub fn independent(n: usize, m: usize) -> Self {
        Self::with_uniform_marginals(DMatrix::from_element(n, m, 1.0 / (n * m) as f64))
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn shape(&self) -> (usize, usize) {
        self.weights.shape()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.weights[(i, j)]
    }

    pub fn source_marginal(&self) -> &[f64] {
        &self.source_marginal
    }

    pub fn target_marginal(&self) -> &[f64] {
        &self.target_marginal
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.weights.row_iter().map(|r| r.sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        self.weights.column_iter().map(|c| c.sum()).collect()
    }

    /// Largest absolute deviation of a row or column sum from its marginal.
    pub fn marginal_error(&self) -> f64 {
        let rows = self
            .row_sums()
            .into_iter()
            .zip(&self.source_marginal)
            .map(|(s, a)| (s - a).abs());
        let cols = self
            .col_sums()
            .into_iter()
            .zip(&self.target_marginal)
            .map(|(s, b)| (s - b).abs());
        rows.chain(cols).fold(0.0, f64::max)
    }

    /// `Σ P_ij C_ij`.
    pub fn cost(&self, cost: &DMatrix<f64>) -> f64 {
        debug_assert_eq!(cost.shape(), self.weights.shape());
        self.weights.iter().zip(cost.iter()).map(|(p, c)| p * c).sum()
    }

    /// Column index of the largest entry in each row (lowest index on ties).
    pub fn argmax_rows(&self) -> Vec<usize> {
        self.weights
            .row_iter()
            .map(|r| {
                let mut best = 0;
                for j in 1..r.len() {
                    if r[j] > r[best] {
                        best = j;
                    }
                }
                best
            })
            .collect()
    }
}

#[derive(Serialize, Deserialize)]
struct PlanRepr {
    weights: Vec<Vec<f64>>,
    source_marginal: Vec<f64>,
    target_marginal: Vec<f64>,
}

impl Serialize for TransportPlan {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        PlanRepr {
            weights: self.weights.row_iter().map(|r| r.iter().copied().collect()).collect(),
            source_marginal: self.source_marginal.clone(),
            target_marginal: self.target_marginal.clone(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for TransportPlan {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let repr = PlanRepr::deserialize(deserializer)?;
        let rows = repr.weights.len();
        let cols = repr.weights.first().map_or(0, Vec::len);
        if repr.weights.iter().any(|r| r.len() != cols) {
            return Err(serde::de::Error::custom("ragged plan weights"));
        }
        let weights = DMatrix::from_row_iterator(rows, cols, repr.weights.into_iter().flatten());
        TransportPlan::from_parts(weights, repr.source_marginal, repr.target_marginal)
            .map_err(serde::de::Error::custom)
    }
}
