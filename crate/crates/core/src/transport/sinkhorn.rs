//! Entropic optimal transport by log-domain Sinkhorn iterations.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::plan::TransportPlan;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinkhornParams {
    /// Entropic regularization, in squared normalized units.
    pub epsilon: f64,
    pub max_iters: usize,
    /// Stop once the largest marginal violation falls below this.
    pub tolerance: f64,
}

impl Default for SinkhornParams {
    fn default() -> Self {
        Self {
            epsilon: 1e-3,
            max_iters: 2000,
            tolerance: 1e-6,
        }
    }
}

impl SinkhornParams {
    pub fn with_epsilon(epsilon: f64) -> Self {
        Self {
            epsilon,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidInput(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidInput(format!(
                "tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidInput("max_iters must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SinkhornOutput {
    pub plan: TransportPlan,
    pub converged: bool,
    pub iterations: usize,
    pub marginal_error: f64,
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Annealing ratio for the epsilon schedule that warm-starts the duals.
const EPS_DECAY: f64 = 0.7;

/// Uniform-marginal Sinkhorn on a precomputed cost matrix.
///
/// Duals are warm-started by geometric epsilon annealing from the largest
/// cost down to `params.epsilon` (one update per stage), then iterated at the
/// target epsilon until the row marginals match. Iterations spent annealing
/// count toward `max_iters`.
pub fn sinkhorn_uniform(cost: &DMatrix<f64>, params: &SinkhornParams) -> Result<SinkhornOutput> {
    params.validate()?;
    let (n, m) = cost.shape();
    let log_a = -(n as f64).ln();
    let log_b = -(m as f64).ln();
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];

    let update = |eps: f64, f: &mut [f64], g: &mut [f64]| {
        for i in 0..n {
            f[i] = -eps * log_sum_exp((0..m).map(|j| (g[j] - cost[(i, j)]) / eps + log_b));
        }
        for j in 0..m {
            g[j] = -eps * log_sum_exp((0..n).map(|i| (f[i] - cost[(i, j)]) / eps + log_a));
        }
    };
    // Columns are exact after the g-update; the rows carry the violation.
    let row_error = |eps: f64, f: &[f64], g: &[f64]| {
        (0..n)
            .map(|i| {
                let s: f64 = (0..m)
                    .map(|j| ((f[i] + g[j] - cost[(i, j)]) / eps + log_a + log_b).exp())
                    .sum();
                (s - 1.0 / n as f64).abs()
            })
            .fold(0.0, f64::max)
    };

    let mut iterations = 0;
    let mut eps = cost.max().max(params.epsilon);
    while eps > params.epsilon && iterations < params.max_iters {
        update(eps, &mut f, &mut g);
        iterations += 1;
        eps = (eps * EPS_DECAY).max(params.epsilon);
    }
    let eps = params.epsilon;
    let mut err = f64::INFINITY;
    while iterations < params.max_iters {
        update(eps, &mut f, &mut g);
        iterations += 1;
        err = row_error(eps, &f, &g);
        if err <= params.tolerance {
            break;
        }
    }
    if !err.is_finite() {
        err = row_error(eps, &f, &g);
    }

    let weights = DMatrix::from_fn(n, m, |i, j| ((f[i] + g[j] - cost[(i, j)]) / eps + log_a + log_b).exp());
    Ok(SinkhornOutput {
        plan: TransportPlan::with_uniform_marginals(weights),
        converged: err <= params.tolerance,
        iterations,
        marginal_error: err,
    })
}
