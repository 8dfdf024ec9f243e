//! Optimal transport between uniform measures on landmark sets: ground
//! costs, exact and entropic solvers, barycentric projection and the
//! fixed-plan gradient of the quadratic transport cost.

mod assignment;
mod flow;
mod plan;
mod sinkhorn;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::landmarks::LandmarkSet;

pub use assignment::solve_assignment;
pub use flow::solve_transportation;
pub use plan::TransportPlan;
pub use sinkhorn::{sinkhorn_uniform, SinkhornOutput, SinkhornParams};

/// Largest `N·M` accepted by the exact solvers.
pub const EXACT_SIZE_LIMIT: usize = 10_000;

/// Exponent applied to the Euclidean ground distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CostPower {
    Linear,
    Squared,
}

impl CostPower {
    fn apply(self, d2: f64) -> f64 {
        match self {
            CostPower::Linear => d2.sqrt(),
            CostPower::Squared => d2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum Solver {
    #[default]
    Exact,
    Sinkhorn(SinkhornParams),
}

#[derive(Debug, Clone)]
pub struct TransportSolution {
    pub plan: TransportPlan,
    /// `Σ P_ij C_ij` (entropy excluded).
    pub cost: f64,
    /// Always true for the exact solver.
    pub converged: bool,
}

pub fn cost_matrix(source: &LandmarkSet, target: &LandmarkSet, power: CostPower) -> DMatrix<f64> {
    let (s, t) = (source.points(), target.points());
    DMatrix::from_fn(s.len(), t.len(), |i, j| power.apply((s[i] - t[j]).norm_squared()))
}

fn exact_plan(cost: &DMatrix<f64>) -> Result<TransportPlan> {
    let (n, m) = cost.shape();
    if n * m > EXACT_SIZE_LIMIT {
        return Err(Error::TooLarge {
            rows: n,
            cols: m,
            limit: EXACT_SIZE_LIMIT,
        });
    }
    if n == m {
        return Ok(TransportPlan::from_permutation(&solve_assignment(cost)));
    }
    let flow = solve_transportation(cost);
    let total = (n * m) as f64;
    Ok(TransportPlan::with_uniform_marginals(flow.map(|f| f as f64 / total)))
}

fn solve_with_cost(cost: &DMatrix<f64>, solver: &Solver) -> Result<TransportSolution> {
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::InvalidInput("cost matrix has non-finite entries".into()));
    }
    match solver {
        Solver::Exact => {
            let plan = exact_plan(cost)?;
            let value = plan.cost(cost);
            Ok(TransportSolution {
                plan,
                cost: value,
                converged: true,
            })
        }
        Solver::Sinkhorn(params) => {
            let out = sinkhorn_uniform(cost, params)?;
            if !out.converged {
                log::debug!(
                    "sinkhorn stopped after {} iterations with marginal error {:e}",
                    out.iterations,
                    out.marginal_error
                );
            }
            let value = out.plan.cost(cost);
            Ok(TransportSolution {
                plan: out.plan,
                cost: value,
                converged: out.converged,
            })
        }
    }
}

/// Optimal plan for the chosen ground cost and solver.
pub fn solve(
    source: &LandmarkSet,
    target: &LandmarkSet,
    solver: &Solver,
    power: CostPower,
) -> Result<TransportSolution> {
    solve_with_cost(&cost_matrix(source, target, power), solver)
}

/// Exact squared-Euclidean transport: assignment for equal sizes,
/// integral min-cost flow otherwise.
pub fn solve_exact(source: &LandmarkSet, target: &LandmarkSet) -> Result<TransportSolution> {
    solve(source, target, &Solver::Exact, CostPower::Squared)
}

pub fn solve_sinkhorn(
    source: &LandmarkSet,
    target: &LandmarkSet,
    params: &SinkhornParams,
) -> Result<TransportSolution> {
    solve(source, target, &Solver::Sinkhorn(*params), CostPower::Squared)
}

pub fn w2_squared(source: &LandmarkSet, target: &LandmarkSet, solver: &Solver) -> Result<f64> {
    Ok(solve(source, target, solver, CostPower::Squared)?.cost)
}

pub fn w1(source: &LandmarkSet, target: &LandmarkSet, solver: &Solver) -> Result<f64> {
    Ok(solve(source, target, solver, CostPower::Linear)?.cost)
}

/// Maps each source point to the plan-weighted mean of the target points.
pub fn barycentric_projection(plan: &TransportPlan, target: &LandmarkSet) -> Result<LandmarkSet> {
    let (n, m) = plan.shape();
    if m != target.len() {
        return Err(Error::DimensionMismatch(format!(
            "plan has {m} columns but target has {} points",
            target.len()
        )));
    }
    let t = target.points();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut mass = 0.0;
        let mut acc = Vec2::zeros();
        for j in 0..m {
            let w = plan.get(i, j);
            mass += w;
            acc += t[j] * w;
        }
        if mass <= 0.0 {
            return Err(Error::Degenerate(format!("plan row {i} carries no mass")));
        }
        out.push(acc / mass);
    }
    LandmarkSet::new(out)
}

/// Gradient of `Σ P_ij ‖s_i − t_j‖²` with respect to each `s_i`, plan fixed.
pub fn grad_w2_source(source: &LandmarkSet, target: &LandmarkSet, plan: &TransportPlan) -> Result<Vec<Vec2>> {
    let (n, m) = plan.shape();
    if n != source.len() || m != target.len() {
        return Err(Error::DimensionMismatch(format!(
            "plan is {n}x{m} for sets of sizes {} and {}",
            source.len(),
            target.len()
        )));
    }
    let (s, t) = (source.points(), target.points());
    Ok((0..n)
        .map(|i| {
            (0..m).fold(Vec2::zeros(), |acc, j| {
                acc + (s[i] - t[j]) * (2.0 * plan.get(i, j))
            })
        })
        .collect())
}
