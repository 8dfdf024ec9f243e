//! Free-support Wasserstein barycenter of equally sized landmark sets.
//!
//! The support keeps N points. Each outer iteration transports the current
//! estimate onto every sample, projects barycentrically, and replaces the
//! estimate by the mean of the projections.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::landmarks::LandmarkSet;
use crate::transport::{self, barycentric_projection, CostPower, Solver};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BarycenterInit {
    #[default]
    FirstSample,
    MeanOfSamples,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BarycenterConfig {
    pub max_outer_iters: usize,
    /// Mean point displacement per iteration below which iteration stops.
    pub convergence_tol: f64,
    pub init: BarycenterInit,
    pub solver: Solver,
}

impl Default for BarycenterConfig {
    fn default() -> Self {
        Self {
            max_outer_iters: 100,
            convergence_tol: 1e-6,
            init: BarycenterInit::FirstSample,
            solver: Solver::Exact,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Barycenter {
    pub support: LandmarkSet,
    /// Mean W2² from each visited estimate to the samples, starting with the
    /// initialization and ending with the returned support.
    pub history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

fn check_samples(samples: &[LandmarkSet]) -> Result<usize> {
    let first = samples
        .first()
        .ok_or_else(|| Error::InvalidInput("barycenter needs at least one sample".into()))?;
    let n = first.len();
    if let Some((k, s)) = samples.iter().enumerate().find(|(_, s)| s.len() != n) {
        return Err(Error::DimensionMismatch(format!(
            "sample {k} has {} points, expected {n}",
            s.len()
        )));
    }
    Ok(n)
}

fn mean_sets(sets: &[LandmarkSet], n: usize) -> Result<LandmarkSet> {
    let k = sets.len() as f64;
    let points = (0..n)
        .map(|i| sets.iter().fold(Vec2::zeros(), |acc, s| acc + s.points()[i]) / k)
        .collect();
    LandmarkSet::new(points)
}

/// Plans from `estimate` to every sample; returns the projections and the mean cost.
fn transport_step(
    estimate: &LandmarkSet,
    samples: &[LandmarkSet],
    solver: &Solver,
) -> Result<(Vec<LandmarkSet>, f64)> {
    let solved: Vec<(LandmarkSet, f64)> = samples
        .par_iter()
        .map(|s| {
            let sol = transport::solve(estimate, s, solver, CostPower::Squared)?;
            Ok((barycentric_projection(&sol.plan, s)?, sol.cost))
        })
        .collect::<Result<_>>()?;
    let mean_cost = solved.iter().map(|(_, c)| c).sum::<f64>() / samples.len() as f64;
    Ok((solved.into_iter().map(|(p, _)| p).collect(), mean_cost))
}

pub fn compute_barycenter(samples: &[LandmarkSet], config: &BarycenterConfig) -> Result<Barycenter> {
    let n = check_samples(samples)?;
    if !(config.convergence_tol > 0.0) {
        return Err(Error::InvalidInput("convergence_tol must be positive".into()));
    }
    let mut estimate = match config.init {
        BarycenterInit::FirstSample => samples[0].clone(),
        BarycenterInit::MeanOfSamples => mean_sets(samples, n)?,
    };
    let mut history = Vec::with_capacity(config.max_outer_iters + 1);
    let mut converged = false;
    let mut iterations = 0;

    let (mut projections, cost) = transport_step(&estimate, samples, &config.solver)?;
    history.push(cost);
    while iterations < config.max_outer_iters {
        let next = mean_sets(&projections, n)?;
        let displacement = next
            .points()
            .iter()
            .zip(estimate.points())
            .map(|(a, b)| (a - b).norm())
            .sum::<f64>()
            / n as f64;
        estimate = next;
        iterations += 1;
        let (p, cost) = transport_step(&estimate, samples, &config.solver)?;
        projections = p;
        history.push(cost);
        if displacement < config.convergence_tol {
            converged = true;
            break;
        }
    }
    Ok(Barycenter {
        support: estimate,
        history,
        iterations,
        converged,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub size: usize,
    /// Mean W2 (not squared) from subset barycenters to the full barycenter.
    pub mean_w2: f64,
    pub std_w2: f64,
}

/// Sensitivity of the barycenter to the number of samples it is computed from.
pub fn barycenter_sample_curve(
    samples: &[LandmarkSet],
    subset_sizes: &[usize],
    repeats: usize,
    seed: u64,
    config: &BarycenterConfig,
) -> Result<Vec<CurveRow>> {
    check_samples(samples)?;
    if repeats == 0 {
        return Err(Error::InvalidInput("repeats must be positive".into()));
    }
    if let Some(&bad) = subset_sizes.iter().find(|&&k| k == 0 || k > samples.len()) {
        return Err(Error::InvalidInput(format!(
            "subset size {bad} outside 1..={}",
            samples.len()
        )));
    }
    let reference = compute_barycenter(samples, config)?.support;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draws: Vec<(usize, Vec<usize>)> = subset_sizes
        .iter()
        .flat_map(|&k| (0..repeats).map(move |_| k))
        .map(|k| {
            let mut idx = index::sample(&mut rng, samples.len(), k).into_vec();
            idx.sort_unstable();
            (k, idx)
        })
        .collect();

    let distances: Vec<f64> = draws
        .par_iter()
        .map(|(_, idx)| {
            let subset: Vec<LandmarkSet> = idx.iter().map(|&i| samples[i].clone()).collect();
            let bary = compute_barycenter(&subset, config)?.support;
            Ok(transport::w2_squared(&bary, &reference, &config.solver)?.max(0.0).sqrt())
        })
        .collect::<Result<_>>()?;

    Ok(subset_sizes
        .iter()
        .enumerate()
        .map(|(k, &size)| {
            let d = &distances[k * repeats..(k + 1) * repeats];
            let mean = d.iter().sum::<f64>() / repeats as f64;
            let var = if repeats > 1 {
                d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (repeats - 1) as f64
            } else {
                0.0
            };
            CurveRow {
                size,
                mean_w2: mean,
                std_w2: var.sqrt(),
            }
        })
        .collect())
}
