use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::heatmap::{knn_graph, HeatmapParams};
use crate::landmarks::LandmarkSet;
use crate::regularizers::{
    barycenter_reg, geometric_reg_with_graphs, grad_geometric_reg, AffineCentering, RegCoeffs,
};
use crate::transport::Solver;

use super::metrics::normalized_w1;
use super::synthetic::SyntheticSample;
use super::template::OUTER_EYE_CORNERS;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationConfig {
    pub enable_flat: bool,
    pub enable_geo: bool,
    pub steps: usize,
    pub learning_rate: f64,
    pub coeffs: RegCoeffs,
    pub heatmap: HeatmapParams,
    /// Metrics are recorded at step 0, every `eval_every` steps, and at the end.
    pub eval_every: usize,
    /// Half-width of a uniform perturbation added to the barycenter initialization.
    pub init_jitter: f64,
    pub seed: u64,
    pub solver: Solver,
    pub centering: AffineCentering,
    /// Reference indices for the normalized W1 metric.
    pub outer_eye_corners: (usize, usize),
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            enable_flat: true,
            enable_geo: true,
            steps: 500,
            learning_rate: 0.5,
            coeffs: RegCoeffs::default(),
            heatmap: HeatmapParams::default(),
            eval_every: 50,
            init_jitter: 0.0,
            seed: 0,
            solver: Solver::Exact,
            centering: AffineCentering::Com,
            outer_eye_corners: OUTER_EYE_CORNERS,
        }
    }
}

impl AblationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidInput("steps must be at least 1".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::InvalidInput("eval_every must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.init_jitter >= 0.0 && self.init_jitter.is_finite()) {
            return Err(Error::InvalidInput("init_jitter must be non-negative".into()));
        }
        self.coeffs.validate()?;
        self.heatmap.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub step: usize,
    /// Mean normalized W1 of the per-sample parameters against ground truth.
    pub w1: f64,
    pub r_flat: f64,
    pub r_geo: f64,
}

#[derive(Debug, Clone)]
pub struct AblationResult {
    pub trajectory: Vec<TrajectoryRow>,
    /// Final per-sample parameters (predictions in each sample's frame).
    pub predictions: Vec<LandmarkSet>,
    /// Final shared parameters in the canonical frame.
    pub canonical: LandmarkSet,
}

pub const TRAJECTORY_HEADER: &str = "step,w1,r_flat,r_geo";

pub fn write_trajectory_csv<W: Write>(rows: &[TrajectoryRow], mut out: W) -> Result<()> {
    writeln!(out, "{TRAJECTORY_HEADER}")?;
    for r in rows {
        writeln!(out, "{},{:?},{:?},{:?}", r.step, r.w1, r.r_flat, r.r_geo)?;
    }
    Ok(())
}

fn set_from(points: Vec<Vec2>, step: usize) -> Result<LandmarkSet> {
    // Squared distances must stay finite for the transport costs, so
    // coordinates that large count as diverged too.
    if points.iter().any(|p| !p.norm_squared().is_finite()) {
        return Err(Error::Diverged { step });
    }
    LandmarkSet::new(points)
}

fn descend(x: &LandmarkSet, grad: &[Vec2], lr: f64, step: usize) -> Result<LandmarkSet> {
    set_from(x.points().iter().zip(grad).map(|(p, g)| p - g * lr).collect(), step)
}

struct Evaluated {
    w1: f64,
    r_flat: f64,
    r_geo: f64,
}

fn evaluate(
    data: &[SyntheticSample],
    params: &[LandmarkSet],
    canonical: &LandmarkSet,
    bary: &LandmarkSet,
    config: &AblationConfig,
) -> Result<Evaluated> {
    let (l, r) = config.outer_eye_corners;
    let canon_graph = knn_graph(canonical, config.heatmap.k)?;
    let per: Vec<Evaluated> = data
        .par_iter()
        .zip(params.par_iter())
        .map(|(s, x)| {
            let graph = knn_graph(x, config.heatmap.k)?;
            Ok(Evaluated {
                w1: normalized_w1(x, &s.truth, l, r, &config.solver)?,
                r_flat: barycenter_reg(x, bary, &config.coeffs, &config.solver, config.centering)?.total,
                r_geo: geometric_reg_with_graphs(x, &graph, canonical, &canon_graph, &s.warp, &config.heatmap, &config.coeffs)?
                    .total,
            })
        })
        .collect::<Result<_>>()?;
    let n = per.len() as f64;
    let mut acc = Evaluated { w1: 0.0, r_flat: 0.0, r_geo: 0.0 };
    for e in &per {
        acc.w1 += e.w1;
        acc.r_flat += e.r_flat;
        acc.r_geo += e.r_geo;
    }
    Ok(Evaluated {
        w1: acc.w1 / n,
        r_flat: acc.r_flat / n,
        r_geo: acc.r_geo / n,
    })
}

/// Gradient descent on free landmark coordinates under the enabled regularizers.
///
/// Every sample owns a parameter set standing for the prediction on its
/// warped image. One shared set stands for the prediction on the original
/// image; the geometric term compares the two through each sample's warp.
pub fn run_ablation(data: &[SyntheticSample], bary: &LandmarkSet, config: &AblationConfig) -> Result<AblationResult> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidInput("ablation needs at least one sample".into()));
    }
    if let Some((k, s)) = data.iter().enumerate().find(|(_, s)| s.truth.len() != bary.len()) {
        return Err(Error::DimensionMismatch(format!(
            "sample {k} has {} points, barycenter has {}",
            s.truth.len(),
            bary.len()
        )));
    }

    let mut params: Vec<LandmarkSet> = if config.init_jitter > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let u = Uniform::new_inclusive(-config.init_jitter, config.init_jitter)
            .map_err(|e| Error::InvalidInput(e.to_string()))?;
        data.iter()
            .map(|_| {
                LandmarkSet::new(
                    bary.points()
                        .iter()
                        .map(|p| p + Vec2::new(u.sample(&mut rng), u.sample(&mut rng)))
                        .collect(),
                )
            })
            .collect::<Result<_>>()?
    } else {
        vec![bary.clone(); data.len()]
    };
    let mut canonical = bary.clone();

    let mut trajectory = Vec::new();
    let mut record = |step: usize, params: &[LandmarkSet], canonical: &LandmarkSet| -> Result<()> {
        let e = evaluate(data, params, canonical, bary, config)?;
        log::debug!("step {step}: w1 {:.6} r_flat {:.6} r_geo {:.6}", e.w1, e.r_flat, e.r_geo);
        trajectory.push(TrajectoryRow {
            step,
            w1: e.w1,
            r_flat: e.r_flat,
            r_geo: e.r_geo,
        });
        Ok(())
    };
    record(0, &params, &canonical)?;

    let lr = config.learning_rate;
    for step in 1..=config.steps {
        if config.enable_flat || config.enable_geo {
            let canon_graph = knn_graph(&canonical, config.heatmap.k)?;
            let grads: Vec<(Vec<Vec2>, Vec<Vec2>)> = data
                .par_iter()
                .zip(params.par_iter())
                .map(|(s, x)| {
                    let mut gx = vec![Vec2::zeros(); x.len()];
                    let mut g0 = vec![Vec2::zeros(); x.len()];
                    if config.enable_flat {
                        let report = barycenter_reg(x, bary, &config.coeffs, &config.solver, config.centering)?;
                        for (a, b) in gx.iter_mut().zip(report.gradient(x, bary)?) {
                            *a += b;
                        }
                    }
                    if config.enable_geo {
                        let graph = knn_graph(x, config.heatmap.k)?;
                        let (dw, d0) = grad_geometric_reg(
                            x,
                            &graph,
                            &canonical,
                            &canon_graph,
                            &s.warp,
                            &config.heatmap,
                            &config.coeffs,
                        )?;
                        for (a, b) in gx.iter_mut().zip(dw) {
                            *a += b;
                        }
                        g0 = d0;
                    }
                    Ok((gx, g0))
                })
                .collect::<Result<_>>()?;

            let mut canon_grad = if config.enable_flat {
                barycenter_reg(&canonical, bary, &config.coeffs, &config.solver, config.centering)?
                    .gradient(&canonical, bary)?
            } else {
                vec![Vec2::zeros(); bary.len()]
            };
            for (_, g0) in &grads {
                for (a, b) in canon_grad.iter_mut().zip(g0) {
                    *a += b;
                }
            }
            params = params
                .iter()
                .zip(&grads)
                .map(|(x, (gx, _))| descend(x, gx, lr, step))
                .collect::<Result<_>>()?;
            canonical = descend(&canonical, &canon_grad, lr, step)?;
        }
        if step % config.eval_every == 0 || step == config.steps {
            record(step, &params, &canonical)?;
        }
    }
    Ok(AblationResult {
        trajectory,
        predictions: params,
        canonical,
    })
}
