//! The barycenter regularizer (translation + affine + residual transport
//! terms) and the geometric-consistency regularizer, with gradients.

use serde::{Deserialize, Serialize};

use crate::deform::{warp_heatmap, warp_points, WarpSpec};
use crate::error::{Error, Result};
use crate::geometry::{AffineMap, Mat2, Vec2};
use crate::heatmap::{
    grad_heatmap_points_with_graph, heatmap_cross_entropy, knn_graph, render_with_graph, EdgeGraph,
    HeatmapParams, DEFAULT_FLOOR,
};
use crate::landmarks::LandmarkSet;
use crate::transport::{self, CostPower, Solver, TransportPlan};

/// Largest accepted condition number of the weighted Gram matrix.
const MAX_GRAM_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegCoeffs {
    /// Weights of the translation, affine and residual terms.
    pub barycenter: [f64; 3],
    /// Weight of the l1 coordinate term in the geometric regularizer.
    pub geometric_l1: f64,
}

impl Default for RegCoeffs {
    fn default() -> Self {
        Self {
            barycenter: [1.0, 2.0, 4.0],
            geometric_l1: 0.001,
        }
    }
}

impl RegCoeffs {
    /// Rejects negative weights; warns when simpler deformations are not the
    /// cheaper ones (`c1 ≤ c2 ≤ c3`).
    pub fn validate(&self) -> Result<()> {
        if self
            .barycenter
            .iter()
            .chain(std::iter::once(&self.geometric_l1))
            .any(|c| !(*c >= 0.0 && c.is_finite()))
        {
            return Err(Error::InvalidInput("regularizer coefficients must be non-negative".into()));
        }
        let [c1, c2, c3] = self.barycenter;
        if !(c1 <= c2 && c2 <= c3) {
            log::warn!("barycenter coefficients ({c1}, {c2}, {c3}) are not non-decreasing");
        }
        Ok(())
    }
}

/// Where the affine map is anchored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum AffineCentering {
    /// Fit on raw coordinates, apply as `z ↦ A z`.
    Raw,
    /// Fit on coordinates centered at each set's center of mass, apply about
    /// the barycenter's center of mass.
    #[default]
    Com,
}

fn check_sizes(x: &LandmarkSet, bary: &LandmarkSet) -> Result<()> {
    if x.len() != bary.len() {
        return Err(Error::DimensionMismatch(format!(
            "landmark set has {} points, barycenter has {}",
            x.len(),
            bary.len()
        )));
    }
    Ok(())
}

/// Pure translation moving the center of mass of `x` onto that of `bary`.
pub fn fit_translation(x: &LandmarkSet, bary: &LandmarkSet) -> Result<AffineMap> {
    check_sizes(x, bary)?;
    Ok(AffineMap::translation(bary.center_of_mass() - x.center_of_mass()))
}

/// Linear operator `A` (acting on column vectors) minimizing
/// `Σ P_ij ‖A·tx_i − bary_j‖²`.
///
/// In row-vector form, with points stacked as rows of `X` and `Y`, this is
/// `(Xᵀ diag(P1) X)⁻¹ Xᵀ P Y`, whose transpose is returned here.
pub fn fit_affine(
    tx: &LandmarkSet,
    bary: &LandmarkSet,
    plan: &TransportPlan,
    centering: AffineCentering,
) -> Result<Mat2> {
    let (n, m) = plan.shape();
    if n != tx.len() || m != bary.len() {
        return Err(Error::DimensionMismatch(format!(
            "plan is {n}x{m} for sets of sizes {} and {}",
            tx.len(),
            bary.len()
        )));
    }
    let (cx, cy) = match centering {
        AffineCentering::Raw => (Vec2::zeros(), Vec2::zeros()),
        AffineCentering::Com => (tx.center_of_mass(), bary.center_of_mass()),
    };
    let xs: Vec<Vec2> = tx.points().iter().map(|p| p - cx).collect();
    let ys: Vec<Vec2> = bary.points().iter().map(|p| p - cy).collect();

    // gram[k][l] = Σ_i r_i x_ik x_il,  cross[k][l] = Σ_ij P_ij x_ik y_jl
    let rows = plan.row_sums();
    let mut gram = [[0.0; 2]; 2];
    let mut cross = [[0.0; 2]; 2];
    for i in 0..n {
        for k in 0..2 {
            for l in 0..2 {
                gram[k][l] += rows[i] * xs[i][k] * xs[i][l];
            }
        }
        for j in 0..m {
            let p = plan.get(i, j);
            for k in 0..2 {
                for l in 0..2 {
                    cross[k][l] += p * xs[i][k] * ys[j][l];
                }
            }
        }
    }

    let g = Mat2::new(gram[0][0], gram[0][1], gram[1][0], gram[1][1]);
    let sv = g.singular_values();
    let (smax, smin) = (sv.max(), sv.min());
    if !(smin > 0.0) || smax / smin >= MAX_GRAM_CONDITION {
        return Err(Error::Degenerate(format!(
            "weighted Gram matrix is singular or ill-conditioned (singular values {smax:e}, {smin:e}); \
             points may be collinear"
        )));
    }
    // Cramer's rule, column by column: rows_form = G⁻¹ · cross.
    let det = gram[0][0] * gram[1][1] - gram[0][1] * gram[1][0];
    let mut rows_form = [[0.0; 2]; 2];
    for l in 0..2 {
        let (b0, b1) = (cross[0][l], cross[1][l]);
        rows_form[0][l] = (gram[1][1] * b0 - gram[0][1] * b1) / det;
        rows_form[1][l] = (gram[0][0] * b1 - gram[1][0] * b0) / det;
    }
    Ok(Mat2::new(rows_form[0][0], rows_form[1][0], rows_form[0][1], rows_form[1][1]))
}

/// Fitted linear map applied with its anchor: `z ↦ z + (A − I)(z − c)`.
fn apply_anchored(linear: &Mat2, center: &Vec2, z: &Vec2) -> Vec2 {
    z + (linear - Mat2::identity()) * (z - center)
}

#[derive(Debug, Clone)]
pub struct BarycenterRegReport {
    pub term_translation: f64,
    pub term_affine: f64,
    pub term_residual: f64,
    pub total: f64,
    pub fitted_translation: Vec2,
    pub fitted_affine: Mat2,
    /// Anchor of the affine map (origin for raw centering).
    pub affine_center: Vec2,
    pub centering: AffineCentering,
    pub coeffs: RegCoeffs,
    /// Plan from the translated set to the barycenter, used for the affine fit.
    pub plan_match: TransportPlan,
    /// Plan from the affinely mapped set to the barycenter.
    pub plan_residual: TransportPlan,
}

#[derive(Serialize)]
struct ReportRepr<'a> {
    term_translation: f64,
    term_affine: f64,
    term_residual: f64,
    total: f64,
    fitted_translation: [f64; 2],
    fitted_affine: [[f64; 2]; 2],
    affine_center: [f64; 2],
    centering: AffineCentering,
    plan_residual: &'a TransportPlan,
}

impl Serialize for BarycenterRegReport {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let a = &self.fitted_affine;
        ReportRepr {
            term_translation: self.term_translation,
            term_affine: self.term_affine,
            term_residual: self.term_residual,
            total: self.total,
            fitted_translation: [self.fitted_translation.x, self.fitted_translation.y],
            fitted_affine: [[a[(0, 0)], a[(0, 1)]], [a[(1, 0)], a[(1, 1)]]],
            affine_center: [self.affine_center.x, self.affine_center.y],
            centering: self.centering,
            plan_residual: &self.plan_residual,
        }
        .serialize(serializer)
    }
}

impl BarycenterRegReport {
    /// Translation then anchored affine map, as applied to a point of `x`.
    pub fn map_point(&self, p: &Vec2) -> Vec2 {
        apply_anchored(&self.fitted_affine, &self.affine_center, &(p + self.fitted_translation))
    }

    /// Gradient of the total with respect to `x`, holding the affine map and
    /// the residual plan fixed. The translation is kept as its closed form
    /// `com(bary) − com(x)`, so it is differentiated.
    pub fn gradient(&self, x: &LandmarkSet, bary: &LandmarkSet) -> Result<Vec<Vec2>> {
        let n = x.len();
        let (pn, pm) = self.plan_residual.shape();
        if pn != n || pm != bary.len() {
            return Err(Error::DimensionMismatch("report does not match the landmark sets".into()));
        }
        let [c1, c2, c3] = self.coeffs.barycenter;
        let a = &self.fitted_affine;
        let shear = a - Mat2::identity();
        let metric = shear.transpose() * shear;
        let b = bary.points();
        let t = bary.center_of_mass() - x.center_of_mass();

        let per_point: Vec<Vec2> = x
            .points()
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let z = p + t;
                let mapped = apply_anchored(a, &self.affine_center, &z);
                let g_aff = metric * (z - self.affine_center) * (2.0 * c2 / n as f64);
                let pull = (0..pm).fold(Vec2::zeros(), |acc, j| {
                    acc + (mapped - b[j]) * self.plan_residual.get(i, j)
                });
                g_aff + a.transpose() * pull * (2.0 * c3)
            })
            .collect();
        // z_i = x_i + com(bary) − com(x): subtract the mean of the z-gradients.
        let mean = per_point.iter().fold(Vec2::zeros(), |acc, g| acc + g) / n as f64;
        let g_trans = t * (-2.0 * c1 / n as f64);
        Ok(per_point.into_iter().map(|g| g - mean + g_trans).collect())
    }
}

/// Three-term decomposition of the transport from `x` to the barycenter.
pub fn barycenter_reg(
    x: &LandmarkSet,
    bary: &LandmarkSet,
    coeffs: &RegCoeffs,
    solver: &Solver,
    centering: AffineCentering,
) -> Result<BarycenterRegReport> {
    coeffs.validate()?;
    if x.len() != bary.len() {
        match solver {
            Solver::Exact => {
                return Err(Error::DimensionMismatch(format!(
                    "sizes {} and {} differ; unequal sets require the sinkhorn solver",
                    x.len(),
                    bary.len()
                )))
            }
            Solver::Sinkhorn(_) => log::warn!(
                "barycenter regularizer on unequal sizes ({} vs {}); affine fit uses the entropic plan",
                x.len(),
                bary.len()
            ),
        }
    }
    let t = bary.center_of_mass() - x.center_of_mass();
    let tx = x.translated(&t);
    // Every point moves by t under the identity coupling.
    let term_translation = t.norm_squared();

    let plan_match = transport::solve(&tx, bary, solver, CostPower::Squared)?.plan;
    let linear = fit_affine(&tx, bary, &plan_match, centering)?;
    let center = match centering {
        AffineCentering::Raw => Vec2::zeros(),
        AffineCentering::Com => bary.center_of_mass(),
    };
    let atx = LandmarkSet::new(tx.points().iter().map(|z| apply_anchored(&linear, &center, z)).collect())?;
    let term_affine = tx
        .points()
        .iter()
        .zip(atx.points())
        .map(|(z, w)| (w - z).norm_squared())
        .sum::<f64>()
        / x.len() as f64;

    let residual = transport::solve(&atx, bary, solver, CostPower::Squared)?;
    let [c1, c2, c3] = coeffs.barycenter;
    Ok(BarycenterRegReport {
        term_translation,
        term_affine,
        term_residual: residual.cost,
        total: c1 * term_translation + c2 * term_affine + c3 * residual.cost,
        fitted_translation: t,
        fitted_affine: linear,
        affine_center: center,
        centering,
        coeffs: *coeffs,
        plan_match,
        plan_residual: residual.plan,
    })
}

pub fn grad_barycenter_reg(
    x: &LandmarkSet,
    bary: &LandmarkSet,
    coeffs: &RegCoeffs,
    solver: &Solver,
    centering: AffineCentering,
) -> Result<Vec<Vec2>> {
    barycenter_reg(x, bary, coeffs, solver, centering)?.gradient(x, bary)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometricRegReport {
    pub cross_entropy: f64,
    /// Already multiplied by the l1 coefficient.
    pub l1: f64,
    pub total: f64,
}

/// Geometric-consistency loss between the prediction on a warped input and
/// the warped prediction on the original input.
pub fn geometric_reg(
    pred_on_warped: &LandmarkSet,
    pred_original: &LandmarkSet,
    g: &WarpSpec,
    params: &HeatmapParams,
    coeffs: &RegCoeffs,
) -> Result<GeometricRegReport> {
    let graph = knn_graph(pred_on_warped, params.k)?;
    let target_graph = knn_graph(pred_original, params.k)?;
    geometric_reg_with_graphs(pred_on_warped, &graph, pred_original, &target_graph, g, params, coeffs)
}

pub(crate) fn warped_target(
    pred_original: &LandmarkSet,
    target_graph: &EdgeGraph,
    g: &WarpSpec,
    params: &HeatmapParams,
) -> Result<crate::raster::Heatmap> {
    warp_heatmap(g, &render_with_graph(pred_original, target_graph, params)?.normalized()?)
}

pub(crate) fn geometric_reg_with_graphs(
    pred_on_warped: &LandmarkSet,
    graph: &EdgeGraph,
    pred_original: &LandmarkSet,
    target_graph: &EdgeGraph,
    g: &WarpSpec,
    params: &HeatmapParams,
    coeffs: &RegCoeffs,
) -> Result<GeometricRegReport> {
    if pred_on_warped.len() != pred_original.len() {
        return Err(Error::DimensionMismatch(format!(
            "predictions have {} and {} points",
            pred_on_warped.len(),
            pred_original.len()
        )));
    }
    let target = warped_target(pred_original, target_graph, g, params)?;
    let pred = render_with_graph(pred_on_warped, graph, params)?.normalized()?;
    let cross_entropy = heatmap_cross_entropy(&pred, &target, DEFAULT_FLOOR)?;
    let moved = warp_points(g, pred_original);
    let l1 = coeffs.geometric_l1
        * pred_on_warped
            .points()
            .iter()
            .zip(moved.points())
            .map(|(a, b)| (a - b).abs().sum())
            .sum::<f64>();
    Ok(GeometricRegReport {
        cross_entropy,
        l1,
        total: cross_entropy + l1,
    })
}

/// Differences this small count as sitting on the l1 kink, where the zero
/// subgradient is used. Without it, rounding-level offsets flip the sign
/// every step and the descent chatters.
pub const L1_KINK_TOL: f64 = 1e-9;

fn sign(v: f64) -> f64 {
    if v > L1_KINK_TOL {
        1.0
    } else if v < -L1_KINK_TOL {
        -1.0
    } else {
        0.0
    }
}

/// Gradients of the geometric regularizer.
///
/// The warped target heatmap is treated as a constant, so the original
/// prediction only receives gradient through the l1 term; both edge graphs
/// are frozen. Returns `(d/d pred_on_warped, d/d pred_original)`.
pub fn grad_geometric_reg(
    pred_on_warped: &LandmarkSet,
    graph: &EdgeGraph,
    pred_original: &LandmarkSet,
    target_graph: &EdgeGraph,
    g: &WarpSpec,
    params: &HeatmapParams,
    coeffs: &RegCoeffs,
) -> Result<(Vec<Vec2>, Vec<Vec2>)> {
    if pred_on_warped.len() != pred_original.len() {
        return Err(Error::DimensionMismatch("prediction sizes differ".into()));
    }
    let target = warped_target(pred_original, target_graph, g, params)?;
    let mut d_warped = grad_heatmap_points_with_graph(pred_on_warped, graph, params, &target, DEFAULT_FLOOR)?;
    let c = coeffs.geometric_l1;
    let mut d_original = Vec::with_capacity(pred_original.len());
    for ((dw, a), p) in d_warped.iter_mut().zip(pred_on_warped.points()).zip(pred_original.points()) {
        let diff = a - g.forward(p);
        let s = Vec2::new(sign(diff.x), sign(diff.y)) * c;
        *dw += s;
        d_original.push(-(g.jacobian(p).transpose() * s));
    }
    Ok((d_warped, d_original))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::deform::DeformSampler;
    use crate::heatmap::render_heatmap;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_set(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> LandmarkSet {
        LandmarkSet::new(
            (0..n)
                .map(|_| Vec2::new(rng.random_range(lo..hi), rng.random_range(lo..hi)))
                .collect(),
        )
        .unwrap()
    }

    /// Eight well separated points around (0.5, 0.5).
    fn spread_set() -> LandmarkSet {
        LandmarkSet::from_xy(&[
            [0.30, 0.32],
            [0.52, 0.28],
            [0.70, 0.35],
            [0.74, 0.55],
            [0.62, 0.72],
            [0.43, 0.70],
            [0.27, 0.58],
            [0.50, 0.50],
        ])
        .unwrap()
    }

    #[test]
    fn translation_fit() {
        let b = spread_set();
        assert_eq!(fit_translation(&b, &b).unwrap().translation, Vec2::zeros());
        let x = b.translated(&Vec2::new(-0.1, 0.0));
        let t = fit_translation(&x, &b).unwrap().translation;
        assert!((t - Vec2::new(0.1, 0.0)).norm() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (x, b) = (random_set(&mut rng, 10, 0.0, 1.0), random_set(&mut rng, 10, 0.0, 1.0));
        let moved = x.mapped(&fit_translation(&x, &b).unwrap());
        assert!((moved.center_of_mass() - b.center_of_mass()).norm() < 1e-12);
    }

    #[test]
    fn affine_self_fit_is_identity() {
        let b = spread_set();
        for c in [AffineCentering::Raw, AffineCentering::Com] {
            let a = fit_affine(&b, &b, &TransportPlan::identity(8), c).unwrap();
            assert!((a - Mat2::identity()).abs().max() < 1e-10);
        }
    }

    #[test]
    fn affine_recovers_planted_map() {
        let tx = spread_set();
        let c = tx.center_of_mass();
        let (s, co) = 0.3f64.sin_cos();
        let planted = Mat2::new(co, -s, s, co) * Mat2::new(1.1, 0.2, 0.0, 0.9);
        let b = LandmarkSet::new(tx.points().iter().map(|p| planted * (p - c) + c).collect()).unwrap();
        let a = fit_affine(&tx, &b, &TransportPlan::identity(8), AffineCentering::Com).unwrap();
        assert!((a - planted).abs().max() < 1e-8);
        let raw_b = tx.mapped(&AffineMap::new(planted, Vec2::zeros()).unwrap());
        let a = fit_affine(&tx, &raw_b, &TransportPlan::identity(8), AffineCentering::Raw).unwrap();
        assert!((a - planted).abs().max() < 1e-8);
    }

    #[test]
    fn collinear_points_are_degenerate() {
        let x = LandmarkSet::from_xy(&[[0.1, 0.1], [0.2, 0.2], [0.3, 0.3]]).unwrap();
        let err = fit_affine(&x, &x, &TransportPlan::identity(3), AffineCentering::Com).unwrap_err();
        assert!(matches!(err, Error::Degenerate(_)));
    }

    #[test]
    fn barycenter_is_zero() {
        let b = spread_set();
        for c in [AffineCentering::Raw, AffineCentering::Com] {
            let r = barycenter_reg(&b, &b, &RegCoeffs::default(), &Solver::Exact, c).unwrap();
            assert_eq!(
                (r.term_translation, r.term_affine, r.term_residual, r.total),
                (0.0, 0.0, 0.0, 0.0)
            );
            let g = r.gradient(&b, &b).unwrap();
            assert!(g.iter().all(|v| v.norm() < 1e-8));
        }
    }

    #[test]
    fn shift_only_costs_translation() {
        let b = spread_set();
        let t = Vec2::new(0.04, -0.03);
        let r = barycenter_reg(&b.translated(&t), &b, &RegCoeffs::default(), &Solver::Exact, AffineCentering::Com)
            .unwrap();
        assert!((r.term_translation - t.norm_squared()).abs() < 1e-15);
        assert!(r.term_affine < 1e-10 && r.term_residual < 1e-10);
        let [c1, c2, c3] = r.coeffs.barycenter;
        let expect = c1 * r.term_translation + c2 * r.term_affine + c3 * r.term_residual;
        assert!((r.total - expect).abs() < 1e-12);
    }

    #[test]
    fn rotation_costs_affine_term() {
        let b = spread_set();
        let c = b.center_of_mass();
        let rot = AffineMap::rotation_scale(10f64.to_radians(), 1.0, c);
        let x = b.mapped(&rot);
        let r = barycenter_reg(&x, &b, &RegCoeffs::default(), &Solver::Exact, AffineCentering::Com).unwrap();
        // Closed form: a point at radius ρ moves by 2ρ sin(θ/2).
        let chord = 2.0 * (5f64.to_radians()).sin();
        let expect = x
            .points()
            .iter()
            .map(|p| (chord * (p - c).norm()).powi(2))
            .sum::<f64>()
            / 8.0;
        assert!(r.term_translation < 1e-20);
        assert!(r.term_residual < 1e-8);
        assert!((r.term_affine - expect).abs() < 1e-12, "{} vs {expect}", r.term_affine);
    }

    #[test]
    fn unequal_sizes_need_sinkhorn() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (x, b) = (random_set(&mut rng, 7, 0.2, 0.8), random_set(&mut rng, 9, 0.2, 0.8));
        assert!(barycenter_reg(&x, &b, &RegCoeffs::default(), &Solver::Exact, AffineCentering::Com).is_err());
        let r = barycenter_reg(
            &x,
            &b,
            &RegCoeffs::default(),
            &Solver::Sinkhorn(Default::default()),
            AffineCentering::Com,
        )
        .unwrap();
        assert!(r.total.is_finite() && r.total >= 0.0);
    }

    #[test]
    fn translation_gradient_closed_form() {
        let b = spread_set();
        let t = Vec2::new(0.05, 0.02);
        let x = b.translated(&-t);
        let coeffs = RegCoeffs {
            barycenter: [1.0, 0.0, 0.0],
            geometric_l1: 0.0,
        };
        let g = grad_barycenter_reg(&x, &b, &coeffs, &Solver::Exact, AffineCentering::Com).unwrap();
        for v in g {
            assert!((v - t * (-2.0 / 8.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn identity_warp_self_entropy() {
        let s = spread_set();
        let params = HeatmapParams::default();
        let r = geometric_reg(&s, &s, &WarpSpec::identity(), &params, &RegCoeffs::default()).unwrap();
        let hm = render_heatmap(&s, &params, true).unwrap();
        let self_h = heatmap_cross_entropy(&hm, &hm, DEFAULT_FLOOR).unwrap();
        assert_eq!(r.l1, 0.0);
        assert!((r.cross_entropy - self_h).abs() < 1e-12);
    }

    #[test]
    fn l1_term_arithmetic() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = random_set(&mut rng, 68, 0.2, 0.8);
        let g = crate::deform::sample_warp(&DeformSampler {
            seed: 3,
            ..DeformSampler::default()
        });
        let on_warped = warp_points(&g, &s).translated(&Vec2::new(0.1, 0.0));
        let r = geometric_reg(&on_warped, &s, &g, &HeatmapParams::default(), &RegCoeffs::default()).unwrap();
        assert!((r.l1 - 0.0068).abs() < 1e-12);
    }

    #[test]
    fn size_mismatch_rejected() {
        let s = spread_set();
        let t = LandmarkSet::from_xy(&[[0.1, 0.1], [0.5, 0.5]]).unwrap();
        assert!(geometric_reg(&s, &t, &WarpSpec::identity(), &HeatmapParams::default(), &RegCoeffs::default()).is_err());
    }
}
