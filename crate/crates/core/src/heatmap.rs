//! Blurred-skeleton heatmaps: every edge of a k-nearest-neighbour graph on
//! the landmarks contributes `exp(−d²/(2σ²))`, where `d` is the distance from
//! a pixel center to the edge segment.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::landmarks::LandmarkSet;
use crate::raster::Heatmap;

/// Edge contributions further than this many σ from a pixel are skipped;
/// `exp(−40.5) ≈ 2.6e-18`.
const CUTOFF_SIGMAS: f64 = 9.0;

/// Tolerance used when checking that heatmaps carry unit mass.
pub const NORMALIZATION_TOL: f64 = 1e-6;

pub const DEFAULT_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeatmapParams {
    /// `(height, width)` in pixels.
    pub resolution: (usize, usize),
    /// Gaussian width in normalized units.
    pub sigma: f64,
    /// Neighbours per point.
    pub k: usize,
}

impl Default for HeatmapParams {
    fn default() -> Self {
        Self {
            resolution: (64, 64),
            sigma: 0.02,
            k: 2,
        }
    }
}

impl HeatmapParams {
    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.resolution;
        if h < 2 || w < 2 {
            return Err(Error::InvalidInput(format!("heatmap resolution {h}x{w} below 2x2")));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidInput(format!("sigma must be positive, got {}", self.sigma)));
        }
        if self.k == 0 {
            return Err(Error::InvalidInput("k must be at least 1".into()));
        }
        Ok(())
    }
}

/// Undirected edges `(a, b)` with `a < b`, sorted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeGraph {
    edges: Vec<(usize, usize)>,
}

impl EdgeGraph {
    pub fn new(edges: impl IntoIterator<Item = (usize, usize)>, n: usize) -> Result<Self> {
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            if a == b || a >= n || b >= n {
                return Err(Error::InvalidInput(format!("invalid edge ({a}, {b}) for {n} points")));
            }
            set.insert((a.min(b), a.max(b)));
        }
        Ok(Self {
            edges: set.into_iter().collect(),
        })
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }
}

/// Union of each point's `k` nearest neighbours (k clamped to N−1). Distance
/// ties go to the smaller index.
pub fn knn_graph(s: &LandmarkSet, k: usize) -> Result<EdgeGraph> {
    let n = s.len();
    if n < 2 {
        return Err(Error::InvalidInput("k-NN graph needs at least two points".into()));
    }
    let k = k.clamp(1, n - 1);
    let pts = s.points();
    let mut edges = Vec::with_capacity(n * k);
    for i in 0..n {
        let mut others: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| ((pts[i] - pts[j]).norm_squared(), j))
            .collect();
        others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        edges.extend(others.iter().take(k).map(|&(_, j)| (i, j)));
    }
    EdgeGraph::new(edges, n)
}

/// Closest point on segment `[a, b]` to `p` and its parameter along the segment.
fn closest_on_segment(p: &Vec2, a: &Vec2, b: &Vec2) -> (f64, Vec2) {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 == 0.0 {
        return (0.0, *a);
    }
    let tau = ((p - a).dot(&ab) / len2).clamp(0.0, 1.0);
    (tau, a + ab * tau)
}

pub fn dist_point_segment(p: &Vec2, a: &Vec2, b: &Vec2) -> f64 {
    (p - closest_on_segment(p, a, b).1).norm()
}

/// Normalized coordinates of the center of pixel `(row, col)`.
pub fn pixel_center(row: usize, col: usize, height: usize, width: usize) -> Vec2 {
    Vec2::new((col as f64 + 0.5) / width as f64, (row as f64 + 0.5) / height as f64)
}

/// Inclusive index range of pixel centers whose coordinate lies in `[lo, hi]`.
fn pixel_span(lo: f64, hi: f64, size: usize) -> Option<(usize, usize)> {
    let first = (lo * size as f64 - 0.5).ceil().max(0.0);
    let last = (hi * size as f64 - 0.5).floor().min(size as f64 - 1.0);
    (first <= last).then_some((first as usize, last as usize))
}

struct EdgeBox {
    a: Vec2,
    b: Vec2,
    rows: (usize, usize),
    cols: (usize, usize),
}

fn edge_boxes(s: &LandmarkSet, graph: &EdgeGraph, params: &HeatmapParams) -> Vec<Option<EdgeBox>> {
    let (h, w) = params.resolution;
    let r = CUTOFF_SIGMAS * params.sigma;
    let pts = s.points();
    graph
        .edges()
        .iter()
        .map(|&(ia, ib)| {
            let (a, b) = (pts[ia], pts[ib]);
            let rows = pixel_span(a.y.min(b.y) - r, a.y.max(b.y) + r, h)?;
            let cols = pixel_span(a.x.min(b.x) - r, a.x.max(b.x) + r, w)?;
            Some(EdgeBox { a, b, rows, cols })
        })
        .collect()
}

/// Unnormalized rendering over a fixed edge graph.
pub fn render_with_graph(s: &LandmarkSet, graph: &EdgeGraph, params: &HeatmapParams) -> Result<Heatmap> {
    params.validate()?;
    let (h, w) = params.resolution;
    let inv_two_sigma2 = 1.0 / (2.0 * params.sigma * params.sigma);
    let boxes = edge_boxes(s, graph, params);
    let mut grid = vec![0.0; h * w];
    grid.par_chunks_mut(w).enumerate().for_each(|(row, out)| {
        for bx in boxes.iter().flatten() {
            if row < bx.rows.0 || row > bx.rows.1 {
                continue;
            }
            for col in bx.cols.0..=bx.cols.1 {
                let q = pixel_center(row, col, h, w);
                let (_, c) = closest_on_segment(&q, &bx.a, &bx.b);
                out[col] += (-(q - c).norm_squared() * inv_two_sigma2).exp();
            }
        }
    });
    Ok(Heatmap::from_raw(h, w, grid))
}

/// Renders the skeleton heatmap, optionally normalized to unit mass.
pub fn render_heatmap(s: &LandmarkSet, params: &HeatmapParams, normalize: bool) -> Result<Heatmap> {
    params.validate()?;
    let graph = knn_graph(s, params.k)?;
    let raw = render_with_graph(s, &graph, params)?;
    if normalize {
        raw.normalized()
    } else {
        Ok(raw)
    }
}

fn check_pair(pred: &Heatmap, target: &Heatmap) -> Result<()> {
    if pred.resolution() != target.resolution() {
        return Err(Error::DimensionMismatch(format!(
            "heatmap resolutions {:?} and {:?} differ",
            pred.resolution(),
            target.resolution()
        )));
    }
    for (name, hm) in [("prediction", pred), ("target", target)] {
        if !hm.is_normalized(NORMALIZATION_TOL) {
            return Err(Error::InvalidInput(format!(
                "{name} heatmap is not normalized (sum {})",
                hm.sum()
            )));
        }
    }
    Ok(())
}

/// `−Σ target · log(pred + floor)` over two unit-mass heatmaps.
pub fn heatmap_cross_entropy(pred: &Heatmap, target: &Heatmap, floor: f64) -> Result<f64> {
    check_pair(pred, target)?;
    Ok(-pred
        .values()
        .iter()
        .zip(target.values())
        .map(|(p, t)| t * (p + floor).ln())
        .sum::<f64>())
}

/// Pulls a gradient with respect to the normalized rendering back to the
/// landmark coordinates, with the edge graph held fixed.
pub fn render_vjp(
    s: &LandmarkSet,
    graph: &EdgeGraph,
    params: &HeatmapParams,
    upstream: &[f64],
) -> Result<Vec<Vec2>> {
    let raw = render_with_graph(s, graph, params)?;
    if upstream.len() != raw.values().len() {
        return Err(Error::DimensionMismatch("upstream gradient does not match resolution".into()));
    }
    let total = raw.sum();
    if total <= 0.0 {
        return Err(Error::Degenerate("rendered heatmap has zero mass".into()));
    }
    // d/dU_k of f(U / Z) = (g_k − Σ_l g_l p_l) / Z
    let mean_up: f64 = raw
        .values()
        .iter()
        .zip(upstream)
        .map(|(u, g)| g * u / total)
        .sum();
    let (h, w) = params.resolution;
    let sigma2 = params.sigma * params.sigma;
    let inv_two_sigma2 = 0.5 / sigma2;
    let boxes = edge_boxes(s, graph, params);
    let per_edge: Vec<(Vec2, Vec2)> = boxes
        .par_iter()
        .map(|bx| {
            let Some(bx) = bx else {
                return (Vec2::zeros(), Vec2::zeros());
            };
            let (mut ga, mut gb) = (Vec2::zeros(), Vec2::zeros());
            for row in bx.rows.0..=bx.rows.1 {
                for col in bx.cols.0..=bx.cols.1 {
                    let q = pixel_center(row, col, h, w);
                    let (tau, c) = closest_on_segment(&q, &bx.a, &bx.b);
                    let diff = q - c;
                    let weight = (-diff.norm_squared() * inv_two_sigma2).exp();
                    let d_u = (upstream[row * w + col] - mean_up) / total;
                    let common = diff * (d_u * weight / sigma2);
                    ga += common * (1.0 - tau);
                    gb += common * tau;
                }
            }
            (ga, gb)
        })
        .collect();
    let mut grad = vec![Vec2::zeros(); s.len()];
    for (&(ia, ib), (ga, gb)) in graph.edges().iter().zip(per_edge) {
        grad[ia] += ga;
        grad[ib] += gb;
    }
    Ok(grad)
}

/// Upstream gradient of the cross-entropy with respect to the prediction.
pub(crate) fn cross_entropy_upstream(pred: &Heatmap, target: &Heatmap, floor: f64) -> Vec<f64> {
    pred.values()
        .iter()
        .zip(target.values())
        .map(|(p, t)| -t / (p + floor))
        .collect()
}

/// Gradient of `heatmap_cross_entropy(render(s), target)` with respect to
/// the points of `s`, with the k-NN graph of `s` frozen.
pub fn grad_heatmap_points(
    s: &LandmarkSet,
    params: &HeatmapParams,
    target: &Heatmap,
    floor: f64,
) -> Result<Vec<Vec2>> {
    let graph = knn_graph(s, params.k)?;
    grad_heatmap_points_with_graph(s, &graph, params, target, floor)
}

pub fn grad_heatmap_points_with_graph(
    s: &LandmarkSet,
    graph: &EdgeGraph,
    params: &HeatmapParams,
    target: &Heatmap,
    floor: f64,
) -> Result<Vec<Vec2>> {
    let pred = render_with_graph(s, graph, params)?.normalized()?;
    check_pair(&pred, target)?;
    render_vjp(s, graph, params, &cross_entropy_upstream(&pred, target, floor))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn set(c: &[[f64; 2]]) -> LandmarkSet {
        LandmarkSet::from_xy(c).unwrap()
    }

    fn random_set(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> LandmarkSet {
        LandmarkSet::new(
            (0..n)
                .map(|_| Vec2::new(rng.random_range(lo..hi), rng.random_range(lo..hi)))
                .collect(),
        )
        .unwrap()
    }

    fn brute_knn(s: &LandmarkSet, k: usize) -> BTreeSet<(usize, usize)> {
        let n = s.len();
        let k = k.min(n - 1);
        let d = |i: usize, j: usize| (s.points()[i] - s.points()[j]).norm_squared();
        let mut out = BTreeSet::new();
        for i in 0..n {
            // Select k times the nearest unused neighbour, lowest index on ties.
            let mut used = vec![false; n];
            used[i] = true;
            for _ in 0..k {
                let mut best = None;
                for j in 0..n {
                    if used[j] {
                        continue;
                    }
                    match best {
                        Some(b) if d(i, j) >= d(i, b) => {}
                        _ => best = Some(j),
                    }
                }
                let j = best.unwrap();
                used[j] = true;
                out.insert((i.min(j), i.max(j)));
            }
        }
        out
    }

    #[test]
    fn knn_examples() {
        let g = knn_graph(&set(&[[0.1, 0.1], [0.9, 0.9]]), 2).unwrap();
        assert_eq!(g.edges(), &[(0, 1)]);
        let g = knn_graph(&set(&[[0.1, 0.5], [0.5, 0.5], [0.9, 0.5]]), 2).unwrap();
        assert_eq!(g.edges(), &[(0, 1), (0, 2), (1, 2)]);
        assert!(knn_graph(&set(&[[0.1, 0.5]]), 2).is_err());
    }

    #[test]
    fn knn_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for n in 2..=12 {
            for k in 1..=3 {
                let s = random_set(&mut rng, n, 0.0, 1.0);
                let g = knn_graph(&s, k).unwrap();
                let expect: Vec<_> = brute_knn(&s, k).into_iter().collect();
                assert_eq!(g.edges(), expect.as_slice());
            }
        }
    }

    #[test]
    fn segment_distance_examples() {
        let (a, b) = (Vec2::new(-1.0, 0.0), Vec2::new(1.0, 0.0));
        assert!(dist_point_segment(&Vec2::new(0.3, 0.0), &a, &b) < 1e-15);
        assert_eq!(dist_point_segment(&Vec2::new(0.0, 1.0), &a, &b), 1.0);
        assert!((dist_point_segment(&Vec2::new(2.0, 1.0), &a, &b) - 2f64.sqrt()).abs() < 1e-15);
        let p = Vec2::new(0.5, 0.5);
        assert!((dist_point_segment(&Vec2::new(0.5, 0.8), &p, &p) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn segment_distance_matches_dense_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let mut v = || Vec2::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let (p, a, b) = (v(), v(), v());
            let sampled = (0..=10_000)
                .map(|k| (p - (a + (b - a) * (k as f64 / 10_000.0))).norm())
                .fold(f64::INFINITY, f64::min);
            assert!((dist_point_segment(&p, &a, &b) - sampled).abs() < 1e-4);
        }
    }

    #[test]
    fn gaussian_profile_across_an_edge() {
        // Points on pixel centers of row 20 in a 64×64 grid.
        let y = pixel_center(20, 0, 64, 64).y;
        let s = set(&[[pixel_center(0, 20, 64, 64).x, y], [pixel_center(0, 40, 64, 64).x, y]]);
        let sigma = 2.0 / 64.0;
        let params = HeatmapParams {
            resolution: (64, 64),
            sigma,
            k: 2,
        };
        let hm = render_heatmap(&s, &params, false).unwrap();
        assert!((hm.get(20, 30) - hm.max()).abs() < 1e-15);
        assert!((hm.get(20, 30) - 1.0).abs() < 1e-15);
        // Two rows away is exactly one σ.
        assert!((hm.get(22, 30) - (-0.5f64).exp() * hm.get(20, 30)).abs() < 1e-6);
    }

    #[test]
    fn normalized_render_sums_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = random_set(&mut rng, 20, 0.1, 0.9);
        let hm = render_heatmap(&s, &HeatmapParams::default(), true).unwrap();
        assert!((hm.sum() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn blur_raises_the_floor() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = random_set(&mut rng, 10, 0.3, 0.7);
        let mut last = 0.0;
        for sigma in [0.05, 0.1, 0.2, 0.4] {
            let params = HeatmapParams {
                resolution: (32, 32),
                sigma,
                k: 2,
            };
            let m = render_heatmap(&s, &params, false).unwrap().min();
            assert!(m >= last);
            last = m;
        }
        assert!(last > 0.0);
    }

    #[test]
    fn cross_entropy_examples() {
        let u = Heatmap::new(2, 2, vec![0.25; 4]).unwrap();
        let h = heatmap_cross_entropy(&u, &u, DEFAULT_FLOOR).unwrap();
        assert!((h - 4f64.ln()).abs() < 1e-9);
        let spike = Heatmap::new(2, 2, vec![0.0, 1.0, 0.0, 0.0]).unwrap();
        assert!((heatmap_cross_entropy(&u, &spike, DEFAULT_FLOOR).unwrap() - 4f64.ln()).abs() < 1e-9);

        let other = Heatmap::new(1, 4, vec![0.25; 4]).unwrap();
        assert!(heatmap_cross_entropy(&u, &other, DEFAULT_FLOOR).is_err());
        let raw = Heatmap::new(2, 2, vec![1.0; 4]).unwrap();
        assert!(heatmap_cross_entropy(&raw, &u, DEFAULT_FLOOR).is_err());
    }

    #[test]
    fn gibbs_inequality() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let mut rand_map = || {
                Heatmap::new(4, 4, (0..16).map(|_| rng.random::<f64>()).collect())
                    .unwrap()
                    .normalized()
                    .unwrap()
            };
            let (p, q) = (rand_map(), rand_map());
            let hpp = heatmap_cross_entropy(&p, &p, DEFAULT_FLOOR).unwrap();
            let hpq = heatmap_cross_entropy(&q, &p, DEFAULT_FLOOR).unwrap();
            assert!(hpq - hpp >= -1e-9);
        }
    }

    #[test]
    fn self_match_is_stationary() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let s = random_set(&mut rng, 8, 0.2, 0.8);
        let params = HeatmapParams::default();
        let target = render_heatmap(&s, &params, true).unwrap();
        // The log floor shifts the stationary point by O(floor); with a
        // negligible floor the self-match is stationary.
        let g = grad_heatmap_points(&s, &params, &target, 1e-16).unwrap();
        assert!(g.iter().all(|v| v.norm() < 1e-8), "{g:?}");
        let g = grad_heatmap_points(&s, &params, &target, DEFAULT_FLOOR).unwrap();
        assert!(g.iter().all(|v| v.norm() < 1e-6), "{g:?}");
    }

    #[test]
    fn shifted_target_pulls_points() {
        let s = set(&[[0.4, 0.5], [0.6, 0.5]]);
        let params = HeatmapParams::default();
        let target = render_heatmap(&s.translated(&Vec2::new(0.01, 0.0)), &params, true).unwrap();
        let g = grad_heatmap_points(&s, &params, &target, DEFAULT_FLOOR).unwrap();
        assert!(g[0].x < 0.0 && g[1].x < 0.0, "{g:?}");
    }
}
