//! Synchronized geometric deformations: an affine map followed by a smooth
//! elastic displacement, applied forward to landmarks and by iterated
//! inversion to rasters.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{AffineMap, Mat2, Vec2};
use crate::landmarks::LandmarkSet;
use crate::raster::{Heatmap, Image};

/// Fixed-point steps used to invert the elastic part.
const INVERSE_ITERS: usize = 5;

/// Sample positions closer than this to an integer pixel index snap to it.
const SNAP_TOL: f64 = 1e-9;

/// `g(x) = A(x) + α·D(A(x))` where `D` bilinearly interpolates a `G×G` grid
/// of control displacements spanning the unit square.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpSpec {
    affine: AffineMap,
    grid_size: usize,
    /// Row-major: node `(gy, gx)` at `gy * G + gx`, located at `(gx, gy) / (G − 1)`.
    elastic_grid: Vec<Vec2>,
    elastic_alpha: f64,
    seed: u64,
}

impl WarpSpec {
    pub fn new(
        affine: AffineMap,
        grid_size: usize,
        elastic_grid: Vec<Vec2>,
        elastic_alpha: f64,
        seed: u64,
    ) -> Result<Self> {
        if grid_size < 2 {
            return Err(Error::InvalidInput(format!("elastic grid size {grid_size} below 2")));
        }
        if elastic_grid.len() != grid_size * grid_size {
            return Err(Error::DimensionMismatch(format!(
                "{} control displacements for a {grid_size}x{grid_size} grid",
                elastic_grid.len()
            )));
        }
        if elastic_grid.iter().any(|d| !d.x.is_finite() || !d.y.is_finite()) {
            return Err(Error::InvalidInput("elastic displacements must be finite".into()));
        }
        if !(elastic_alpha >= 0.0 && elastic_alpha.is_finite()) {
            return Err(Error::InvalidInput(format!("elastic_alpha must be non-negative, got {elastic_alpha}")));
        }
        let max_disp = elastic_grid.iter().map(|d| d.norm()).fold(0.0, f64::max);
        let bound = elastic_alpha * max_disp * grid_size as f64;
        if bound >= 0.5 {
            return Err(Error::InvalidInput(format!(
                "elastic deformation too strong for guaranteed injectivity (alpha·max·G = {bound})"
            )));
        }
        Ok(Self {
            affine,
            grid_size,
            elastic_grid,
            elastic_alpha,
            seed,
        })
    }

    pub fn identity() -> Self {
        Self::from_affine(AffineMap::identity())
    }

    /// Purely affine warp.
    pub fn from_affine(affine: AffineMap) -> Self {
        Self {
            affine,
            grid_size: 2,
            elastic_grid: vec![Vec2::zeros(); 4],
            elastic_alpha: 0.0,
            seed: 0,
        }
    }

    pub fn affine(&self) -> &AffineMap {
        &self.affine
    }

    pub fn grid_size(&self) -> usize {
        self.grid_size
    }

    pub fn elastic_grid(&self) -> &[Vec2] {
        &self.elastic_grid
    }

    pub fn elastic_alpha(&self) -> f64 {
        self.elastic_alpha
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn has_elastic(&self) -> bool {
        self.elastic_alpha != 0.0 && self.elastic_grid.iter().any(|d| *d != Vec2::zeros())
    }

    pub fn is_identity(&self) -> bool {
        self.affine.is_identity() && !self.has_elastic()
    }

    /// Cell index and fractional offset along one axis, clamped to the grid.
    fn locate(&self, v: f64) -> (usize, f64, bool) {
        let cells = (self.grid_size - 1) as f64;
        let inside = (0.0..=1.0).contains(&v);
        let g = v.clamp(0.0, 1.0) * cells;
        let i = (g.floor() as usize).min(self.grid_size - 2);
        (i, g - i as f64, inside)
    }

    /// Interpolated control displacement at `u` (constant outside the unit square).
    fn displacement(&self, u: &Vec2) -> Vec2 {
        let (ix, fx, _) = self.locate(u.x);
        let (iy, fy, _) = self.locate(u.y);
        let g = self.grid_size;
        let node = |y: usize, x: usize| self.elastic_grid[y * g + x];
        node(iy, ix) * ((1.0 - fx) * (1.0 - fy))
            + node(iy, ix + 1) * (fx * (1.0 - fy))
            + node(iy + 1, ix) * ((1.0 - fx) * fy)
            + node(iy + 1, ix + 1) * (fx * fy)
    }

    /// Jacobian of the interpolated displacement with respect to `u`.
    fn displacement_jacobian(&self, u: &Vec2) -> Mat2 {
        let (ix, fx, in_x) = self.locate(u.x);
        let (iy, fy, in_y) = self.locate(u.y);
        let g = self.grid_size;
        let cells = (g - 1) as f64;
        let node = |y: usize, x: usize| self.elastic_grid[y * g + x];
        let d_dx = if in_x {
            ((node(iy, ix + 1) - node(iy, ix)) * (1.0 - fy) + (node(iy + 1, ix + 1) - node(iy + 1, ix)) * fy)
                * cells
        } else {
            Vec2::zeros()
        };
        let d_dy = if in_y {
            ((node(iy + 1, ix) - node(iy, ix)) * (1.0 - fx) + (node(iy + 1, ix + 1) - node(iy, ix + 1)) * fx)
                * cells
        } else {
            Vec2::zeros()
        };
        Mat2::from_columns(&[d_dx, d_dy])
    }

    pub fn forward(&self, x: &Vec2) -> Vec2 {
        let u = self.affine.apply(x);
        if self.elastic_alpha == 0.0 {
            return u;
        }
        u + self.displacement(&u) * self.elastic_alpha
    }

    /// Jacobian of the forward map at `x`.
    pub fn jacobian(&self, x: &Vec2) -> Mat2 {
        if self.elastic_alpha == 0.0 {
            return self.affine.linear;
        }
        let u = self.affine.apply(x);
        (Mat2::identity() + self.displacement_jacobian(&u) * self.elastic_alpha) * self.affine.linear
    }

    /// Approximate inverse: fixed-point iteration on the elastic part, then
    /// the exact affine inverse.
    pub fn inverse_with(&self, inverse_affine: &AffineMap, y: &Vec2) -> Vec2 {
        let mut u = *y;
        if self.elastic_alpha != 0.0 {
            for _ in 0..INVERSE_ITERS {
                u = y - self.displacement(&u) * self.elastic_alpha;
            }
        }
        inverse_affine.apply(&u)
    }

    pub fn inverse(&self, y: &Vec2) -> Result<Vec2> {
        Ok(self.inverse_with(&self.affine.inverse()?, y))
    }
}

#[derive(Serialize, Deserialize)]
struct WarpRepr {
    affine: AffineMap,
    elastic_grid: Vec<Vec<[f64; 2]>>,
    elastic_alpha: f64,
    seed: u64,
}

impl Serialize for WarpSpec {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        WarpRepr {
            affine: self.affine,
            elastic_grid: self
                .elastic_grid
                .chunks(self.grid_size)
                .map(|row| row.iter().map(|d| [d.x, d.y]).collect())
                .collect(),
            elastic_alpha: self.elastic_alpha,
            seed: self.seed,
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for WarpSpec {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let r = WarpRepr::deserialize(deserializer)?;
        let g = r.elastic_grid.len();
        if r.elastic_grid.iter().any(|row| row.len() != g) {
            return Err(serde::de::Error::custom("elastic grid must be square"));
        }
        let grid = r.elastic_grid.into_iter().flatten().map(|d| Vec2::new(d[0], d[1])).collect();
        WarpSpec::new(r.affine, g, grid, r.elastic_alpha, r.seed).map_err(serde::de::Error::custom)
    }
}

/// Ranges for random warps. Rotation and scale act about the image center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeformSampler {
    /// Rotation drawn uniformly from `[−r, r]` radians.
    pub rotation_range: f64,
    pub scale_range: (f64, f64),
    /// Each translation component drawn uniformly from `[−t, t]`.
    pub translation_range: f64,
    pub elastic_grid_size: usize,
    pub elastic_alpha_range: (f64, f64),
    pub seed: u64,
}

impl Default for DeformSampler {
    fn default() -> Self {
        Self {
            rotation_range: 15f64.to_radians(),
            scale_range: (0.9, 1.1),
            translation_range: 0.05,
            elastic_grid_size: 4,
            elastic_alpha_range: (0.0, 0.03),
            seed: 0,
        }
    }
}

impl DeformSampler {
    /// Sampler that always yields the identity warp.
    pub fn identity(seed: u64) -> Self {
        Self {
            rotation_range: 0.0,
            scale_range: (1.0, 1.0),
            translation_range: 0.0,
            elastic_grid_size: 4,
            elastic_alpha_range: (0.0, 0.0),
            seed,
        }
    }

    /// Purely affine sampler (no elastic component).
    pub fn affine_only(self) -> Self {
        Self {
            elastic_alpha_range: (0.0, 0.0),
            ..self
        }
    }

    /// Copy with every range brought into a valid form.
    pub fn clamped(&self) -> Self {
        let sorted = |(a, b): (f64, f64)| if a <= b { (a, b) } else { (b, a) };
        let (smin, smax) = sorted(self.scale_range);
        let g = self.elastic_grid_size.max(2);
        let alpha_cap = 0.499 / g as f64;
        let (amin, amax) = sorted(self.elastic_alpha_range);
        Self {
            rotation_range: self.rotation_range.abs(),
            scale_range: (smin.max(1e-3), smax.max(1e-3)),
            translation_range: self.translation_range.abs(),
            elastic_grid_size: g,
            elastic_alpha_range: (amin.clamp(0.0, alpha_cap), amax.clamp(0.0, alpha_cap)),
            seed: self.seed,
        }
    }

    /// Warp determined entirely by `seed` and the ranges.
    pub fn sample_seeded(&self, seed: u64) -> WarpSpec {
        let cfg = self.clamped();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Every draw happens regardless of the ranges, so the stream layout is fixed.
        let lerp = |u: f64, lo: f64, hi: f64| lo + (hi - lo) * u;
        let angle = lerp(rng.random(), -cfg.rotation_range, cfg.rotation_range);
        let scale = lerp(rng.random(), cfg.scale_range.0, cfg.scale_range.1);
        let tx = lerp(rng.random(), -cfg.translation_range, cfg.translation_range);
        let ty = lerp(rng.random(), -cfg.translation_range, cfg.translation_range);
        let alpha = lerp(rng.random(), cfg.elastic_alpha_range.0, cfg.elastic_alpha_range.1);
        let g = cfg.elastic_grid_size;
        let mut grid: Vec<Vec2> = (0..g * g)
            .map(|_| Vec2::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
            .collect();
        let max = grid.iter().map(|d| d.norm()).fold(0.0, f64::max);
        if alpha == 0.0 || max == 0.0 {
            grid.iter_mut().for_each(|d| *d = Vec2::zeros());
        } else {
            grid.iter_mut().for_each(|d| *d /= max);
        }
        let center = Vec2::new(0.5, 0.5);
        let affine = if angle == 0.0 && scale == 1.0 {
            AffineMap::translation(Vec2::new(tx, ty))
        } else {
            let mut m = AffineMap::rotation_scale(angle, scale, center);
            m.translation += Vec2::new(tx, ty);
            m
        };
        let alpha = if grid.iter().all(|d| *d == Vec2::zeros()) { 0.0 } else { alpha };
        WarpSpec::new(affine, g, grid, alpha, seed).expect("sampler ranges keep warps injective")
    }

    /// A reproducible stream of warps, each carrying its own seed.
    pub fn sample_stream(&self, count: usize) -> Vec<WarpSpec> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        (0..count).map(|_| self.sample_seeded(rng.next_u64())).collect()
    }
}

pub fn sample_warp(sampler: &DeformSampler) -> WarpSpec {
    sampler.sample_seeded(sampler.seed)
}

pub fn warp_points(g: &WarpSpec, s: &LandmarkSet) -> LandmarkSet {
    LandmarkSet::new(s.points().iter().map(|p| g.forward(p)).collect())
        .expect("finite warp of finite points")
}

fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < SNAP_TOL {
        r
    } else {
        v
    }
}

/// Bilinear sample of one channel at continuous pixel position, zero outside.
fn sample_bilinear(height: usize, width: usize, value: impl Fn(usize, usize) -> f64, px: f64, py: f64) -> f64 {
    let (px, py) = (snap(px), snap(py));
    let (x0, y0) = (px.floor(), py.floor());
    let (fx, fy) = (px - x0, py - y0);
    let fetch = |y: f64, x: f64| {
        if x < 0.0 || y < 0.0 || x >= width as f64 || y >= height as f64 {
            0.0
        } else {
            value(y as usize, x as usize)
        }
    };
    let mut acc = 0.0;
    for (dy, wy) in [(0.0, 1.0 - fy), (1.0, fy)] {
        for (dx, wx) in [(0.0, 1.0 - fx), (1.0, fx)] {
            let w = wy * wx;
            if w != 0.0 {
                acc += w * fetch(y0 + dy, x0 + dx);
            }
        }
    }
    acc
}

/// Source pixel coordinates for every output pixel center.
fn inverse_sample_positions(g: &WarpSpec, height: usize, width: usize) -> Result<Vec<(f64, f64)>> {
    let inv = g.affine.inverse()?;
    let mut out = Vec::with_capacity(height * width);
    for row in 0..height {
        for col in 0..width {
            let y = Vec2::new((col as f64 + 0.5) / width as f64, (row as f64 + 0.5) / height as f64);
            let x = g.inverse_with(&inv, &y);
            out.push((x.x * width as f64 - 0.5, x.y * height as f64 - 0.5));
        }
    }
    Ok(out)
}

/// Resamples `img` so that content at `x` moves to `g(x)`; black padding.
pub fn warp_image(g: &WarpSpec, img: &Image) -> Result<Image> {
    g.affine.inverse()?;
    if g.is_identity() {
        return Ok(img.clone());
    }
    let (h, w, c) = (img.height(), img.width(), img.channels());
    let positions = inverse_sample_positions(g, h, w)?;
    let mut pixels = Vec::with_capacity(h * w * c);
    for &(px, py) in &positions {
        for ch in 0..c {
            let v = sample_bilinear(h, w, |r, cc| img.get(r, cc, ch), px, py);
            pixels.push(v.clamp(0.0, 1.0));
        }
    }
    Ok(Image::from_raw(h, w, c, pixels))
}

/// Inverse resampling of [`warp_image`]: output pixel `x` reads the input at `g(x)`.
pub fn unwarp_image(g: &WarpSpec, img: &Image) -> Result<Image> {
    if g.is_identity() {
        return Ok(img.clone());
    }
    let (h, w, c) = (img.height(), img.width(), img.channels());
    let mut pixels = Vec::with_capacity(h * w * c);
    for row in 0..h {
        for col in 0..w {
            let x = Vec2::new((col as f64 + 0.5) / w as f64, (row as f64 + 0.5) / h as f64);
            let y = g.forward(&x);
            let (px, py) = (y.x * w as f64 - 0.5, y.y * h as f64 - 0.5);
            for ch in 0..c {
                pixels.push(sample_bilinear(h, w, |r, cc| img.get(r, cc, ch), px, py).clamp(0.0, 1.0));
            }
        }
    }
    Ok(Image::from_raw(h, w, c, pixels))
}

/// Warps a heatmap like an image; unit-mass inputs are renormalized.
pub fn warp_heatmap(g: &WarpSpec, hm: &Heatmap) -> Result<Heatmap> {
    g.affine.inverse()?;
    if g.is_identity() {
        return Ok(hm.clone());
    }
    let (h, w) = hm.resolution();
    let positions = inverse_sample_positions(g, h, w)?;
    let grid = positions
        .iter()
        .map(|&(px, py)| sample_bilinear(h, w, |r, c| hm.get(r, c), px, py).max(0.0))
        .collect();
    let out = Heatmap::from_raw(h, w, grid);
    if hm.is_normalized(crate::heatmap::NORMALIZATION_TOL) {
        out.normalized()
    } else {
        Ok(out)
    }
}
