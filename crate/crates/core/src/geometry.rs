//! Planar vectors and affine maps in normalized image coordinates.

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec2 = Vector2<f64>;
pub type Mat2 = Matrix2<f64>;

/// `x ↦ linear · x + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineMap {
    pub linear: Mat2,
    pub translation: Vec2,
}

impl AffineMap {
    pub fn identity() -> Self {
        Self {
            linear: Mat2::identity(),
            translation: Vec2::zeros(),
        }
    }

    pub fn new(linear: Mat2, translation: Vec2) -> Result<Self> {
        if linear.iter().chain(translation.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("affine map entries must be finite".into()));
        }
        Ok(Self {
            linear,
            translation,
        })
    }

    pub fn translation(t: Vec2) -> Self {
        Self {
            linear: Mat2::identity(),
            translation: t,
        }
    }

    /// Linear part applied about a fixed center: `x ↦ L (x − c) + c`.
    pub fn about_center(linear: Mat2, center: Vec2) -> Self {
        Self {
            linear,
            translation: center - linear * center,
        }
    }

    /// Rotation by `angle` radians combined with isotropic `scale`, about `center`.
    pub fn rotation_scale(angle: f64, scale: f64, center: Vec2) -> Self {
        let (s, c) = angle.sin_cos();
        let linear = Mat2::new(c, -s, s, c) * scale;
        Self::about_center(linear, center)
    }

    pub fn apply(&self, p: &Vec2) -> Vec2 {
        self.linear * p + self.translation
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &AffineMap) -> AffineMap {
        AffineMap {
            linear: self.linear * other.linear,
            translation: self.linear * other.translation + self.translation,
        }
    }

    pub fn determinant(&self) -> f64 {
        self.linear.determinant()
    }

    pub fn inverse(&self) -> Result<AffineMap> {
        let det = self.determinant();
        if det.abs() < 1e-8 {
            return Err(Error::Degenerate(format!(
                "affine map is not invertible (|det| = {:e})",
                det.abs()
            )));
        }
        let l = &self.linear;
        let inv = Mat2::new(l[(1, 1)], -l[(0, 1)], -l[(1, 0)], l[(0, 0)]) / det;
        Ok(AffineMap {
            linear: inv,
            translation: -(inv * self.translation),
        })
    }

    pub fn is_identity(&self) -> bool {
        self.linear == Mat2::identity() && self.translation == Vec2::zeros()
    }
}

impl Default for AffineMap {
    fn default() -> Self {
        Self::identity()
    }
}

#[derive(Serialize, Deserialize)]
struct AffineRepr {
    linear: [[f64; 2]; 2],
    translation: [f64; 2],
}

impl Serialize for AffineMap {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let l = &self.linear;
        AffineRepr {
            linear: [[l[(0, 0)], l[(0, 1)]], [l[(1, 0)], l[(1, 1)]]],
            translation: [self.translation.x, self.translation.y],
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for AffineMap {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let r = AffineRepr::deserialize(deserializer)?;
        AffineMap::new(
            Mat2::new(r.linear[0][0], r.linear[0][1], r.linear[1][0], r.linear[1][1]),
            Vec2::new(r.translation[0], r.translation[1]),
        )
        .map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: &AffineMap, b: &AffineMap, tol: f64) -> bool {
        (a.linear - b.linear).abs().max() <= tol && (a.translation - b.translation).abs().max() <= tol
    }

    fn arb_map() -> impl Strategy<Value = AffineMap> {
        (-3.0..3.0f64, 0.2..2.0f64, -1.0..1.0f64, -1.0..1.0f64, -0.5..0.5f64).prop_map(
            |(angle, scale, tx, ty, shear)| {
                let base = AffineMap::rotation_scale(angle, scale, Vec2::new(0.5, 0.5));
                let shear = AffineMap::new(Mat2::new(1.0, shear, 0.0, 1.0), Vec2::new(tx, ty)).unwrap();
                base.compose(&shear)
            },
        )
    }

    proptest! {
        #[test]
        fn group_axioms(a in arb_map(), b in arb_map(), c in arb_map()) {
            let id = AffineMap::identity();
            prop_assert!(close(&a.compose(&id), &a, 1e-12));
            prop_assert!(close(&id.compose(&a), &a, 1e-12));
            let left = a.compose(&b).compose(&c);
            let right = a.compose(&b.compose(&c));
            prop_assert!(close(&left, &right, 1e-12));
            let inv = a.inverse().unwrap();
            prop_assert!(close(&a.compose(&inv), &id, 1e-12));
            prop_assert!(close(&inv.compose(&a), &id, 1e-12));
        }

        #[test]
        fn json_round_trip_is_exact(a in arb_map()) {
            let text = serde_json::to_string(&a).unwrap();
            let back: AffineMap = serde_json::from_str(&text).unwrap();
            prop_assert_eq!(a, back);
        }
    }

    #[test]
    fn singular_map_has_no_inverse() {
        let m = AffineMap::new(Mat2::new(1.0, 2.0, 2.0, 4.0), Vec2::zeros()).unwrap();
        assert!(matches!(m.inverse(), Err(Error::Degenerate(_))));
    }

    #[test]
    fn rotation_about_center_fixes_center() {
        let c = Vec2::new(0.3, 0.7);
        let m = AffineMap::rotation_scale(0.4, 1.3, c);
        assert!((m.apply(&c) - c).norm() < 1e-15);
    }
}
