use std::f64::consts::PI;

use crate::geometry::Vec2;
use crate::landmarks::LandmarkSet;

/// Outer eye corners in the 68-point scheme.
pub const OUTER_EYE_CORNERS: (usize, usize) = (36, 45);

fn ellipse(center: Vec2, radii: Vec2, angles: impl Iterator<Item = f64>) -> impl Iterator<Item = Vec2> {
    // Image coordinates: y grows downward, so positive angles sit above the center.
    angles.map(move |a| Vec2::new(center.x + radii.x * a.cos(), center.y - radii.y * a.sin()))
}

/// A frontal face drawn procedurally in the 68-point annotation order:
/// jaw 0–16, brows 17–26, nose 27–35, eyes 36–47, mouth 48–67.
pub fn face_template_68() -> LandmarkSet {
    let mut pts = Vec::with_capacity(68);
    // Jaw: ear to ear through the chin.
    pts.extend((0..17).map(|k| {
        let phi = PI * k as f64 / 16.0;
        Vec2::new(0.5 - 0.28 * phi.cos(), 0.42 + 0.33 * phi.sin())
    }));
    // Brows.
    for x0 in [0.28, 0.55] {
        pts.extend((0..5).map(|k| {
            let u = k as f64 / 4.0;
            Vec2::new(x0 + 0.17 * u, 0.33 - 0.03 * (PI * u).sin())
        }));
    }
    // Nose bridge, then nostrils.
    pts.extend((0..4).map(|k| Vec2::new(0.5, 0.40 + 0.04 * k as f64)));
    pts.extend((0..5).map(|k| {
        let u = k as f64 / 4.0;
        Vec2::new(0.45 + 0.10 * u, 0.56 + 0.012 * (PI * u).sin())
    }));
    // Eyes: corner, two upper lid points, corner, two lower lid points.
    for cx in [0.37, 0.63] {
        pts.extend(ellipse(
            Vec2::new(cx, 0.40),
            Vec2::new(0.055, 0.02),
            (0..6).map(|k| PI - k as f64 * PI / 3.0),
        ));
    }
    // Outer then inner lip contour, both starting at the left corner.
    pts.extend(ellipse(
        Vec2::new(0.5, 0.66),
        Vec2::new(0.09, 0.035),
        (0..12).map(|k| PI - k as f64 * PI / 6.0),
    ));
    pts.extend(ellipse(
        Vec2::new(0.5, 0.66),
        Vec2::new(0.06, 0.015),
        (0..8).map(|k| PI - k as f64 * PI / 4.0),
    ));
    LandmarkSet::new(pts).expect("template is finite")
}
