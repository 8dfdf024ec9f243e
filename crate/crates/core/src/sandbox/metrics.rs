use crate::error::{Error, Result};
use crate::landmarks::LandmarkSet;
use crate::transport::{self, Solver};

fn reference_distance(truth: &LandmarkSet, left: usize, right: usize) -> Result<f64> {
    let n = truth.len();
    if left >= n || right >= n {
        return Err(Error::InvalidInput(format!(
            "eye indices ({left}, {right}) out of range for {n} points"
        )));
    }
    let d = (truth.points()[left] - truth.points()[right]).norm();
    if d <= 1e-6 {
        return Err(Error::Degenerate(format!("inter-ocular distance {d:e} is too small")));
    }
    Ok(d)
}

/// Mean point error over the inter-ocular distance, in percent.
pub fn iod_error(pred: &LandmarkSet, truth: &LandmarkSet, left_eye: usize, right_eye: usize) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::DimensionMismatch(format!(
            "prediction has {} points, truth has {}",
            pred.len(),
            truth.len()
        )));
    }
    let iod = reference_distance(truth, left_eye, right_eye)?;
    let mean = pred
        .points()
        .iter()
        .zip(truth.points())
        .map(|(p, t)| (p - t).norm())
        .sum::<f64>()
        / pred.len() as f64;
    Ok(100.0 * mean / iod)
}

/// W1 between the sets over the outer-eye-corner distance; needs no correspondence.
pub fn normalized_w1(
    pred: &LandmarkSet,
    truth: &LandmarkSet,
    outer_left: usize,
    outer_right: usize,
    solver: &Solver,
) -> Result<f64> {
    let d = reference_distance(truth, outer_left, outer_right)?;
    Ok(transport::w1(pred, truth, solver)? / d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec2;
    use crate::sandbox::template::{face_template_68, OUTER_EYE_CORNERS};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn jittered(s: &LandmarkSet, rng: &mut ChaCha8Rng, amp: f64) -> LandmarkSet {
        LandmarkSet::new(
            s.points()
                .iter()
                .map(|p| p + Vec2::new(rng.random_range(-amp..amp), rng.random_range(-amp..amp)))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn iod_examples() {
        let t = face_template_68();
        let (l, r) = OUTER_EYE_CORNERS;
        assert_eq!(iod_error(&t, &t, l, r).unwrap(), 0.0);
        let iod = (t.points()[l] - t.points()[r]).norm();
        let shifted = t.translated(&Vec2::new(iod, 0.0));
        assert!((iod_error(&shifted, &t, l, r).unwrap() - 100.0).abs() < 1e-9);
    }

    #[test]
    fn iod_matches_reverse_accumulation() {
        let t = face_template_68();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = jittered(&t, &mut rng, 0.02);
        let (l, r) = OUTER_EYE_CORNERS;
        let mut acc = 0.0;
        for i in (0..68).rev() {
            let dx = p.points()[i].x - t.points()[i].x;
            let dy = p.points()[i].y - t.points()[i].y;
            acc += dx.hypot(dy);
        }
        let iod = (t.points()[l] - t.points()[r]).norm();
        let expect = 100.0 * acc / 68.0 / iod;
        assert!((iod_error(&p, &t, l, r).unwrap() - expect).abs() < 1e-10);
    }

    #[test]
    fn degenerate_eyes_rejected() {
        let t = LandmarkSet::from_xy(&[[0.5, 0.5], [0.5, 0.5], [0.1, 0.1]]).unwrap();
        assert!(iod_error(&t, &t, 0, 1).is_err());
        assert!(iod_error(&t, &t, 0, 7).is_err());
        assert!(normalized_w1(&t, &t, 0, 1, &Solver::Exact).is_err());
    }

    #[test]
    fn normalized_w1_examples() {
        let t = face_template_68();
        let (l, r) = OUTER_EYE_CORNERS;
        assert_eq!(normalized_w1(&t, &t, l, r, &Solver::Exact).unwrap(), 0.0);
        let perm: Vec<usize> = (0..68).rev().collect();
        assert_eq!(normalized_w1(&t.permuted(&perm).unwrap(), &t, l, r, &Solver::Exact).unwrap(), 0.0);
    }

    #[test]
    fn ratio_metrics_are_scale_invariant() {
        let t = face_template_68();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = jittered(&t, &mut rng, 0.03);
        let (l, r) = OUTER_EYE_CORNERS;
        let scale = |s: &LandmarkSet, k: f64| LandmarkSet::new(s.points().iter().map(|v| v * k).collect()).unwrap();
        for k in [0.5, 2.0, 3.7] {
            let a = iod_error(&p, &t, l, r).unwrap();
            let b = iod_error(&scale(&p, k), &scale(&t, k), l, r).unwrap();
            assert!((a - b).abs() < 1e-9);
            let a = normalized_w1(&p, &t, l, r, &Solver::Exact).unwrap();
            let b = normalized_w1(&scale(&p, k), &scale(&t, k), l, r, &Solver::Exact).unwrap();
            assert!((a - b).abs() < 1e-9);
        }
    }
}
