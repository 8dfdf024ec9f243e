//! Metrics and desk-scale synthetic experiments.

mod ablation;
mod metrics;
mod synthetic;
mod template;

use std::io::Write;

pub use ablation::{run_ablation, write_trajectory_csv, AblationConfig, AblationResult, TrajectoryRow, TRAJECTORY_HEADER};
pub use metrics::{iod_error, normalized_w1};
pub use synthetic::{generate_synthetic, SyntheticFaceConfig, SyntheticSample};
pub use template::{face_template_68, OUTER_EYE_CORNERS};

use crate::barycenter::{barycenter_sample_curve, BarycenterConfig, CurveRow};
use crate::error::Result;

pub fn run_sample_size_study(
    data: &[SyntheticSample],
    subset_sizes: &[usize],
    repeats: usize,
    seed: u64,
    config: &BarycenterConfig,
) -> Result<Vec<CurveRow>> {
    let truths: Vec<_> = data.iter().map(|s| s.truth.clone()).collect();
    barycenter_sample_curve(&truths, subset_sizes, repeats, seed, config)
}

pub const CURVE_HEADER: &str = "size,mean_w2,std_w2";

pub fn write_curve_csv<W: Write>(rows: &[CurveRow], mut out: W) -> Result<()> {
    writeln!(out, "{CURVE_HEADER}")?;
    for r in rows {
        writeln!(out, "{},{:?},{:?}", r.size, r.mean_w2, r.std_w2)?;
    }
    Ok(())
}
