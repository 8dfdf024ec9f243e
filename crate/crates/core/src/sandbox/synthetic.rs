use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::deform::{warp_points, DeformSampler, WarpSpec};
use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::landmarks::LandmarkSet;

use super::template::face_template_68;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticFaceConfig {
    pub template: LandmarkSet,
    pub n_samples: usize,
    /// Warp ranges. Each sample's warp seed is drawn from `seed`, so the
    /// sampler's own seed is not used here.
    pub sampler: DeformSampler,
    /// Per-coordinate Gaussian jitter, normalized units.
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SyntheticFaceConfig {
    fn default() -> Self {
        Self {
            template: face_template_68(),
            n_samples: 50,
            sampler: DeformSampler::default(),
            noise_std: 0.005,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSample {
    pub truth: LandmarkSet,
    /// Warp taking the template frame to this sample.
    pub warp: WarpSpec,
}

pub fn generate_synthetic(config: &SyntheticFaceConfig) -> Result<Vec<SyntheticSample>> {
    if config.n_samples == 0 {
        return Err(Error::InvalidInput("n_samples must be at least 1".into()));
    }
    let noise = Normal::new(0.0, config.noise_std)
        .map_err(|e| Error::InvalidInput(format!("invalid noise_std {}: {e}", config.noise_std)))?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    (0..config.n_samples)
        .map(|_| {
            let warp = config.sampler.sample_seeded(rng.next_u64());
            let moved = warp_points(&warp, &config.template);
            let truth = if config.noise_std == 0.0 {
                moved
            } else {
                LandmarkSet::new(
                    moved
                        .points()
                        .iter()
                        .map(|p| p + Vec2::new(noise.sample(&mut rng), noise.sample(&mut rng)))
                        .collect(),
                )?
            };
            Ok(SyntheticSample { truth, warp })
        })
        .collect()
}
