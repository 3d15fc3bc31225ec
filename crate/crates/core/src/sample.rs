//! Seeded ¼-pinched initial data.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::metric::{normalize, pinching_up_to_scale, ReducedMetric};
use crate::sphere::Quadrature;

pub const MAX_AMPLITUDE: f64 = 0.1;
pub const MAX_REJECTIONS: usize = 100;

/// Harmonics j = 2, 3, 4 carry the perturbation.
pub const HARMONICS: [usize; 3] = [2, 3, 4];

/// ψ = sin x·(1 + Σ c_j cos jx) with φ the linear-in-cos x profile matching
/// the warp at both poles, volume-normalized.
pub fn perturbed_round(grid: &Arc<Quadrature>, coeffs: &[f64; 3]) -> Result<ReducedMetric> {
    let warp: Vec<f64> = grid
        .nodes()
        .iter()
        .map(|x| 1.0 + HARMONICS.iter().zip(coeffs).map(|(j, c)| c * (*j as f64 * x).cos()).sum::<f64>())
        .collect();
    let north = 1.0 + coeffs.iter().sum::<f64>();
    let south = 1.0 + HARMONICS.iter().zip(coeffs).map(|(j, c)| if j % 2 == 0 { *c } else { -c }).sum::<f64>();
    let phi = grid.cos_nodes().iter().map(|t| 0.5 * (north + south) + 0.5 * (north - south) * t).collect();
    normalize(&ReducedMetric::from_warp(grid, phi, warp)?)
}

/// Coefficients drawn uniformly from [−amplitude, amplitude]³, redrawn until
/// the metric is ¼-pinched up to scale.
pub fn sample_coefficients(grid: &Arc<Quadrature>, seed: u64, amplitude: f64) -> Result<[f64; 3]> {
    if !(0.0..=MAX_AMPLITUDE).contains(&amplitude) {
        return Err(Error::Precondition(format!("amplitude {amplitude} outside [0, {MAX_AMPLITUDE}]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_REJECTIONS {
        let mut c = [0.0; 3];
        for v in &mut c {
            *v = amplitude * rng.gen_range(-1.0..=1.0);
        }
        let ok = match perturbed_round(grid, &c) {
            Ok(g) => pinching_up_to_scale(&g)?.pinched,
            Err(Error::DegenerateMetric(_)) => false,
            Err(e) => return Err(e),
        };
        if ok {
            return Ok(c);
        }
    }
    Err(Error::GeneratorExhausted(MAX_REJECTIONS))
}

pub fn sample_pinched(grid: &Arc<Quadrature>, seed: u64, amplitude: f64) -> Result<ReducedMetric> {
    perturbed_round(grid, &sample_coefficients(grid, seed, amplitude)?)
}
