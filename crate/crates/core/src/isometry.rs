//! Isometries of numerically round metrics onto σ.

use std::f64::consts::PI;

use crate::diffeo::{pullback, DiffeoProfile};
use crate::error::{Error, Result};
use crate::metric::{curvature, ReducedMetric};

/// Largest roundness defect accepted by [`build_isometry`].
pub const ROUND_INPUT_TOL: f64 = 1e-4;

/// Orthonormal frame at the x = 0 pole, one column per vector, in the
/// coordinates of the σ-orthonormal reference frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub vectors: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct IsometryResult {
    /// φ_g, with φ_g*σ = g
    pub diffeo: DiffeoProfile,
    /// ‖φ_g*σ − g‖_∞
    pub residual: f64,
    pub frame: Frame,
}

/// Gram–Schmidt of the reference frame against g at the x = 0 pole.
pub fn gram_schmidt_frame(g: &ReducedMetric) -> Result<Frame> {
    let q = g.grid();
    let n = g.dim();
    let (phi0, _) = q.pole_values(g.phi());
    let (p0, _) = q.pole_values(g.warp());
    if !(phi0 > 0.0 && p0 > 0.0) {
        return Err(Error::DegenerateMetric(format!("pole values phi = {phi0}, p = {p0}")));
    }
    // radial direction first, then the orbit directions
    let gram: Vec<f64> = (0..n).map(|i| if i == 0 { phi0 * phi0 } else { p0 * p0 }).collect();
    let inner = |a: &[f64], b: &[f64]| a.iter().zip(b).zip(&gram).map(|((x, y), w)| x * y * w).sum::<f64>();
    let mut vectors: Vec<Vec<f64>> = Vec::with_capacity(n);
    for i in 0..n {
        let mut v = vec![0.0; n];
        v[i] = 1.0;
        for u in &vectors {
            let c = inner(&v, u);
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= c * b);
        }
        let norm = inner(&v, &v).sqrt();
        v.iter_mut().for_each(|a| *a /= norm);
        vectors.push(v);
    }
    Ok(Frame { vectors })
}

/// Cosine coefficients of an even function of x from samples at x_j = πj/m.
fn cosine_series(samples: &[f64]) -> Vec<f64> {
    let m = samples.len() - 1;
    (0..=m)
        .map(|k| {
            let mut acc = 0.0;
            for (j, f) in samples.iter().enumerate() {
                let w = if j == 0 || j == m { 0.5 } else { 1.0 };
                acc += w * f * (PI * (j * k) as f64 / m as f64).cos();
            }
            let scale = if k == 0 || k == m { 1.0 } else { 2.0 };
            scale * acc / m as f64
        })
        .collect()
}

/// Radial arclength ∫₀ˣ φ at the grid angles and its total length.
fn arclength(g: &ReducedMetric) -> (Vec<f64>, f64) {
    let q = g.grid();
    let m = 2 * q.len();
    let samples: Vec<f64> = (0..=m).map(|j| q.interp(g.phi(), (PI * j as f64 / m as f64).cos())).collect();
    let a = cosine_series(&samples);
    let integral = |x: f64| a[0] * x + (1..a.len()).map(|k| a[k] * (k as f64 * x).sin() / k as f64).sum::<f64>();
    (q.nodes().iter().map(|x| integral(*x)).collect(), a[0] * PI)
}

/// φ_g for a numerically round g: radial arclength rescaled to [0, π].
pub fn build_isometry(g: &ReducedMetric) -> Result<IsometryResult> {
    let defect = curvature(g)?.round_defect();
    if !(defect <= ROUND_INPUT_TOL) {
        return Err(Error::Precondition(format!("metric is not round: curvature defect {defect:e} > {ROUND_INPUT_TOL:e}")));
    }
    let q = g.grid();
    let (r, len) = arclength(g);
    let theta: Vec<f64> = r.iter().map(|v| v * PI / len).collect();
    let diffeo = DiffeoProfile::from_theta(q, &theta)?;
    let pulled = pullback(&ReducedMetric::round(q), &diffeo)?;
    Ok(IsometryResult { residual: pulled.sup_distance(g), frame: gram_schmidt_frame(g)?, diffeo })
}

/// max_i ‖φ_{g_i} − φ_{g_{i+1}}‖_∞ / ‖g_i − g_{i+1}‖_∞, with 0/0 read as 0.
pub fn continuity_modulus(samples: &[ReducedMetric]) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::Precondition("at least two samples are required".into()));
    }
    let maps: Vec<DiffeoProfile> = samples.iter().map(|g| build_isometry(g).map(|r| r.diffeo)).collect::<Result<_>>()?;
    let mut modulus: f64 = 0.0;
    for i in 0..samples.len() - 1 {
        let num = maps[i].distance(&maps[i + 1]);
        let den = samples[i].sup_distance(&samples[i + 1]);
        let ratio = if num == 0.0 { 0.0 } else if den == 0.0 { f64::INFINITY } else { num / den };
        modulus = modulus.max(ratio);
    }
    Ok(modulus)
}
