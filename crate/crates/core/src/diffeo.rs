//! Axis-preserving diffeomorphisms of Sⁿ and pullbacks of reduced metrics.
//!
//! A map x ↦ θ(x) fixing both poles is stored through c(t) = cos θ(arccos t)
//! written as c = t + (1 − t²)u(t), so that sin²θ/sin²x = 1 − 2tu − (1 − t²)u²
//! carries no division by sin²x near the poles.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::metric::ReducedMetric;
use crate::sphere::Quadrature;

/// Tolerance on the fixed-endpoint condition θ(0) = 0, θ(π) = π.
pub const ENDPOINT_TOL: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct DiffeoProfile {
    grid: Arc<Quadrature>,
    cos_theta: Vec<f64>,
    shift: Vec<f64>,
}

impl DiffeoProfile {
    pub fn identity(grid: &Arc<Quadrature>) -> Self {
        Self { grid: grid.clone(), cos_theta: grid.cos_nodes().to_vec(), shift: vec![0.0; grid.len()] }
    }

    /// From nodal values of cos θ, checking monotonicity and the extrapolated endpoints.
    pub fn from_cos(grid: &Arc<Quadrature>, cos_theta: Vec<f64>) -> Result<Self> {
        let d = Self::from_cos_unchecked(grid, cos_theta);
        d.validate()?;
        let (a, b) = grid.pole_values(&d.cos_theta);
        if (a - 1.0).abs() > ENDPOINT_TOL || (b + 1.0).abs() > ENDPOINT_TOL {
            return Err(Error::DiffeoBreakdown(format!("endpoints moved: cos theta = {a}, {b}")));
        }
        Ok(d)
    }

    pub(crate) fn from_cos_unchecked(grid: &Arc<Quadrature>, cos_theta: Vec<f64>) -> Self {
        let shift = cos_theta
            .iter()
            .zip(grid.cos_nodes().iter().zip(grid.sin2_nodes()))
            .map(|(c, (t, s))| (c - t) / s)
            .collect();
        Self { grid: grid.clone(), cos_theta, shift }
    }

    /// From u with cos θ = t + (1 − t²)u.
    pub fn from_shift(grid: &Arc<Quadrature>, shift: Vec<f64>) -> Result<Self> {
        let d = Self::from_shift_unchecked(grid, shift);
        d.validate()?;
        Ok(d)
    }

    pub(crate) fn from_shift_unchecked(grid: &Arc<Quadrature>, shift: Vec<f64>) -> Self {
        let cos_theta = shift
            .iter()
            .zip(grid.cos_nodes().iter().zip(grid.sin2_nodes()))
            .map(|(u, (t, s))| t + s * u)
            .collect();
        Self { grid: grid.clone(), cos_theta, shift }
    }

    /// From θ sampled at the grid angles.
    pub fn from_theta(grid: &Arc<Quadrature>, theta: &[f64]) -> Result<Self> {
        Self::from_cos(grid, theta.iter().map(|v| v.cos()).collect())
    }

    pub fn validate(&self) -> Result<()> {
        let q = &self.grid;
        if self.cos_theta.len() != q.len() || self.shift.len() != q.len() {
            return Err(Error::Shape("diffeomorphism profile length does not match grid".into()));
        }
        if self.cos_theta.iter().any(|c| !(c.abs() < 1.0)) || self.sin_ratio_sq().iter().any(|r| !(*r > 0.0)) {
            return Err(Error::DiffeoBreakdown("an interior node was mapped onto a pole".into()));
        }
        let slope = q.d_dt(&self.cos_theta);
        if let Some(i) = slope.iter().position(|v| !(*v > 0.0)) {
            return Err(Error::DiffeoBreakdown(format!(
                "theta is not increasing at x = {}",
                q.nodes()[i]
            )));
        }
        Ok(())
    }

    pub fn grid(&self) -> &Arc<Quadrature> {
        &self.grid
    }

    pub fn cos_theta(&self) -> &[f64] {
        &self.cos_theta
    }

    pub fn shift(&self) -> &[f64] {
        &self.shift
    }

    pub fn theta(&self) -> Vec<f64> {
        self.cos_theta.iter().map(|c| c.acos()).collect()
    }

    /// sin²θ / sin²x = 1 − 2tu − (1 − t²)u²
    fn sin_ratio_sq(&self) -> Vec<f64> {
        let q = &self.grid;
        self.shift
            .iter()
            .zip(q.cos_nodes().iter().zip(q.sin2_nodes()))
            .map(|(u, (t, s))| 1.0 - 2.0 * t * u - s * u * u)
            .collect()
    }

    /// θ'(x) = c'(t)·sin x / sin θ
    pub fn derivative(&self) -> Vec<f64> {
        let ct = self.grid.d_dt(&self.cos_theta);
        ct.iter().zip(self.sin_ratio_sq()).map(|(d, r)| d / r.sqrt()).collect()
    }

    /// ‖θ − id‖_∞ over the grid.
    pub fn distance_from_identity(&self) -> f64 {
        self.theta().iter().zip(self.grid.nodes()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    /// ‖θ₁ − θ₂‖_∞ over the grid.
    pub fn distance(&self, other: &DiffeoProfile) -> f64 {
        self.theta().iter().zip(other.theta()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    /// self ∘ other, i.e. x ↦ θ_self(θ_other(x)).
    pub fn compose(&self, other: &DiffeoProfile) -> DiffeoProfile {
        // c₁(c₂) = c₂ + (1 − c₂²)u₁(c₂), and 1 − c₂² = (1 − t²)r₂
        let u1 = self.grid.interp_many(&self.shift, &other.cos_theta);
        let r2 = other.sin_ratio_sq();
        let u = (0..u1.len()).map(|i| other.shift[i] + r2[i] * u1[i]).collect();
        Self::from_shift_unchecked(&self.grid, u)
    }

    /// Numerical inverse: for each node, solve c(y) = t_i by safeguarded Newton.
    pub fn inverse(&self) -> Result<DiffeoProfile> {
        self.validate()?;
        let q = &self.grid;
        let slope = q.d_dt(&self.cos_theta);
        let mut out = Vec::with_capacity(q.len());
        for &target in q.cos_nodes() {
            let (mut lo, mut hi) = (-1.0_f64, 1.0_f64);
            let mut y = target;
            for _ in 0..100 {
                let f = q.interp(&self.cos_theta, y) - target;
                if f > 0.0 {
                    hi = y;
                } else {
                    lo = y;
                }
                let df = q.interp(&slope, y);
                let mut next = y - f / df;
                if !(next > lo && next < hi) {
                    next = 0.5 * (lo + hi);
                }
                if (next - y).abs() < 1e-16 {
                    y = next;
                    break;
                }
                y = next;
            }
            out.push(y);
        }
        Self::from_cos(q, out)
    }
}

/// (d*g)(x) = φ(θ)²θ'²dx² + ψ(θ)²g_{S^{n−1}}, resampled on the grid.
pub fn pullback(g: &ReducedMetric, d: &DiffeoProfile) -> Result<ReducedMetric> {
    d.validate()?;
    if !g.grid().same_grid(d.grid()) {
        return Err(Error::Shape("metric and diffeomorphism live on different grids".into()));
    }
    Ok(pullback_unchecked(g, d))
}

pub(crate) fn pullback_unchecked(g: &ReducedMetric, d: &DiffeoProfile) -> ReducedMetric {
    if d.shift.iter().all(|u| *u == 0.0) {
        return g.clone();
    }
    let q = g.grid();
    let phi_c = q.interp_many(g.phi(), d.cos_theta());
    let warp_c = q.interp_many(g.warp(), d.cos_theta());
    let dtheta = d.derivative();
    let ratio = d.sin_ratio_sq();
    let phi = phi_c.iter().zip(&dtheta).map(|(f, dt)| f * dt).collect();
    let warp = warp_c.iter().zip(&ratio).map(|(p, r)| p * r.sqrt()).collect();
    ReducedMetric::from_warp_unchecked(q, phi, warp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::volume;

    /// A smooth monotone axis map: tan(θ/2) = e^{a}·tan(x/2) composed with a
    /// non-conformal bump θ ↦ θ + b sin θ cos θ... kept monotone for |b| < 0.5.
    fn sample(q: &Arc<Quadrature>, a: f64, b: f64) -> DiffeoProfile {
        let theta: Vec<f64> = q
            .nodes()
            .iter()
            .map(|x| {
                let y = 2.0 * ((a.exp()) * (x / 2.0).tan()).atan();
                y + b * y.sin() * y.cos()
            })
            .collect();
        DiffeoProfile::from_theta(q, &theta).unwrap()
    }

    #[test]
    fn identity_pullback_is_trivial() {
        let q = Quadrature::new(3, 64).unwrap();
        let g = ReducedMetric::round(&q).scaled(1.3);
        let id = DiffeoProfile::identity(&q);
        assert_eq!(id.distance_from_identity(), 0.0);
        let back = pullback(&g, &id).unwrap();
        assert!(back.sup_distance(&g) < 1e-13);
    }

    #[test]
    fn pullback_preserves_volume() {
        let q = Quadrature::new(3, 128).unwrap();
        let sigma = ReducedMetric::round(&q);
        for (a, b) in [(0.05, 0.0), (-0.1, 0.1), (0.02, -0.2)] {
            let d = sample(&q, a, b);
            let g = pullback(&sigma, &d).unwrap();
            assert!((volume(&g) - q.omega_n()).abs() < 1e-10, "a={a} b={b}");
            g.validate().unwrap();
        }
    }

    #[test]
    fn inverse_undoes_pullback() {
        let q = Quadrature::new(3, 128).unwrap();
        let x = q.nodes();
        let psi: Vec<f64> = x.iter().map(|x| x.sin() * (1.0 + 0.02 * (2.0 * x).cos())).collect();
        let g = ReducedMetric::from_profiles(&q, vec![1.02; q.len()], psi).unwrap();
        let d = sample(&q, 0.08, 0.15);
        let inv = d.inverse().unwrap();
        assert!(d.compose(&inv).distance_from_identity() < 1e-10);
        let round_trip = pullback(&pullback(&g, &d).unwrap(), &inv).unwrap();
        assert!(round_trip.sup_distance(&g) < 1e-8);
    }

    #[test]
    fn non_monotone_profiles_are_rejected() {
        let q = Quadrature::new(3, 32).unwrap();
        let mut c = q.cos_nodes().to_vec();
        c.swap(10, 11);
        assert!(matches!(DiffeoProfile::from_cos(&q, c), Err(Error::DiffeoBreakdown(_))));
    }
}
