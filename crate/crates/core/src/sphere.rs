//! Quadrature, spectral differentiation and tensor norms on the round sphere.
//!
//! Axisymmetric fields on Sⁿ are functions of the polar angle `x ∈ [0, π]`.
//! Fields that are even about both poles are smooth functions of `t = cos x`,
//! so every profile is stored as nodal values of a polynomial in `t` sampled
//! at Gauss–Jacobi nodes for the weight `(1 − t²)^{(n−2)/2}`, which is the
//! pullback of `sin^{n−1}(x) dx`. Odd fields carry an explicit `sin x` factor
//! and never need one-sided stencils at the poles.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default number of collocation nodes.
pub const DEFAULT_RESOLUTION: usize = 128;

/// Γ(k/2) for a positive integer k, exact up to rounding.
pub(crate) fn gamma_half(k: usize) -> f64 {
    assert!(k > 0);
    let (mut value, mut arg) = if k % 2 == 0 { (1.0, 1.0) } else { (PI.sqrt(), 0.5) };
    let target = k as f64 / 2.0;
    while arg < target - 0.25 {
        value *= arg;
        arg += 1.0;
    }
    value
}

/// Volume of the unit round sphere Sⁿ ⊂ ℝⁿ⁺¹.
pub fn round_volume(n: usize) -> Result<f64> {
    if n < 1 {
        return Err(Error::Domain(format!("round_volume needs n >= 1, got {n}")));
    }
    Ok(2.0 * PI.powf((n as f64 + 1.0) / 2.0) / gamma_half(n + 1))
}

fn jacobi_offdiag(k: usize, alpha: f64) -> f64 {
    let k = k as f64;
    (k * (k + 2.0 * alpha) / ((2.0 * k + 2.0 * alpha + 1.0) * (2.0 * k + 2.0 * alpha - 1.0))).sqrt()
}

/// ∫₋₁¹ (1 − t²)^α dt
fn jacobi_mass(alpha: f64) -> f64 {
    // alpha is always a half-integer here, so 2α+2 and 2α+3 are integers.
    let two_a = (2.0 * alpha).round() as usize;
    PI.sqrt() * gamma_half(two_a + 2) / gamma_half(two_a + 3)
}

/// Orthonormal symmetric Jacobi polynomials p_0..p_{count-1} at `t`.
fn orthonormal_values(alpha: f64, count: usize, t: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(count);
    let p0 = 1.0 / jacobi_mass(alpha).sqrt();
    out.push(p0);
    if count == 1 {
        return out;
    }
    let mut prev = 0.0;
    let mut cur = p0;
    let mut b_prev = 0.0;
    for k in 0..count - 1 {
        let b_next = jacobi_offdiag(k + 1, alpha);
        let next = (t * cur - b_prev * prev) / b_next;
        out.push(next);
        prev = cur;
        cur = next;
        b_prev = b_next;
    }
    out
}

/// Value and derivative of the degree-`deg` orthonormal polynomial at `t`.
fn orthonormal_with_derivative(alpha: f64, deg: usize, t: f64) -> (f64, f64) {
    let p0 = 1.0 / jacobi_mass(alpha).sqrt();
    let (mut prev, mut cur) = (0.0, p0);
    let (mut dprev, mut dcur) = (0.0, 0.0);
    let mut b_prev = 0.0;
    for k in 0..deg {
        let b_next = jacobi_offdiag(k + 1, alpha);
        let next = (t * cur - b_prev * prev) / b_next;
        let dnext = (cur + t * dcur - b_prev * dprev) / b_next;
        prev = cur;
        cur = next;
        dprev = dcur;
        dcur = dnext;
        b_prev = b_next;
    }
    (cur, dcur)
}

/// Gauss–Jacobi rule on the polar angle, with differentiation and modal
/// transforms for axisymmetric scalar and tensor fields.
#[derive(Debug)]
pub struct Quadrature {
    n: usize,
    /// polar angles, strictly increasing in (0, π)
    x: Vec<f64>,
    /// cos x, strictly decreasing
    t: Vec<f64>,
    sin: Vec<f64>,
    /// sin² x = 1 − t²
    s: Vec<f64>,
    /// ∫₀^π f ω_{n−1} sin^{n−1} x dx ≈ Σ w_i f_i
    weights: Vec<f64>,
    bary: Vec<f64>,
    /// off-diagonal barycentric differentiation matrix in t (row major)
    diff: Vec<f64>,
    /// orthonormal scalar harmonics: `scalar_modes[j*N + i]` = P̂_j(t_i)
    scalar_modes: Vec<f64>,
    /// orthonormal tracefree profiles: `tracefree_modes[k*N + i]` = Q̂_k(t_i)
    tracefree_modes: Vec<f64>,
    omega_n: f64,
}

impl Quadrature {
    pub fn new(n: usize, resolution: usize) -> Result<Arc<Self>> {
        if n < 3 {
            return Err(Error::Domain(format!("sphere dimension must be >= 3, got {n}")));
        }
        if resolution < 8 {
            return Err(Error::Domain(format!("resolution must be >= 8, got {resolution}")));
        }
        let big_n = resolution;
        let alpha = (n as f64 - 2.0) / 2.0;

        // Golub–Welsch for the nodes, then Newton polish on p_N.
        let mut jac = DMatrix::<f64>::zeros(big_n, big_n);
        for k in 1..big_n {
            let b = jacobi_offdiag(k, alpha);
            jac[(k - 1, k)] = b;
            jac[(k, k - 1)] = b;
        }
        let eig = SymmetricEigen::new(jac);
        let mut roots: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        for r in roots.iter_mut() {
            for _ in 0..3 {
                let (p, dp) = orthonormal_with_derivative(alpha, big_n, *r);
                if dp == 0.0 {
                    break;
                }
                *r -= p / dp;
            }
        }
        roots.sort_by(|a, b| b.partial_cmp(a).unwrap());
        // the rule is symmetric; enforce it exactly
        for i in 0..big_n / 2 {
            let m = 0.5 * (roots[i] - roots[big_n - 1 - i]);
            roots[i] = m;
            roots[big_n - 1 - i] = -m;
        }
        if big_n % 2 == 1 {
            roots[big_n / 2] = 0.0;
        }

        let omega_sub = round_volume(n - 1)?;
        let t = roots;
        let x: Vec<f64> = t.iter().map(|v| v.acos()).collect();
        let sin: Vec<f64> = x.iter().map(|v| v.sin()).collect();
        let s: Vec<f64> = t.iter().map(|v| (1.0 - v) * (1.0 + v)).collect();

        // Christoffel numbers.
        let weights: Vec<f64> = t
            .iter()
            .map(|&ti| {
                let vals = orthonormal_values(alpha, big_n, ti);
                omega_sub / vals.iter().map(|v| v * v).sum::<f64>()
            })
            .collect();

        // Explicit barycentric weights for Gauss–Jacobi nodes: (−1)^j sqrt((1 − t_j²)λ_j).
        let wmax = weights.iter().zip(&s).map(|(w, s)| (w * s).sqrt()).fold(0.0, f64::max);
        let bary: Vec<f64> = (0..big_n)
            .map(|j| {
                let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                sign * (weights[j] * s[j]).sqrt() / wmax
            })
            .collect();

        let mut diff = vec![0.0; big_n * big_n];
        for i in 0..big_n {
            for j in 0..big_n {
                if i != j {
                    diff[i * big_n + j] = bary[j] / bary[i] / (t[i] - t[j]);
                }
            }
        }

        let scale = 1.0 / omega_sub.sqrt();
        let mut scalar_modes = vec![0.0; big_n * big_n];
        let tf_count = big_n - 2;
        let mut tracefree_modes = vec![0.0; tf_count * big_n];
        let alpha_tf = (n as f64 + 2.0) / 2.0;
        for (i, &ti) in t.iter().enumerate() {
            for (j, v) in orthonormal_values(alpha, big_n, ti).into_iter().enumerate() {
                scalar_modes[j * big_n + i] = v * scale;
            }
            for (k, v) in orthonormal_values(alpha_tf, tf_count, ti).into_iter().enumerate() {
                tracefree_modes[k * big_n + i] = v * scale;
            }
        }

        Ok(Arc::new(Self {
            n,
            x,
            t,
            sin,
            s,
            weights,
            bary,
            diff,
            scalar_modes,
            tracefree_modes,
            omega_n: round_volume(n)?,
        }))
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.x
    }

    pub fn cos_nodes(&self) -> &[f64] {
        &self.t
    }

    pub fn sin_nodes(&self) -> &[f64] {
        &self.sin
    }

    pub fn sin2_nodes(&self) -> &[f64] {
        &self.s
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// ω_n for this grid's dimension.
    pub fn omega_n(&self) -> f64 {
        self.omega_n
    }

    pub fn integrate(&self, f: &[f64]) -> f64 {
        debug_assert_eq!(f.len(), self.len());
        self.weights.iter().zip(f).map(|(w, v)| w * v).sum()
    }

    /// Derivative with respect to `t = cos x` of the nodal interpolant.
    /// Constants differentiate to exactly zero.
    pub fn d_dt(&self, f: &[f64]) -> Vec<f64> {
        let big_n = self.len();
        let mut out = vec![0.0; big_n];
        for i in 0..big_n {
            let row = &self.diff[i * big_n..(i + 1) * big_n];
            let fi = f[i];
            let mut acc = 0.0;
            for j in 0..big_n {
                acc += row[j] * (f[j] - fi);
            }
            out[i] = acc;
        }
        out
    }

    /// Evaluate the nodal interpolant at an arbitrary `t ∈ [−1, 1]`.
    pub fn interp(&self, f: &[f64], tq: f64) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for j in 0..self.len() {
            let d = tq - self.t[j];
            if d == 0.0 {
                return f[j];
            }
            let c = self.bary[j] / d;
            num += c * f[j];
            den += c;
        }
        num / den
    }

    pub fn interp_many(&self, f: &[f64], tq: &[f64]) -> Vec<f64> {
        tq.iter().map(|&v| self.interp(f, v)).collect()
    }

    /// Values of the interpolant at the x = 0 and x = π poles.
    pub fn pole_values(&self, f: &[f64]) -> (f64, f64) {
        (self.interp(f, 1.0), self.interp(f, -1.0))
    }

    pub(crate) fn scalar_mode(&self, j: usize) -> &[f64] {
        let big_n = self.len();
        &self.scalar_modes[j * big_n..(j + 1) * big_n]
    }

    pub(crate) fn tracefree_mode(&self, k: usize) -> &[f64] {
        let big_n = self.len();
        &self.tracefree_modes[k * big_n..(k + 1) * big_n]
    }

    pub(crate) fn tracefree_count(&self) -> usize {
        self.len() - 2
    }

    /// Coefficients of a scalar profile in the orthonormal axis harmonics.
    pub fn scalar_coefficients(&self, f: &[f64]) -> Vec<f64> {
        (0..self.len())
            .map(|j| {
                let m = self.scalar_mode(j);
                (0..self.len()).map(|i| self.weights[i] * f[i] * m[i]).sum()
            })
            .collect()
    }

    /// Drop axis-harmonic coefficients of magnitude below `floor` (in units of
    /// the orthonormal basis, i.e. ω_n^{-1/2} times a pointwise amplitude).
    pub fn denoise(&self, f: &[f64], floor: f64) -> Vec<f64> {
        let coeffs = self.scalar_coefficients(f);
        let cut = floor * self.omega_n.sqrt();
        let mut out = vec![0.0; self.len()];
        for (j, c) in coeffs.iter().enumerate() {
            if c.abs() > cut {
                for (o, m) in out.iter_mut().zip(self.scalar_mode(j)) {
                    *o += c * m;
                }
            }
        }
        out
    }

    pub fn same_grid(&self, other: &Quadrature) -> bool {
        std::ptr::eq(self, other) || (self.n == other.n && self.t == other.t)
    }
}

/// Scalar-Laplacian spectrum and the axis harmonic of the reduced class.
#[derive(Debug, Clone)]
pub struct HarmonicTable {
    pub n: usize,
    /// x^{n+1} restricted to the grid, i.e. cos x_i
    pub axis: Vec<f64>,
}

impl HarmonicTable {
    pub fn new(q: &Quadrature) -> Self {
        Self { n: q.dim(), axis: q.cos_nodes().to_vec() }
    }

    /// λ_j = j(n + j − 1), the eigenvalues of −Δ₀.
    pub fn eigenvalue(&self, j: usize) -> f64 {
        (j * (self.n + j - 1)) as f64
    }
}

/// An axisymmetric symmetric 2-tensor in σ-orthonormal frame components:
/// `rad` = h(∂ₓ, ∂ₓ) and `orb` = h(e, e) for a unit σ-vector e tangent to the orbit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducedSymTensor {
    pub rad: Vec<f64>,
    pub orb: Vec<f64>,
}

impl ReducedSymTensor {
    pub fn zeros(len: usize) -> Self {
        Self { rad: vec![0.0; len], orb: vec![0.0; len] }
    }

    /// f·σ
    pub fn conformal(f: &[f64]) -> Self {
        Self { rad: f.to_vec(), orb: f.to_vec() }
    }

    /// The round metric σ itself.
    pub fn round(q: &Quadrature) -> Self {
        Self::conformal(&vec![1.0; q.len()])
    }

    /// The tracefree tensor with (rad − orb) = sin² x · u.
    pub fn tracefree_from_profile(q: &Quadrature, u: &[f64]) -> Self {
        let n = q.dim() as f64;
        let s = q.sin2_nodes();
        Self {
            rad: (0..u.len()).map(|i| (n - 1.0) / n * s[i] * u[i]).collect(),
            orb: (0..u.len()).map(|i| -s[i] * u[i] / n).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.rad.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rad.is_empty()
    }

    /// H = σ^{ij}h_ij
    pub fn trace(&self, n: usize) -> Vec<f64> {
        let m = n as f64 - 1.0;
        self.rad.iter().zip(&self.orb).map(|(a, b)| a + m * b).collect()
    }

    /// h − (H/n)σ
    pub fn tracefree_part(&self, n: usize) -> Self {
        let h = self.trace(n);
        let nf = n as f64;
        Self {
            rad: self.rad.iter().zip(&h).map(|(a, t)| a - t / nf).collect(),
            orb: self.orb.iter().zip(&h).map(|(b, t)| b - t / nf).collect(),
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            rad: self.rad.iter().map(|v| c * v).collect(),
            orb: self.orb.iter().map(|v| c * v).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        self.axpy(1.0, other)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.axpy(-1.0, other)
    }

    /// self + c·other
    pub fn axpy(&self, c: f64, other: &Self) -> Self {
        Self {
            rad: self.rad.iter().zip(&other.rad).map(|(a, b)| a + c * b).collect(),
            orb: self.orb.iter().zip(&other.orb).map(|(a, b)| a + c * b).collect(),
        }
    }

    /// Pointwise multiplication by a scalar profile.
    pub fn times(&self, f: &[f64]) -> Self {
        Self {
            rad: self.rad.iter().zip(f).map(|(a, b)| a * b).collect(),
            orb: self.orb.iter().zip(f).map(|(a, b)| a * b).collect(),
        }
    }
}

fn check_len(q: &Quadrature, h: &ReducedSymTensor) -> Result<()> {
    if h.rad.len() != q.len() || h.orb.len() != q.len() {
        return Err(Error::Shape(format!(
            "tensor has {}/{} samples, grid has {}",
            h.rad.len(),
            h.orb.len(),
            q.len()
        )));
    }
    Ok(())
}

/// ∫ σ^{ik}σ^{jl}(h1)_ij(h2)_kl dμ[σ]
pub fn l2_inner(h1: &ReducedSymTensor, h2: &ReducedSymTensor, q: &Quadrature) -> Result<f64> {
    check_len(q, h1)?;
    check_len(q, h2)?;
    let m = q.dim() as f64 - 1.0;
    Ok((0..q.len())
        .map(|i| q.weights[i] * (h1.rad[i] * h2.rad[i] + m * h1.orb[i] * h2.orb[i]))
        .sum())
}

pub fn l2_norm(h: &ReducedSymTensor, q: &Quadrature) -> Result<f64> {
    Ok(l2_inner(h, h, q)?.max(0.0).sqrt())
}

/// Max over the grid of the pointwise σ-norm.
pub fn sup_norm(h: &ReducedSymTensor, n: usize) -> f64 {
    let m = n as f64 - 1.0;
    h.rad
        .iter()
        .zip(&h.orb)
        .map(|(a, b)| (a * a + m * b * b).sqrt())
        .fold(0.0, f64::max)
}

/// Coefficients of `h` in the σ-orthonormal eigenbasis of the rough Laplacian:
/// pure-trace modes P̂_j σ/√n and tracefree modes built from Q̂_k.
#[derive(Debug, Clone)]
pub struct TensorModes {
    pub trace: Vec<f64>,
    pub tracefree: Vec<f64>,
}

impl TensorModes {
    /// −(eigenvalue of Δ₂) for trace mode j
    pub fn trace_rough_eigenvalue(n: usize, j: usize) -> f64 {
        (j * (n + j - 1)) as f64
    }

    /// −(eigenvalue of Δ₂) for tracefree mode k
    pub fn tracefree_rough_eigenvalue(n: usize, k: usize) -> f64 {
        (k * (k + n + 3) + 2) as f64
    }
}

pub fn tensor_modes(h: &ReducedSymTensor, q: &Quadrature) -> Result<TensorModes> {
    check_len(q, h)?;
    let n = q.dim();
    let nf = n as f64;
    let big_n = q.len();
    let tr = h.trace(n);
    let trace = (0..big_n)
        .map(|j| {
            let m = q.scalar_mode(j);
            (0..big_n).map(|i| q.weights[i] * tr[i] * m[i]).sum::<f64>() / nf.sqrt()
        })
        .collect();
    let kappa = (nf / (nf - 1.0)).sqrt();
    let pref = (nf - 1.0) / nf * kappa;
    let s = q.sin2_nodes();
    let tracefree = (0..q.tracefree_count())
        .map(|k| {
            let m = q.tracefree_mode(k);
            pref * (0..big_n)
                .map(|i| q.weights[i] * s[i] * m[i] * (h.rad[i] - h.orb[i]))
                .sum::<f64>()
        })
        .collect();
    Ok(TensorModes { trace, tracefree })
}

/// Inverse of [`tensor_modes`].
pub fn tensor_from_modes(modes: &TensorModes, q: &Quadrature) -> ReducedSymTensor {
    let n = q.dim();
    let nf = n as f64;
    let big_n = q.len();
    let mut f = vec![0.0; big_n];
    for (j, c) in modes.trace.iter().enumerate() {
        if *c != 0.0 {
            for (fi, m) in f.iter_mut().zip(q.scalar_mode(j)) {
                *fi += c * m / nf.sqrt();
            }
        }
    }
    let kappa = (nf / (nf - 1.0)).sqrt();
    let mut u = vec![0.0; big_n];
    for (k, d) in modes.tracefree.iter().enumerate() {
        if *d != 0.0 {
            for (ui, m) in u.iter_mut().zip(q.tracefree_mode(k)) {
                *ui += d * kappa * m;
            }
        }
    }
    ReducedSymTensor::conformal(&f).add(&ReducedSymTensor::tracefree_from_profile(q, &u))
}

/// Highest derivative order accepted by [`sobolev_norm`].
pub fn max_sobolev_order(n: usize) -> usize {
    2 * n
}

/// Σ_{j≤m} ‖∇ʲh‖₂ with σ-covariant derivatives.
///
/// Derivative terms are evaluated spectrally through the rough Laplacian,
/// ‖∇ʲh‖² := Σ μ^j c², on the lowest quarter of the modes. Coefficients at
/// the rounding floor (below 1e-14·‖h‖₂) are dropped, since high powers of μ
/// would otherwise amplify pure noise.
pub fn sobolev_norm(h: &ReducedSymTensor, m: usize, q: &Quadrature) -> Result<f64> {
    let n = q.dim();
    if m > max_sobolev_order(n) {
        return Err(Error::Capability {
            what: format!("Sobolev order {m}"),
            max: max_sobolev_order(n),
        });
    }
    let mut total = l2_norm(h, q)?;
    if m == 0 {
        return Ok(total);
    }
    let modes = tensor_modes(h, q)?;
    let cutoff = (q.len() / 4).max(4);
    let floor = 1e-14 * total;
    for order in 1..=m {
        let mut acc = 0.0;
        for (j, c) in modes.trace.iter().enumerate().take(cutoff) {
            if c.abs() > floor {
                acc += TensorModes::trace_rough_eigenvalue(n, j).powi(order as i32) * c * c;
            }
        }
        for (k, d) in modes.tracefree.iter().enumerate().take(cutoff) {
            if d.abs() > floor {
                acc += TensorModes::tracefree_rough_eigenvalue(n, k).powi(order as i32) * d * d;
            }
        }
        total += acc.sqrt();
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_volume_values() {
        assert!((round_volume(3).unwrap() - 2.0 * PI * PI).abs() < 1e-12);
        assert!((round_volume(1).unwrap() - 2.0 * PI).abs() < 1e-12);
        assert!((round_volume(5).unwrap() - PI.powi(3)).abs() < 1e-11);
        assert!((round_volume(2).unwrap() - 4.0 * PI).abs() < 1e-12);
        assert!(matches!(round_volume(0), Err(Error::Domain(_))));
    }

    #[test]
    fn quadrature_integrates_one_and_is_ordered() {
        for n in 3..=6 {
            let q = Quadrature::new(n, 128).unwrap();
            let one = vec![1.0; q.len()];
            let vol = q.integrate(&one);
            assert!((vol / q.omega_n() - 1.0).abs() < 1e-12, "n={n}: {vol}");
            assert!(q.weights().iter().all(|w| *w > 0.0));
            assert!(q.nodes().windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn quadrature_exact_on_cos_polynomials() {
        // ∫ cos^{2k} x sin^{n-1} x dx over [0,π] against the Beta-function value
        let n = 3;
        let q = Quadrature::new(n, 16).unwrap();
        let omega_sub = round_volume(n - 1).unwrap();
        for k in 0..16usize {
            let f: Vec<f64> = q.cos_nodes().iter().map(|t| t.powi(2 * k as i32)).collect();
            // ∫ t^{2k}(1−t²)^{1/2} dt = Γ(k+1/2)Γ(3/2)/Γ(k+2)
            let exact = omega_sub * gamma_half(2 * k + 1) * gamma_half(3) / gamma_half(2 * k + 4);
            let got = q.integrate(&f);
            assert!((got - exact).abs() < 1e-13 * exact.max(1.0), "k={k}: {got} vs {exact}");
        }
    }

    #[test]
    fn differentiation_is_exact_on_polynomials() {
        let q = Quadrature::new(4, 32).unwrap();
        let f: Vec<f64> = q.cos_nodes().iter().map(|t| t.powi(5) - 2.0 * t * t).collect();
        let df = q.d_dt(&f);
        for (t, d) in q.cos_nodes().iter().zip(&df) {
            assert!((d - (5.0 * t.powi(4) - 4.0 * t)).abs() < 1e-11);
        }
        let c = vec![3.0; q.len()];
        assert!(q.d_dt(&c).iter().all(|v| *v == 0.0));
        let (a, b) = q.pole_values(&f);
        assert!((a + 1.0).abs() < 1e-12 && (b + 3.0).abs() < 1e-12);
    }

    #[test]
    fn inner_products_of_basic_tensors() {
        let q = Quadrature::new(3, 128).unwrap();
        let sigma = ReducedSymTensor::round(&q);
        let cs = ReducedSymTensor::conformal(q.cos_nodes());
        let w = q.omega_n();
        assert!((l2_inner(&sigma, &sigma, &q).unwrap() - 6.0 * PI * PI).abs() < 1e-10);
        assert!(l2_inner(&cs, &sigma, &q).unwrap().abs() < 1e-12);
        assert!((l2_inner(&cs, &cs, &q).unwrap() - 3.0 * w / 4.0).abs() < 1e-10);
        let bad = ReducedSymTensor::zeros(3);
        assert!(matches!(l2_inner(&bad, &sigma, &q), Err(Error::Shape(_))));
    }

    #[test]
    fn sobolev_and_sup_norms() {
        let n = 3;
        let q = Quadrature::new(n, 128).unwrap();
        let w = q.omega_n();
        let zero = ReducedSymTensor::zeros(q.len());
        assert_eq!(sobolev_norm(&zero, 4, &q).unwrap(), 0.0);
        let sigma = ReducedSymTensor::round(&q);
        assert!((sobolev_norm(&sigma, 0, &q).unwrap() - (3.0 * w).sqrt()).abs() < 1e-10);
        assert!((sobolev_norm(&sigma, 6, &q).unwrap() - (3.0 * w).sqrt()).abs() < 1e-9);
        let cs = ReducedSymTensor::conformal(q.cos_nodes());
        // ‖h‖² = nω/(n+1), ‖∇h‖² = n·λ₁·ω/(n+1)
        let l2 = (3.0 * w / 4.0).sqrt();
        let grad = (3.0 * 3.0 * w / 4.0).sqrt();
        assert!((sobolev_norm(&cs, 1, &q).unwrap() - (l2 + grad)).abs() < 1e-9);
        assert!(matches!(sobolev_norm(&cs, 7, &q), Err(Error::Capability { max: 6, .. })));

        assert_eq!(sup_norm(&zero, n), 0.0);
        assert!((sup_norm(&sigma.scaled(-2.0), n) - 2.0 * 3f64.sqrt()).abs() < 1e-14);
        // the largest node cosine is just below 1
        let s = sup_norm(&cs, n);
        assert!(s <= 3f64.sqrt() && s > 3f64.sqrt() * 0.999);
    }

    #[test]
    fn modal_round_trip_and_parseval() {
        let q = Quadrature::new(3, 48).unwrap();
        let t = q.cos_nodes();
        let s = q.sin2_nodes();
        let h = ReducedSymTensor {
            rad: t.iter().zip(s).map(|(t, s)| 0.3 + t * t * t + 0.2 * s * t).collect(),
            orb: t.iter().map(|t| 0.3 + t * t * t).collect(),
        };
        let modes = tensor_modes(&h, &q).unwrap();
        let back = tensor_from_modes(&modes, &q);
        assert!(sup_norm(&back.sub(&h), 3) < 1e-12);
        let energy: f64 = modes.trace.iter().chain(&modes.tracefree).map(|c| c * c).sum();
        assert!((energy - l2_inner(&h, &h, &q).unwrap()).abs() < 1e-10);
    }

    #[test]
    fn harmonic_table() {
        let q = Quadrature::new(3, 16).unwrap();
        let table = HarmonicTable::new(&q);
        assert_eq!(table.eigenvalue(0), 0.0);
        assert_eq!(table.eigenvalue(1), 3.0);
        assert_eq!(table.eigenvalue(2), 8.0);
        assert_eq!(table.axis, q.cos_nodes());
    }
}
