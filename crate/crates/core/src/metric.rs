//! Cohomogeneity-one metrics g = φ(x)²dx² + ψ(x)²g_{S^{n−1}} on Sⁿ.
//!
//! φ is even about both poles and is stored directly. ψ is odd, so the
//! solver works with the even warp p = ψ / sin x; closure at the poles is
//! p(±1) = φ(±1).

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sphere::{Quadrature, ReducedSymTensor};

/// Interior values of ψ below this are treated as a collapsed orbit.
pub const DEGENERACY_TOL: f64 = 1e-10;
/// Allowed mismatch in the pole closure ψ_x/φ → ±1.
pub const CLOSURE_TOL: f64 = 1e-8;
/// Rounding allowance on the upper pinching bound K ≤ 1.
pub const PINCH_TOL: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct ReducedMetric {
    grid: Arc<Quadrature>,
    phi: Vec<f64>,
    warp: Vec<f64>,
}

impl ReducedMetric {
    /// The round metric σ.
    pub fn round(grid: &Arc<Quadrature>) -> Self {
        Self::round_scaled(grid, 1.0)
    }

    /// c²σ
    pub fn round_scaled(grid: &Arc<Quadrature>, c: f64) -> Self {
        Self { grid: grid.clone(), phi: vec![c; grid.len()], warp: vec![c; grid.len()] }
    }

    /// Build from nodal φ and ψ, checking every invariant.
    pub fn from_profiles(grid: &Arc<Quadrature>, phi: Vec<f64>, psi: Vec<f64>) -> Result<Self> {
        if phi.len() != grid.len() || psi.len() != grid.len() {
            return Err(Error::Shape(format!(
                "profiles have {}/{} samples, grid has {}",
                phi.len(),
                psi.len(),
                grid.len()
            )));
        }
        let warp = psi.iter().zip(grid.sin_nodes()).map(|(p, s)| p / s).collect();
        let g = Self { grid: grid.clone(), phi, warp };
        g.validate()?;
        Ok(g)
    }

    /// Build from φ and the warp p = ψ/sin x, checking every invariant.
    pub fn from_warp(grid: &Arc<Quadrature>, phi: Vec<f64>, warp: Vec<f64>) -> Result<Self> {
        let g = Self::from_warp_unchecked(grid, phi, warp);
        g.validate()?;
        Ok(g)
    }

    pub(crate) fn from_warp_unchecked(grid: &Arc<Quadrature>, phi: Vec<f64>, warp: Vec<f64>) -> Self {
        Self { grid: grid.clone(), phi, warp }
    }

    /// Metric whose σ-frame components are `h`: φ² = h_rad, p² = h_orb.
    pub fn from_tensor(grid: &Arc<Quadrature>, h: &ReducedSymTensor) -> Result<Self> {
        if h.rad.iter().chain(&h.orb).any(|v| *v <= 0.0) {
            return Err(Error::DegenerateMetric("tensor is not positive definite".into()));
        }
        let phi = h.rad.iter().map(|v| v.sqrt()).collect();
        let warp = h.orb.iter().map(|v| v.sqrt()).collect();
        Self::from_warp(grid, phi, warp)
    }

    pub fn validate(&self) -> Result<()> {
        let q = &self.grid;
        if self.phi.len() != q.len() || self.warp.len() != q.len() {
            return Err(Error::Shape("profile length does not match grid".into()));
        }
        if let Some(i) = self.phi.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::DegenerateMetric(format!("phi = {} at x = {}", self.phi[i], q.nodes()[i])));
        }
        for (i, (p, s)) in self.warp.iter().zip(q.sin_nodes()).enumerate() {
            if !(p.is_finite() && p * s > DEGENERACY_TOL) {
                return Err(Error::DegenerateMetric(format!(
                    "psi = {} at interior node x = {}",
                    p * s,
                    q.nodes()[i]
                )));
            }
        }
        let (p0, pn) = q.pole_values(&self.warp);
        let (f0, fn_) = q.pole_values(&self.phi);
        let (c0, cn) = (p0 / f0, pn / fn_);
        if (c0 - 1.0).abs() > CLOSURE_TOL || (cn - 1.0).abs() > CLOSURE_TOL {
            return Err(Error::DegenerateMetric(format!(
                "pole closure violated: psi_x/phi -> {c0} at 0 and {} at pi",
                -cn
            )));
        }
        Ok(())
    }

    pub fn grid(&self) -> &Arc<Quadrature> {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    pub fn phi(&self) -> &[f64] {
        &self.phi
    }

    /// p = ψ / sin x
    pub fn warp(&self) -> &[f64] {
        &self.warp
    }

    pub fn psi(&self) -> Vec<f64> {
        self.warp.iter().zip(self.grid.sin_nodes()).map(|(p, s)| p * s).collect()
    }

    /// σ-frame components (φ², ψ²/sin²x).
    pub fn to_tensor(&self) -> ReducedSymTensor {
        ReducedSymTensor {
            rad: self.phi.iter().map(|v| v * v).collect(),
            orb: self.warp.iter().map(|v| v * v).collect(),
        }
    }

    /// c·g
    pub fn scaled(&self, c: f64) -> Self {
        let r = c.sqrt();
        Self {
            grid: self.grid.clone(),
            phi: self.phi.iter().map(|v| v * r).collect(),
            warp: self.warp.iter().map(|v| v * r).collect(),
        }
    }

    /// Pullback by the reflection x ↦ π − x.
    pub fn reflected(&self) -> Self {
        let mut phi = self.phi.clone();
        let mut warp = self.warp.clone();
        phi.reverse();
        warp.reverse();
        Self { grid: self.grid.clone(), phi, warp }
    }

    pub fn same_grid(&self, other: &ReducedMetric) -> bool {
        self.grid.same_grid(&other.grid)
    }

    /// Pointwise σ-norm sup of g − other.
    pub fn sup_distance(&self, other: &ReducedMetric) -> f64 {
        crate::sphere::sup_norm(&self.to_tensor().sub(&other.to_tensor()), self.dim())
    }

    pub fn to_file(&self) -> MetricFile {
        MetricFile { n: self.dim(), resolution: self.grid.len(), phi: self.phi.clone(), psi: self.psi() }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_file()).expect("metric serializes");
        std::fs::write(path, text)
            .map_err(|e| Error::Io { path: path.display().to_string(), message: e.to_string() })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io { path: path.display().to_string(), message: e.to_string() })?;
        let file: MetricFile = serde_json::from_str(&text)
            .map_err(|e| Error::Io { path: path.display().to_string(), message: e.to_string() })?;
        file.into_metric()
    }
}

/// On-disk metric: `{ "n": int, "N": int, "phi": [..], "psi": [..] }` on the standard grid.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct MetricFile {
    pub n: usize,
    #[serde(rename = "N")]
    pub resolution: usize,
    pub phi: Vec<f64>,
    pub psi: Vec<f64>,
}

impl MetricFile {
    pub fn into_metric(self) -> Result<ReducedMetric> {
        let grid = Quadrature::new(self.n, self.resolution)?;
        ReducedMetric::from_profiles(&grid, self.phi, self.psi)
    }
}

#[derive(Debug, Clone)]
pub struct CurvatureReport {
    /// sectional curvature of planes containing the radial direction
    pub k_rad: Vec<f64>,
    /// sectional curvature of planes tangent to the orbit
    pub k_orb: Vec<f64>,
    /// Ricci tensor in σ-frame components
    pub ricci: ReducedSymTensor,
    /// Ricci eigenvalues in a g-orthonormal frame
    pub ricci_rad: Vec<f64>,
    pub ricci_orb: Vec<f64>,
    pub scalar: Vec<f64>,
    pub scalar_avg: f64,
    /// extremes of K_rad and K_orb over [0, π]
    range: (f64, f64),
}

/// Scan points per grid node used for curvature extremes.
const DENSE_FACTOR: usize = 4;

impl CurvatureReport {
    pub fn min_sec(&self) -> f64 {
        self.range.0
    }

    pub fn max_sec(&self) -> f64 {
        self.range.1
    }

    /// sup |K − 1| over both curvature families.
    pub fn round_defect(&self) -> f64 {
        (self.range.1 - 1.0).max(1.0 - self.range.0)
    }
}

/// Extremes of a profile over [0, π]: a uniform scan in x, refined by golden
/// section on the interpolant. Rounding-level modes are removed first so that
/// the pole values stay quiet.
fn profile_range(q: &Quadrature, f: &[f64]) -> (f64, f64) {
    let clean = q.denoise(f, ROUNDING_FLOOR);
    let eval = |x: f64| q.interp(&clean, x.cos());
    let m = DENSE_FACTOR * q.len();
    let h = std::f64::consts::PI / m as f64;
    let xs: Vec<f64> = (0..=m).map(|k| k as f64 * h).collect();
    let vals: Vec<f64> = xs.iter().map(|x| eval(*x)).collect();
    let mut out = [0.0; 2];
    for (slot, sign) in [(0, 1.0), (1, -1.0)] {
        let k = (0..=m).min_by(|a, b| (sign * vals[*a]).total_cmp(&(sign * vals[*b]))).unwrap();
        let (mut a, mut b) = ((xs[k] - h).max(0.0), (xs[k] + h).min(std::f64::consts::PI));
        let r = 0.5 * (5.0_f64.sqrt() - 1.0);
        let mut best = vals[k];
        for _ in 0..40 {
            let (c, d) = (b - r * (b - a), a + r * (b - a));
            let (fc, fd) = (eval(c), eval(d));
            if sign * fc < sign * fd {
                b = d;
            } else {
                a = c;
            }
            for v in [fc, fd] {
                if sign * v < sign * best {
                    best = v;
                }
            }
        }
        out[slot] = best;
    }
    (out[0], out[1])
}

/// d/dt of the arclength slope, as r + t r_t − (s p_t/φ)_t with r = p/φ so that
/// only profiles constant on round metrics are differentiated.
pub(crate) fn slope_derivative(q: &Quadrature, phi: &[f64], warp: &[f64], pt: &[f64]) -> Vec<f64> {
    let t = q.cos_nodes();
    let s = q.sin2_nodes();
    let r: Vec<f64> = warp.iter().zip(phi).map(|(p, f)| p / f).collect();
    let bend: Vec<f64> = (0..q.len()).map(|i| s[i] * pt[i] / phi[i]).collect();
    let (rt, bt) = (q.d_dt(&r), q.d_dt(&bend));
    (0..q.len()).map(|i| r[i] + t[i] * rt[i] - bt[i]).collect()
}

/// K_orb = (1 − ψ_s²)/ψ², expanded so that p_t is never divided by sin²x:
/// (1 − S²)/s = 1 + t²(1 − p²/F²)/s + 2t p p_t/F² − s p_t²/F².
pub(crate) fn orbit_curvature(q: &Quadrature, phi: &[f64], warp: &[f64], pt: &[f64]) -> Vec<f64> {
    let t = q.cos_nodes();
    let s = q.sin2_nodes();
    (0..q.len())
        .map(|i| {
            let (f, p, d) = (phi[i], warp[i], pt[i]);
            let gap = (f - p) * (f + p) / (f * f);
            let num = 1.0 + t[i] * t[i] * gap / s[i] + 2.0 * t[i] * p * d / (f * f) - s[i] * d * d / (f * f);
            num / (p * p)
        })
        .collect()
}

/// Sectional curvatures (K_rad, K_orb) from raw profiles.
pub(crate) fn sectional_curvatures(q: &Quadrature, phi: &[f64], warp: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let pt = q.d_dt(warp);
    let dslope = slope_derivative(q, phi, warp, &pt);
    let k_rad = (0..q.len()).map(|i| dslope[i] / (phi[i] * warp[i])).collect();
    let k_orb = orbit_curvature(q, phi, warp, &pt);
    (k_rad, k_orb)
}

/// Volume density ratio dμ[g]/dμ[σ] = φ p^{n−1}.
pub(crate) fn density(n: usize, phi: &[f64], warp: &[f64]) -> Vec<f64> {
    phi.iter().zip(warp).map(|(f, p)| f * p.powi(n as i32 - 1)).collect()
}

pub fn curvature(g: &ReducedMetric) -> Result<CurvatureReport> {
    g.validate()?;
    Ok(curvature_unchecked(g))
}

pub(crate) fn curvature_unchecked(g: &ReducedMetric) -> CurvatureReport {
    let q = g.grid();
    let n = g.dim();
    let nf = n as f64;
    let (k_rad, k_orb) = sectional_curvatures(q, &g.phi, &g.warp);
    let ricci_rad: Vec<f64> = k_rad.iter().map(|k| (nf - 1.0) * k).collect();
    let ricci_orb: Vec<f64> = k_rad.iter().zip(&k_orb).map(|(r, o)| r + (nf - 2.0) * o).collect();
    let scalar: Vec<f64> = ricci_rad.iter().zip(&ricci_orb).map(|(r, o)| r + (nf - 1.0) * o).collect();
    let dens = density(n, &g.phi, &g.warp);
    let weighted: Vec<f64> = scalar.iter().zip(&dens).map(|(r, d)| r * d).collect();
    let scalar_avg = q.integrate(&weighted) / q.integrate(&dens);
    let ricci = ReducedSymTensor {
        rad: ricci_rad.iter().zip(&g.phi).map(|(r, f)| r * f * f).collect(),
        orb: ricci_orb.iter().zip(&g.warp).map(|(r, p)| r * p * p).collect(),
    };
    let (ra, oa) = (profile_range(q, &k_rad), profile_range(q, &k_orb));
    let range = (ra.0.min(oa.0), ra.1.max(oa.1));
    CurvatureReport { k_rad, k_orb, ricci, ricci_rad, ricci_orb, scalar, scalar_avg, range }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PinchingCertificate {
    pub min_sec: f64,
    pub max_sec: f64,
    pub pinched: bool,
}

/// Every sectional curvature of an axisymmetric metric is a convex
/// combination of K_rad and K_orb at the same point, so the grid extremes
/// of those two profiles bound all 2-planes.
pub fn pinching_certificate(g: &ReducedMetric) -> Result<PinchingCertificate> {
    let report = curvature(g)?;
    let (min_sec, max_sec) = (report.min_sec(), report.max_sec());
    Ok(PinchingCertificate { min_sec, max_sec, pinched: min_sec > 0.25 && max_sec <= 1.0 + PINCH_TOL })
}

/// Pinching of g after rescaling so that its largest sectional curvature is 1.
/// This is the scale-free notion used to admit metrics before volume normalization.
pub fn pinching_up_to_scale(g: &ReducedMetric) -> Result<PinchingCertificate> {
    let report = curvature(g)?;
    let max = report.max_sec();
    if max <= 0.0 {
        return Ok(PinchingCertificate { min_sec: report.min_sec(), max_sec: max, pinched: false });
    }
    pinching_certificate(&g.scaled(max))
}

pub fn volume(g: &ReducedMetric) -> f64 {
    g.grid.integrate(&density(g.dim(), &g.phi, &g.warp))
}

/// Rescale g to volume ω_n. The factor is (ω_n/Vol)^{2/n} because Vol(c·g) = c^{n/2}Vol(g).
pub fn normalize(g: &ReducedMetric) -> Result<ReducedMetric> {
    let vol = volume(g);
    if !(vol > 0.0 && vol.is_finite()) {
        return Err(Error::DegenerateMetric(format!("volume {vol} cannot be normalized")));
    }
    let c = (g.grid.omega_n() / vol).powf(2.0 / g.dim() as f64);
    Ok(g.scaled(c))
}

/// Modal amplitude below which a curvature profile is treated as rounding noise
/// before it is differentiated.
const ROUNDING_FLOOR: f64 = 1e-12;

/// Highest curvature-derivative order supported by [`neighborhood_certificate`].
pub const MAX_NEIGHBORHOOD_ORDER: usize = 2;

/// Sup over the grid of |∂ₛʲ(K − 1)| for j = 0..=order, both curvature families.
pub fn curvature_deviation_profile(g: &ReducedMetric, order: usize) -> Result<Vec<f64>> {
    if order > MAX_NEIGHBORHOOD_ORDER {
        return Err(Error::Capability {
            what: format!("curvature derivative order {order}"),
            max: MAX_NEIGHBORHOOD_ORDER,
        });
    }
    let report = curvature(g)?;
    let q = g.grid();
    let sin = q.sin_nodes();
    let mut out = Vec::with_capacity(order + 1);
    let mut fields = [
        report.k_rad.iter().map(|k| k - 1.0).collect::<Vec<_>>(),
        report.k_orb.iter().map(|k| k - 1.0).collect::<Vec<_>>(),
    ];
    for j in 0..=order {
        if j > 0 {
            for f in fields.iter_mut() {
                // ∂ₛ = φ⁻¹∂ₓ = −(sin x/φ)∂ₜ; the result is odd, so further
                // derivatives go through the product rule on sin x.
                let ft = q.d_dt(&q.denoise(f, ROUNDING_FLOOR));
                *f = (0..q.len()).map(|i| -sin[i] * ft[i] / g.phi[i]).collect();
            }
        }
        out.push(fields.iter().flatten().map(|v| v.abs()).fold(0.0, f64::max));
    }
    Ok(out)
}

/// Membership of g in the curvature neighborhood of the round orbit, optionally
/// with a bound on the distance of an accompanying diffeomorphism from the identity.
pub fn neighborhood_certificate(
    g: &ReducedMetric,
    background: &ReducedMetric,
    thresholds: &[f64],
    diffeo_bound: f64,
    diffeo: Option<&crate::diffeo::DiffeoProfile>,
) -> Result<bool> {
    if thresholds.is_empty() {
        return Err(Error::Precondition("at least one threshold is required".into()));
    }
    if !g.same_grid(background) {
        return Err(Error::Shape("metric and background live on different grids".into()));
    }
    let devs = curvature_deviation_profile(g, thresholds.len() - 1)?;
    if devs.iter().zip(thresholds).any(|(d, b)| d > b) {
        return Ok(false);
    }
    if let Some(d) = diffeo {
        if d.distance_from_identity() > diffeo_bound {
            return Ok(false);
        }
    }
    Ok(true)
}
