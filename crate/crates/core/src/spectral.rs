//! The linearized normalized flow at a round metric, its spectrum, and the
//! splitting of a nearby metric into scale, conformal-gauge and remainder parts.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::metric::ReducedMetric;
use crate::sphere::{l2_inner, l2_norm, sup_norm, Quadrature, ReducedSymTensor};

/// Tolerance for treating a background as the round metric.
pub const ROUND_TOL: f64 = 1e-8;

/// Relative tolerance on the volume normalization assumed by [`redundancy_residual`].
pub const VOLUME_TOL: f64 = 1e-8;

fn require_round(bg: &ReducedMetric) -> Result<()> {
    let q = bg.grid();
    let dev = bg.sup_distance(&ReducedMetric::round(q));
    if dev > ROUND_TOL {
        return Err(Error::Domain(format!(
            "linear operator needs the round background in standard coordinates (deviation {dev:e})"
        )));
    }
    Ok(())
}

fn check_len(q: &Quadrature, h: &ReducedSymTensor) -> Result<()> {
    if h.rad.len() != q.len() || h.orb.len() != q.len() {
        return Err(Error::Shape("tensor does not match the background grid".into()));
    }
    Ok(())
}

/// Δ₀f = f'' + (n−1) cot x f' written in t = cos x.
fn scalar_laplacian(q: &Quadrature, f: &[f64]) -> Vec<f64> {
    let n = q.dim() as f64;
    let ft = q.d_dt(f);
    let ftt = q.d_dt(&ft);
    let t = q.cos_nodes();
    let s = q.sin2_nodes();
    (0..q.len()).map(|i| s[i] * ftt[i] - n * t[i] * ft[i]).collect()
}

/// Rough Laplacian of σ on an axisymmetric symmetric 2-tensor.
fn rough_laplacian(q: &Quadrature, h: &ReducedSymTensor) -> ReducedSymTensor {
    let n = q.dim() as f64;
    let t = q.cos_nodes();
    let s = q.sin2_nodes();
    let la = scalar_laplacian(q, &h.rad);
    let lb = scalar_laplacian(q, &h.orb);
    let mut out = ReducedSymTensor::zeros(q.len());
    for i in 0..q.len() {
        let c2 = t[i] * t[i] / s[i];
        let d = h.rad[i] - h.orb[i];
        out.rad[i] = la[i] - 2.0 * (n - 1.0) * c2 * d;
        out.orb[i] = lb[i] + 2.0 * c2 * d;
    }
    out
}

fn average(q: &Quadrature, f: &[f64]) -> f64 {
    q.integrate(f) / q.omega_n()
}

/// L₀H = Δ₀H + 2(n−1)(H − H̄)
fn trace_operator(q: &Quadrature, big_h: &[f64]) -> Vec<f64> {
    let n = q.dim() as f64;
    let avg = average(q, big_h);
    let lap = scalar_laplacian(q, big_h);
    (0..q.len()).map(|i| lap[i] + 2.0 * (n - 1.0) * (big_h[i] - avg)).collect()
}

/// L h = Δ₂h − 2h° + 2((n−1)/n)(H − H̄)ĝ at ĝ = σ.
pub fn apply_l(h: &ReducedSymTensor, bg: &ReducedMetric) -> Result<ReducedSymTensor> {
    let (tr, tf) = split_l0_l2(h, bg)?;
    Ok(tr.add(&tf))
}

/// Returns ((L₀H/n)ĝ, L₂h°).
pub fn split_l0_l2(h: &ReducedSymTensor, bg: &ReducedMetric) -> Result<(ReducedSymTensor, ReducedSymTensor)> {
    require_round(bg)?;
    let q = bg.grid();
    check_len(q, h)?;
    let n = q.dim();
    let big_h = h.trace(n);
    let l0 = trace_operator(q, &big_h);
    let trace = ReducedSymTensor::conformal(&l0.iter().map(|v| v / n as f64).collect::<Vec<_>>());
    let hc = h.tracefree_part(n);
    let tracefree = rough_laplacian(q, &hc).axpy(-2.0, &hc);
    Ok((trace, tracefree))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ModeClass {
    /// trace mode built from axis harmonic j
    Trace(usize),
    /// tracefree mode of index k
    Tracefree(usize),
}

impl std::fmt::Display for ModeClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ModeClass::Trace(j) => write!(f, "trace/{j}"),
            ModeClass::Tracefree(k) => write!(f, "tracefree/{k}"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct OperatorSpectrum {
    /// largest first
    pub eigenvalues: Vec<f64>,
    pub eigenmodes: Vec<ReducedSymTensor>,
    /// ‖Lv − λv‖₂ / ‖v‖₂
    pub residuals: Vec<f64>,
    pub classes: Vec<ModeClass>,
}

impl OperatorSpectrum {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,eigenvalue,residual,mode_class\n");
        for (i, ((l, r), c)) in self.eigenvalues.iter().zip(&self.residuals).zip(&self.classes).enumerate() {
            out.push_str(&format!("{i},{l:.12e},{r:.3e},{c}\n"));
        }
        out
    }
}

/// σ-orthonormal trace mode P̂_j σ/√n.
pub fn trace_mode(q: &Quadrature, j: usize) -> ReducedSymTensor {
    let nf = q.dim() as f64;
    ReducedSymTensor::conformal(&q.scalar_mode(j).iter().map(|v| v / nf.sqrt()).collect::<Vec<_>>())
}

/// σ-orthonormal tracefree mode of index k.
pub fn tracefree_mode(q: &Quadrature, k: usize) -> ReducedSymTensor {
    let nf = q.dim() as f64;
    let kappa = (nf / (nf - 1.0)).sqrt();
    let u: Vec<f64> = q.tracefree_mode(k).iter().map(|v| kappa * v).collect();
    ReducedSymTensor::tracefree_from_profile(q, &u)
}

/// The `k` largest eigenvalues of L at the round background.
///
/// L is applied in physical space to the lowest quarter of the trace and
/// tracefree modes; the quadrature Galerkin matrix is symmetrized before
/// the eigen-solve.
pub fn spectrum(bg: &ReducedMetric, k: usize) -> Result<OperatorSpectrum> {
    require_round(bg)?;
    if k < 3 {
        return Err(Error::Precondition(format!("at least 3 eigenvalues requested, got {k}")));
    }
    let q = bg.grid();
    let m = (q.len() / 4).max(4);
    let mut basis: Vec<(ModeClass, ReducedSymTensor)> = Vec::with_capacity(2 * m);
    for j in 0..m {
        basis.push((ModeClass::Trace(j), trace_mode(q, j)));
    }
    for kk in 0..m.min(q.tracefree_count()) {
        basis.push((ModeClass::Tracefree(kk), tracefree_mode(q, kk)));
    }
    if k > basis.len() {
        return Err(Error::Capability { what: format!("{k} eigenvalues"), max: basis.len() });
    }
    let images: Vec<ReducedSymTensor> =
        basis.iter().map(|(_, e)| apply_l(e, bg)).collect::<Result<_>>()?;
    let dim = basis.len();
    let mut gm = DMatrix::<f64>::zeros(dim, dim);
    for a in 0..dim {
        for b in 0..dim {
            gm[(a, b)] = l2_inner(&basis[a].1, &images[b], q)?;
        }
    }
    let sym = (&gm + gm.transpose()) * 0.5;
    let eig = SymmetricEigen::try_new(sym, 1e-14, 10_000)
        .ok_or_else(|| Error::Numerical("symmetric eigen-solve did not converge".into()))?;
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let mut out = OperatorSpectrum { eigenvalues: vec![], eigenmodes: vec![], residuals: vec![], classes: vec![] };
    for &idx in order.iter().take(k) {
        let lambda = eig.eigenvalues[idx];
        let coeffs = eig.eigenvectors.column(idx);
        let mut v = ReducedSymTensor::zeros(q.len());
        let mut lv = ReducedSymTensor::zeros(q.len());
        let mut best = (0.0, basis[0].0);
        for (a, (class, e)) in basis.iter().enumerate() {
            v = v.axpy(coeffs[a], e);
            lv = lv.axpy(coeffs[a], &images[a]);
            if coeffs[a].abs() > best.0 {
                best = (coeffs[a].abs(), *class);
            }
        }
        let norm = l2_norm(&v, q)?;
        let resid = l2_norm(&lv.axpy(-lambda, &v), q)? / norm;
        if !resid.is_finite() {
            return Err(Error::Numerical(format!("non-finite residual for eigenvalue {lambda}")));
        }
        out.eigenvalues.push(lambda);
        out.eigenmodes.push(v);
        out.residuals.push(resid);
        out.classes.push(best.1);
    }
    Ok(out)
}

/// Eigenvalue of L on trace mode j, from the scalar spectrum.
pub fn trace_eigenvalue(n: usize, j: usize) -> f64 {
    if j == 0 {
        0.0
    } else {
        -((j * (n + j - 1)) as f64) + 2.0 * (n as f64 - 1.0)
    }
}

/// Eigenvalue of L on tracefree mode k.
pub fn tracefree_eigenvalue(n: usize, k: usize) -> f64 {
    -((k * (k + n + 3)) as f64) - 4.0
}

/// g − ĝ = (a − 1)ĝ + b·x^{n+1}ĝ + ǧ with ǧ σ-orthogonal to ĝ and x^{n+1}ĝ.
#[derive(Debug, Clone)]
pub struct SpectralDecomp {
    pub a: f64,
    /// one entry per ambient coordinate; only the last (the axis) is nonzero
    pub b: Vec<f64>,
    pub check: ReducedSymTensor,
    pub background: ReducedMetric,
}

impl SpectralDecomp {
    pub fn b_axis(&self) -> f64 {
        *self.b.last().unwrap()
    }

    pub fn check_l2(&self) -> Result<f64> {
        l2_norm(&self.check, self.background.grid())
    }

    pub fn check_sup(&self) -> f64 {
        sup_norm(&self.check, self.background.dim())
    }
}

pub fn decompose(g: &ReducedMetric, bg: &ReducedMetric) -> Result<SpectralDecomp> {
    if !g.same_grid(bg) {
        return Err(Error::Shape("metric and background live on different grids".into()));
    }
    let q = bg.grid();
    let n = q.dim();
    let e0 = bg.to_tensor();
    let e1 = e0.times(q.cos_nodes());
    let h = g.to_tensor().sub(&e0);
    let g00 = l2_inner(&e0, &e0, q)?;
    let g01 = l2_inner(&e0, &e1, q)?;
    let g11 = l2_inner(&e1, &e1, q)?;
    let r0 = l2_inner(&e0, &h, q)?;
    let r1 = l2_inner(&e1, &h, q)?;
    let det = g00 * g11 - g01 * g01;
    let (c0, c1) = if g01.abs() <= 1e-14 * (g00 * g11).sqrt() {
        (r0 / g00, r1 / g11)
    } else {
        ((r0 * g11 - r1 * g01) / det, (g00 * r1 - g01 * r0) / det)
    };
    let check = h.axpy(-c0, &e0).axpy(-c1, &e1);
    let mut b = vec![0.0; n + 1];
    b[n] = c1;
    Ok(SpectralDecomp { a: 1.0 + c0, b, check, background: bg.clone() })
}

/// ĝ + (a − 1)ĝ + b·x^{n+1}ĝ + ǧ as a tensor.
pub fn reconstruct_tensor(d: &SpectralDecomp) -> ReducedSymTensor {
    let q = d.background.grid();
    let e0 = d.background.to_tensor();
    e0.scaled(d.a).axpy(d.b_axis(), &e0.times(q.cos_nodes())).add(&d.check)
}

pub fn reconstruct(d: &SpectralDecomp) -> Result<ReducedMetric> {
    ReducedMetric::from_tensor(d.background.grid(), &reconstruct_tensor(d))
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Redundancy {
    pub lhs: f64,
    pub rhs: f64,
}

/// |a − 1| against Σb² + ‖ǧ‖²_∞ for a volume-normalized metric.
pub fn redundancy_residual(d: &SpectralDecomp) -> Result<Redundancy> {
    let g = reconstruct(d)?;
    let q = g.grid();
    let vol = crate::metric::volume(&g);
    if (vol - q.omega_n()).abs() > VOLUME_TOL * q.omega_n() {
        return Err(Error::Precondition(format!(
            "metric is not volume-normalized: volume {vol}, expected {}",
            q.omega_n()
        )));
    }
    let bsq: f64 = d.b.iter().map(|b| b * b).sum();
    let cs = d.check_sup();
    Ok(Redundancy { lhs: (d.a - 1.0).abs(), rhs: bsq + cs * cs })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rough_laplacian_matches_mode_table() {
        for n in [3, 4, 5] {
            let q = Quadrature::new(n, 64).unwrap();
            for k in 0..5 {
                let e = tracefree_mode(&q, k);
                let img = rough_laplacian(&q, &e);
                let expect = -crate::sphere::TensorModes::tracefree_rough_eigenvalue(n, k);
                let r = l2_norm(&img.axpy(-expect, &e), &q).unwrap();
                assert!(r < 1e-9, "n={n} k={k}: {r}");
            }
        }
    }

    #[test]
    fn non_round_background_is_rejected() {
        let q = Quadrature::new(3, 32).unwrap();
        let g = ReducedMetric::round(&q).scaled(1.1);
        let h = ReducedSymTensor::round(&q);
        assert!(matches!(apply_l(&h, &g), Err(Error::Domain(_))));
    }
}
