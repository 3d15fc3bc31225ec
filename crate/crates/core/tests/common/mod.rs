#![allow(dead_code)]

use ricci_lab::metric::ReducedMetric;

/// Least-squares slope of log|v| against t.
pub fn fit_rate(ts: &[f64], vs: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = ts.iter().zip(vs).filter(|(_, v)| v.abs() > 0.0).map(|(t, v)| (*t, v.abs().ln())).collect();
    let m = pts.len() as f64;
    let (st, sl) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
    let (mt, ml) = (st / m, sl / m);
    let num: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - ml)).sum();
    let den: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    num / den
}

pub fn sup_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, b| a.max(b.abs()))
}

/// Central difference of a closed-form function.
pub fn fd(f: &dyn Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// W^x = g^{ij}(Γ − Γ̂)^x_ij for g = φ²dx² + ψ²g_S against σ, by finite
/// differences of the profiles.
pub fn deturck_oracle(n: usize, phi: &dyn Fn(f64) -> f64, psi: &dyn Fn(f64) -> f64, x: f64) -> f64 {
    let h = 1e-5;
    let (f, p) = (phi(x), psi(x));
    let (fx, px) = (fd(phi, x, h), fd(psi, x, h));
    let gamma_xx = fx / f;
    let gamma_orb = -p * px / (f * f);
    let gamma_orb_round = -x.sin() * x.cos();
    gamma_xx / (f * f) + (n as f64 - 1.0) * (gamma_orb - gamma_orb_round) / (p * p)
}

/// θ(T) for θ' = −sin θ·ω(cos θ), classical RK4.
pub fn rk4_axis_flow(omega: &dyn Fn(f64) -> f64, x0: f64, t_end: f64, steps: usize) -> f64 {
    let rate = |th: f64| -th.sin() * omega(th.cos());
    let h = t_end / steps as f64;
    let mut th = x0;
    for _ in 0..steps {
        let k1 = rate(th);
        let k2 = rate(th + 0.5 * h * k1);
        let k3 = rate(th + 0.5 * h * k2);
        let k4 = rate(th + h * k3);
        th += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    th
}

/// Profile values of a metric at arbitrary angles.
pub fn profiles_at(g: &ReducedMetric, x: f64) -> (f64, f64) {
    let q = g.grid();
    let t = x.cos();
    (q.interp(g.phi(), t), q.interp(g.warp(), t) * x.sin())
}

/// Closed-form axisymmetric profiles (φ, ψ) as functions of x.
pub struct Profiles<'a> {
    pub n: usize,
    pub phi: &'a dyn Fn(f64) -> f64,
    pub psi: &'a dyn Fn(f64) -> f64,
}

impl Profiles<'_> {
    /// (K_rad, K_orb) from K_rad = −(ψ_x/φ)_x/(φψ), K_orb = (1 − (ψ_x/φ)²)/ψ².
    pub fn sectional(&self, x: f64) -> (f64, f64) {
        let h = 1e-4;
        let slope = |y: f64| fd(self.psi, y, 1e-5) / (self.phi)(y);
        let (f, p) = ((self.phi)(x), (self.psi)(x));
        let k_rad = -fd(&slope, x, h) / (f * p);
        let k_orb = (1.0 - slope(x).powi(2)) / (p * p);
        (k_rad, k_orb)
    }

    pub fn scalar(&self, x: f64) -> f64 {
        let nf = self.n as f64;
        let (kr, ko) = self.sectional(x);
        2.0 * (nf - 1.0) * kr + (nf - 1.0) * (nf - 2.0) * ko
    }

    /// Average scalar curvature against φψ^{n−1}dx, composite Simpson away from the poles.
    pub fn scalar_avg(&self) -> f64 {
        let panels = 4000;
        let (a, b) = (1e-3, std::f64::consts::PI - 1e-3);
        let h = (b - a) / panels as f64;
        let (mut num, mut den) = (0.0, 0.0);
        for k in 0..=panels {
            let x = a + k as f64 * h;
            let w = if k == 0 || k == panels { 1.0 } else if k % 2 == 1 { 4.0 } else { 2.0 };
            let dens = (self.phi)(x) * (self.psi)(x).powi(self.n as i32 - 1);
            num += w * dens * self.scalar(x);
            den += w * dens;
        }
        num / den
    }

    /// NRF rates (∂ₜφ, ∂ₜψ) at x.
    pub fn nrf_rates(&self, x: f64, r_avg: f64) -> (f64, f64) {
        let nf = self.n as f64;
        let (kr, ko) = self.sectional(x);
        let dphi = (-(nf - 1.0) * kr + r_avg / nf) * (self.phi)(x);
        let dpsi = (-(kr + (nf - 2.0) * ko) + r_avg / nf) * (self.psi)(x);
        (dphi, dpsi)
    }
}
