//! Normalized Ricci flow and Ricci–DeTurck flow in the reduced class.
//!
//! State variables are φ = F(t) and the warp p = ψ/sin x on the collocation
//! grid. The DeTurck field is W = sin x · ω(t) ∂ₓ. NRF is integrated as the
//! pullback of a DeTurck flow against σ whose field has its conformal-Killing
//! component removed, by the diffeomorphism that flow generates.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::diffeo::{pullback_unchecked, DiffeoProfile};
use crate::error::{Error, Result};
use crate::metric::{
    curvature_unchecked, density, neighborhood_certificate, orbit_curvature, slope_derivative, volume, ReducedMetric,
};
use crate::spectral::decompose;
use crate::sphere::{sobolev_norm, sup_norm, max_sobolev_order, Quadrature};
use crate::stepper::{Integrator, OdeSystem, StepControl, StepperConfig};

/// Smallest step the integrator may take before reporting stiffness.
pub const DT_MIN: f64 = 1e-12;

const CLOSURE_RELAX: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// 3rd-order L-stable ESDIRK with embedded 2nd-order error estimate
    #[default]
    Esdirk3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowParams {
    pub dt_init: f64,
    pub dt_max: f64,
    pub adapt_tol: f64,
    pub t_end: f64,
    /// spacing of stored metrics; t_end is always stored
    pub sample_every: f64,
    pub scheme: Scheme,
    pub resolution: usize,
    /// constant step instead of error control
    pub fixed_dt: Option<f64>,
}

impl Default for FlowParams {
    fn default() -> Self {
        Self {
            dt_init: 1e-3,
            dt_max: 0.25,
            adapt_tol: 1e-8,
            t_end: 1.0,
            sample_every: 0.5,
            scheme: Scheme::Esdirk3,
            resolution: crate::sphere::DEFAULT_RESOLUTION,
            fixed_dt: None,
        }
    }
}

impl FlowParams {
    pub fn with_t_end(&self, t_end: f64) -> Self {
        Self { t_end, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.dt_init > 0.0
            && self.dt_max >= self.dt_init
            && self.adapt_tol > 0.0
            && self.t_end >= 0.0
            && self.t_end.is_finite()
            && self.sample_every > 0.0
            && self.fixed_dt.is_none_or(|d| d > 0.0);
        if !ok {
            return Err(Error::Config(format!("invalid flow parameters: {self:?}")));
        }
        Ok(())
    }

    pub fn sample_times(&self) -> Vec<f64> {
        let mut out = vec![0.0];
        let mut k = 1;
        loop {
            let t = k as f64 * self.sample_every;
            if t >= self.t_end - 1e-12 {
                break;
            }
            out.push(t);
            k += 1;
        }
        if self.t_end > 0.0 {
            out.push(self.t_end);
        }
        out
    }

    fn stepper(&self, control: StepControl) -> StepperConfig {
        StepperConfig {
            dt_init: self.dt_init,
            dt_max: self.dt_max,
            dt_min: DT_MIN,
            rtol: self.adapt_tol,
            atol: self.adapt_tol,
            newton_accept: (1e-2 * self.adapt_tol).max(1e-11),
            control,
            ..Default::default()
        }
    }
}

/// Per-step diagnostics. Decomposition entries refer to the attached background.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct StepDiagnostics {
    pub t: f64,
    pub min_sec: f64,
    pub max_sec: f64,
    pub volume: f64,
    pub sup_dev: f64,
    pub a: f64,
    pub b_axis: f64,
    pub check_l2: f64,
    pub check_sobolev: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Gauge {
    DeTurck,
    /// DeTurck with the conformal-Killing component removed
    Projected,
}

#[derive(Debug, Clone)]
pub(crate) struct RunSpec {
    pub gauge: Gauge,
    pub background: ReducedMetric,
    pub track_diffeo: bool,
    /// store φ_t* g instead of g
    pub pull_back: bool,
    pub control: Option<StepControl>,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub metrics: Vec<ReducedMetric>,
    /// one entry per accepted step, plus the initial state
    pub diagnostics: Vec<StepDiagnostics>,
    /// φ_t at each stored time, when the diffeomorphism was integrated
    pub diffeos: Option<Vec<DiffeoProfile>>,
    pub background: ReducedMetric,
    pub steps: Vec<f64>,
    pub(crate) g0: ReducedMetric,
    pub(crate) params: FlowParams,
    pub(crate) gauge: Gauge,
}

impl Trajectory {
    pub fn final_metric(&self) -> &ReducedMetric {
        self.metrics.last().expect("trajectory has at least one sample")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,min_sec,max_sec,volume,sup_dev,a,b_axis,check_L2\n");
        for d in &self.diagnostics {
            out.push_str(&format!(
                "{:.10},{:.14e},{:.14e},{:.14e},{:.6e},{:.14e},{:.6e},{:.6e}\n",
                d.t, d.min_sec, d.max_sec, d.volume, d.sup_dev, d.a, d.b_axis, d.check_l2
            ));
        }
        out
    }
}

struct Background {
    /// F̂_t / F̂
    log_slope: Vec<f64>,
    /// p̂²/F̂²
    ratio: Vec<f64>,
    /// p̂ p̂_t / F̂²
    mixed: Vec<f64>,
}

impl Background {
    fn new(bg: &ReducedMetric) -> Self {
        let q = bg.grid();
        let (f, p) = (bg.phi(), bg.warp());
        let ft = q.d_dt(f);
        let pt = q.d_dt(p);
        Self {
            log_slope: (0..q.len()).map(|i| ft[i] / f[i]).collect(),
            ratio: (0..q.len()).map(|i| p[i] * p[i] / (f[i] * f[i])).collect(),
            mixed: (0..q.len()).map(|i| p[i] * pt[i] / (f[i] * f[i])).collect(),
        }
    }
}

struct FlowSystem {
    grid: Arc<Quadrature>,
    gauge: Gauge,
    bg: Background,
    track: bool,
}

impl FlowSystem {
    /// ω for the DeTurck field of (F, p) against the background, with
    /// (Q − Q̂)/s for Q = pψ_s/F expanded to avoid dividing p_t by sin²x.
    fn omega(&self, phi: &[f64], warp: &[f64], pt: &[f64]) -> Vec<f64> {
        let q = &self.grid;
        let n = q.dim() as f64;
        let t = q.cos_nodes();
        let s = q.sin2_nodes();
        let ft = q.d_dt(phi);
        let mut w: Vec<f64> = (0..q.len())
            .map(|i| {
                let (f, p) = (phi[i], warp[i]);
                let f2 = f * f;
                // p²/F² − p̂²/F̂², computed as a difference of closure gaps
                let gap = (p - f) * (p + f) / f2 - (self.bg.ratio[i] - 1.0);
                let dq = t[i] * gap / s[i] - (p * pt[i] / f2 - self.bg.mixed[i]);
                -(ft[i] / f - self.bg.log_slope[i]) / f2 - (n - 1.0) * dq / (p * p)
            })
            .collect();
        if self.gauge == Gauge::Projected {
            let sw: Vec<f64> = w.iter().zip(s).map(|(a, b)| a * b).collect();
            let kappa = q.integrate(&sw) / q.integrate(s);
            for v in &mut w {
                *v -= kappa;
            }
        }
        w
    }
}

impl OdeSystem for FlowSystem {
    fn dim(&self) -> usize {
        self.grid.len() * if self.track { 3 } else { 2 }
    }

    fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
        let q = &self.grid;
        let m = q.len();
        let n = q.dim();
        let nf = n as f64;
        let (phi, rest) = y.split_at(m);
        let warp = &rest[..m];
        if phi.iter().chain(warp).any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::DegenerateMetric("profile left the positive cone during a stage".into()));
        }
        let t = q.cos_nodes();
        let s = q.sin2_nodes();
        let pt = q.d_dt(warp);
        let slope: Vec<f64> = (0..m).map(|i| (t[i] * warp[i] - s[i] * pt[i]) / phi[i]).collect();
        let st = slope_derivative(q, phi, warp, &pt);
        let mut rc_rad = vec![0.0; m];
        let mut rc_orb = vec![0.0; m];
        let mut rs = vec![0.0; m];
        let k_orb_all = orbit_curvature(q, phi, warp, &pt);
        for i in 0..m {
            let k_rad = st[i] / (phi[i] * warp[i]);
            let k_orb = k_orb_all[i];
            rc_rad[i] = (nf - 1.0) * k_rad;
            rc_orb[i] = k_rad + (nf - 2.0) * k_orb;
            rs[i] = rc_rad[i] + (nf - 1.0) * rc_orb[i];
        }
        let dens = density(n, phi, warp);
        let weighted: Vec<f64> = rs.iter().zip(&dens).map(|(a, b)| a * b).collect();
        let r_avg = q.integrate(&weighted) / q.integrate(&dens);

        let omega = self.omega(phi, warp, &pt);
        let f_omega: Vec<f64> = phi.iter().zip(&omega).map(|(a, b)| a * b).collect();
        let f_omega_t = q.d_dt(&f_omega);
        for i in 0..m {
            dy[i] = -rc_rad[i] * phi[i] + t[i] * f_omega[i] - s[i] * f_omega_t[i] + r_avg / nf * phi[i];
            dy[m + i] = -rc_orb[i] * warp[i] + omega[i] * phi[i] * slope[i] + r_avg / nf * warp[i];
        }
        // relax φ − p at both poles to zero
        let gap: Vec<f64> = (0..m).map(|i| dy[i] - dy[m + i] + CLOSURE_RELAX * (phi[i] - warp[i])).collect();
        let (g1, g2) = q.pole_values(&gap);
        for i in 0..m {
            dy[i] -= 0.5 * (g1 + g2) + 0.5 * (g1 - g2) * t[i];
        }
        if self.track {
            shift_rate(q, &omega, &y[2 * m..], &mut dy[2 * m..])?;
        }
        Ok(())
    }
}

/// u̇ = (sin²θ/sin²x)·ω(cos θ) for cos θ = t + (1 − t²)u, i.e. ∂ₜθ = −sin θ·ω(cos θ).
fn shift_rate(q: &Quadrature, omega: &[f64], u: &[f64], du: &mut [f64]) -> Result<()> {
    let t = q.cos_nodes();
    let s = q.sin2_nodes();
    let c: Vec<f64> = (0..u.len()).map(|i| t[i] + s[i] * u[i]).collect();
    if c.iter().any(|v| !(v.abs() < 1.0)) {
        return Err(Error::DegenerateMetric("diffeomorphism node reached a pole".into()));
    }
    let wc = q.interp_many(omega, &c);
    for i in 0..u.len() {
        du[i] = (1.0 - 2.0 * t[i] * u[i] - s[i] * u[i] * u[i]) * wc[i];
    }
    Ok(())
}

fn diagnostics(t: f64, g: &ReducedMetric, bg: &ReducedMetric) -> Result<StepDiagnostics> {
    let n = g.dim();
    let q = g.grid();
    let curv = curvature_unchecked(g);
    let dec = decompose(g, bg)?;
    let dev = g.to_tensor().sub(&bg.to_tensor());
    Ok(StepDiagnostics {
        t,
        min_sec: curv.min_sec(),
        max_sec: curv.max_sec(),
        volume: volume(g),
        sup_dev: sup_norm(&dev, n),
        a: dec.a,
        b_axis: dec.b_axis(),
        check_l2: dec.check_l2()?,
        check_sobolev: sobolev_norm(&dec.check, max_sobolev_order(n), q)?,
    })
}

fn split_state(q: &Arc<Quadrature>, y: &[f64], track: bool) -> (ReducedMetric, Option<DiffeoProfile>) {
    let m = q.len();
    let g = ReducedMetric::from_warp_unchecked(q, y[..m].to_vec(), y[m..2 * m].to_vec());
    let d = track.then(|| DiffeoProfile::from_shift_unchecked(q, y[2 * m..3 * m].to_vec()));
    (g, d)
}

fn output_metric(g: ReducedMetric, d: &Option<DiffeoProfile>, pull_back: bool) -> ReducedMetric {
    match (d, pull_back) {
        (Some(d), true) => pullback_unchecked(&g, d),
        _ => g,
    }
}

pub(crate) fn run(g0: &ReducedMetric, params: &FlowParams, spec: &RunSpec) -> Result<Trajectory> {
    params.validate()?;
    g0.validate()?;
    let q = g0.grid().clone();
    if params.resolution != q.len() {
        return Err(Error::Shape(format!(
            "flow resolution {} does not match the metric's grid ({})",
            params.resolution,
            q.len()
        )));
    }
    if !g0.same_grid(&spec.background) {
        return Err(Error::Shape("initial metric and background live on different grids".into()));
    }
    let track = spec.track_diffeo;
    let sys = FlowSystem { grid: q.clone(), gauge: spec.gauge, bg: Background::new(&spec.background), track };
    let mut y0: Vec<f64> = g0.phi().iter().chain(g0.warp()).copied().collect();
    if track {
        y0.extend(std::iter::repeat_n(0.0, q.len()));
    }
    let control = match (&spec.control, params.fixed_dt) {
        (Some(c), _) => c.clone(),
        (None, Some(dt)) => StepControl::Fixed(dt),
        (None, None) => StepControl::Adaptive,
    };
    let mut integ = Integrator::new(&sys, params.stepper(control));
    let mut diags = Vec::new();
    let sample_times = params.sample_times();
    let sol = integ.integrate(0.0, &y0, &sample_times, |t, y| {
        let (g, d) = split_state(&q, y, track);
        let g = output_metric(g, &d, spec.pull_back);
        diags.push(diagnostics(t, &g, &spec.background)?);
        Ok(())
    })?;

    let mut metrics = Vec::with_capacity(sol.samples.len());
    let mut diffeos = track.then(Vec::new);
    for y in &sol.samples {
        let (g, d) = split_state(&q, y, track);
        if let Some(d) = &d {
            d.validate()?;
        }
        let g = output_metric(g, &d, spec.pull_back);
        g.validate()?;
        metrics.push(g);
        if let (Some(list), Some(d)) = (diffeos.as_mut(), d) {
            list.push(d);
        }
    }
    Ok(Trajectory {
        times: sol.sample_times,
        metrics,
        diagnostics: diags,
        diffeos,
        background: spec.background.clone(),
        steps: sol.steps,
        g0: g0.clone(),
        params: params.clone(),
        gauge: spec.gauge,
    })
}

/// Normalized Ricci flow ∂ₜg = −2Rc + (2/n)R̄g.
pub fn run_nrf(g0: &ReducedMetric, params: &FlowParams) -> Result<Trajectory> {
    let spec = RunSpec {
        gauge: Gauge::Projected,
        background: ReducedMetric::round(g0.grid()),
        track_diffeo: true,
        pull_back: true,
        control: None,
    };
    run(g0, params, &spec)
}

/// Ricci–DeTurck flow against the fixed background `bg`.
pub fn run_nrdf(g0: &ReducedMetric, bg: &ReducedMetric, params: &FlowParams) -> Result<Trajectory> {
    let spec = RunSpec {
        gauge: Gauge::DeTurck,
        background: bg.clone(),
        track_diffeo: false,
        pull_back: false,
        control: None,
    };
    run(g0, params, &spec)
}

/// W = w(x)∂ₓ with W^k = g^{ij}(Γ − Γ̂)^k_ij. Returns w at the grid angles.
pub fn deturck_field(g: &ReducedMetric, bg: &ReducedMetric) -> Result<Vec<f64>> {
    if !g.same_grid(bg) {
        return Err(Error::Shape("metric and background live on different grids".into()));
    }
    let sys = FlowSystem { grid: g.grid().clone(), gauge: Gauge::DeTurck, bg: Background::new(bg), track: false };
    let omega = sys.omega(g.phi(), g.warp(), &g.grid().d_dt(g.warp()));
    Ok(omega.iter().zip(g.grid().sin_nodes()).map(|(o, s)| o * s).collect())
}

/// φ_t solving ∂ₜφ = −W(φ, t), φ₀ = id, at the trajectory's stored times.
pub fn integrate_diffeo(traj: &Trajectory, bg: &ReducedMetric) -> Result<Vec<DiffeoProfile>> {
    if traj.gauge != Gauge::DeTurck || traj.background.sup_distance(bg) != 0.0 {
        return Err(Error::Precondition("trajectory was not produced by a DeTurck run against this background".into()));
    }
    if let Some(d) = &traj.diffeos {
        return Ok(d.clone());
    }
    let spec = RunSpec {
        gauge: Gauge::DeTurck,
        background: bg.clone(),
        track_diffeo: true,
        pull_back: false,
        control: Some(StepControl::Replay(traj.steps.clone())),
    };
    let tracked = run(&traj.g0, &traj.params, &spec)?;
    Ok(tracked.diffeos.expect("tracked run stores diffeomorphisms"))
}

struct FieldFlow<'a, W: Fn(f64) -> Vec<f64>> {
    grid: &'a Arc<Quadrature>,
    omega: W,
}

impl<W: Fn(f64) -> Vec<f64>> OdeSystem for FieldFlow<'_, W> {
    fn dim(&self) -> usize {
        self.grid.len()
    }

    fn rhs(&self, t: f64, u: &[f64], du: &mut [f64]) -> Result<()> {
        shift_rate(self.grid, &(self.omega)(t), u, du)
    }
}

/// Flow of ∂ₜθ = −sin θ·ω(cos θ, t) for a prescribed ω profile, at `times`.
pub fn integrate_field<W>(grid: &Arc<Quadrature>, omega: W, times: &[f64], tol: f64) -> Result<Vec<DiffeoProfile>>
where
    W: Fn(f64) -> Vec<f64>,
{
    let sys = FieldFlow { grid, omega };
    let cfg = StepperConfig { rtol: tol, atol: tol, dt_min: DT_MIN, ..Default::default() };
    let mut integ = Integrator::new(&sys, cfg);
    let sol = integ.integrate(0.0, &vec![0.0; grid.len()], times, |_, _| Ok(()))?;
    sol.samples.into_iter().map(|u| DiffeoProfile::from_shift(grid, u)).collect()
}

/// ‖φ_t* g_NRDF(t) − g_NRF(t)‖_∞ at each stored time. The NRF side uses the
/// projected gauge, so the two runs follow different gauge fields.
pub fn conjugacy_residual(g0: &ReducedMetric, bg: &ReducedMetric, params: &FlowParams) -> Result<Vec<(f64, f64)>> {
    let spec = RunSpec {
        gauge: Gauge::DeTurck,
        background: bg.clone(),
        track_diffeo: true,
        pull_back: true,
        control: None,
    };
    let gauged = run(g0, params, &spec)?;
    let nrf = run_nrf(g0, params)?;
    let n = g0.dim();
    Ok(gauged
        .times
        .iter()
        .zip(gauged.metrics.iter().zip(&nrf.metrics))
        .map(|(t, (a, b))| (*t, sup_norm(&a.to_tensor().sub(&b.to_tensor()), n)))
        .collect())
}

/// First stored time from which the neighborhood certificate holds at every
/// later sample; +∞ if there is none.
pub fn entry_time(traj: &Trajectory, thresholds: &[f64], diffeo_bound: f64) -> Result<f64> {
    let mut entry = f64::INFINITY;
    for (i, g) in traj.metrics.iter().enumerate().rev() {
        let d = traj.diffeos.as_ref().map(|v| &v[i]);
        if neighborhood_certificate(g, &traj.background, thresholds, diffeo_bound, d)? {
            entry = traj.times[i];
        } else {
            break;
        }
    }
    Ok(entry)
}


