//! Admissible conformal re-gauging and the optimal-gauge iteration.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::diffeo::{pullback, DiffeoProfile};
use crate::error::{Error, Result};
use crate::flow::{run, FlowParams, Gauge, RunSpec, Trajectory};
use crate::metric::ReducedMetric;
use crate::spectral::decompose;
use crate::sphere::{max_sobolev_order, sobolev_norm, sup_norm};
use crate::stepper::StepControl;

pub const EPS_MAX: f64 = 0.2;

/// Terminal tolerance on |b_axis(T)|.
pub const B_TOL: f64 = 1e-10;

const MAX_SECANT: usize = 40;
const SECANT_OFFSET: f64 = 1e-4;
/// Relative bracket width at which ε counts as resolved.
const RESOLUTION: f64 = 1e-12;

/// ε ∈ ℝⁿ⁺¹ paired with the ambient coordinates; only the axis entry is used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaugeVector {
    pub eps: Vec<f64>,
}

impl GaugeVector {
    pub fn zero(n: usize) -> Self {
        Self { eps: vec![0.0; n + 1] }
    }

    pub fn axis(n: usize, value: f64) -> Self {
        let mut eps = vec![0.0; n + 1];
        eps[n] = value;
        Self { eps }
    }

    pub fn axis_value(&self) -> f64 {
        *self.eps.last().unwrap()
    }

    pub fn norm(&self) -> f64 {
        self.eps.iter().map(|e| e * e).sum::<f64>().sqrt()
    }

    fn check(&self, n: usize) -> Result<()> {
        if self.eps.len() != n + 1 {
            return Err(Error::Shape(format!("gauge vector has {} entries, expected {}", self.eps.len(), n + 1)));
        }
        if self.eps[..n].iter().any(|e| *e != 0.0) {
            return Err(Error::Precondition("only the axis component is supported in the reduced class".into()));
        }
        if !(self.norm() <= EPS_MAX) {
            return Err(Error::Precondition(format!("|eps| = {} exceeds eps_max = {EPS_MAX}", self.norm())));
        }
        Ok(())
    }
}

/// Axis Möbius dilation tan(θ/2) = e^{ε/2}·tan(x/2), so that
/// φ(ε)*σ = (1 + ε cos x)σ + O(ε²).
pub fn admissible_diffeo(eps: &GaugeVector, bg: &ReducedMetric) -> Result<DiffeoProfile> {
    eps.check(bg.dim())?;
    dilation(bg.grid(), eps.axis_value())
}

fn dilation(grid: &Arc<crate::sphere::Quadrature>, e: f64) -> Result<DiffeoProfile> {
    let m = e.exp();
    // cos θ − t = (1 − t²)(1 − m)/((1 + t) + m(1 − t))
    let shift = grid.cos_nodes().iter().map(|t| (1.0 - m) / ((1.0 + t) + m * (1.0 - t))).collect();
    DiffeoProfile::from_shift(grid, shift)
}

/// ‖φ(ε)*g − (1 + ε cos x)g‖_∞
pub fn admissibility_residual(eps: &GaugeVector, g: &ReducedMetric) -> Result<f64> {
    let d = admissible_diffeo(eps, g)?;
    let pulled = pullback(g, &d)?;
    let e = eps.axis_value();
    let factor: Vec<f64> = g.grid().cos_nodes().iter().map(|t| 1.0 + e * t).collect();
    let linear = g.to_tensor().times(&factor);
    Ok(sup_norm(&pulled.to_tensor().sub(&linear), g.dim()))
}

/// |1 − a| + Σ|b_k| + Σ_{j≤2n}‖∇ʲǧ‖₂ of g against `bg`.
pub fn delta0(g: &ReducedMetric, bg: &ReducedMetric) -> Result<f64> {
    let d = decompose(g, bg)?;
    let n = g.dim();
    let check = sobolev_norm(&d.check, max_sobolev_order(n), g.grid())?;
    Ok((1.0 - d.a).abs() + d.b.iter().map(|b| b.abs()).sum::<f64>() + check)
}

#[derive(Debug, Clone)]
pub struct GaugeSolve {
    pub eps: GaugeVector,
    pub traj: Trajectory,
    /// b_axis at the terminal time of `traj`
    pub terminal_b: f64,
    /// |b(T)| ≤ B_TOL was reached; otherwise the iteration stopped at ε-resolution
    pub converged: bool,
    /// flow solves spent by the root finder
    pub evaluations: usize,
}

/// ε with b_axis(T) = 0 along the DeTurck flow against `bg` from φ(ε)*g0.
pub fn optimal_gauge(g0: &ReducedMetric, bg: &ReducedMetric, t_end: f64, params: &FlowParams) -> Result<GaugeSolve> {
    optimal_gauge_from(g0, bg, t_end, params, None)
}

/// As [`optimal_gauge`], starting from `start` instead of the first-order
/// guess −b(0)/a(0). The step sequence of the first solve is replayed by all
/// later ones, so b(T) is a fixed discrete function of ε.
///
/// Rounding makes b(T) noisy at a level that grows like e^{(n−2)T}; once the
/// bracket shrinks below ε-resolution the best iterate is returned unconverged.
pub fn optimal_gauge_from(
    g0: &ReducedMetric,
    bg: &ReducedMetric,
    t_end: f64,
    params: &FlowParams,
    start: Option<f64>,
) -> Result<GaugeSolve> {
    if !(t_end >= 0.0 && t_end.is_finite()) {
        return Err(Error::Precondition(format!("terminal time {t_end} must be finite and non-negative")));
    }
    let n = g0.dim();
    let e_start = match start {
        Some(s) => s,
        None => {
            let dec = decompose(g0, bg)?;
            -dec.b_axis() / dec.a
        }
    };
    if !(e_start.abs() <= EPS_MAX) {
        return Err(Error::NoAdmissibleGauge(format!("starting value {e_start} exceeds eps_max = {EPS_MAX}")));
    }
    let p = FlowParams { sample_every: params.sample_every.min(t_end.max(1e-3)), ..params.with_t_end(t_end) };

    let flow_from = |e: f64, control: Option<StepControl>| -> Result<(Trajectory, f64)> {
        let d = admissible_diffeo(&GaugeVector::axis(n, e), bg)?;
        let spec = RunSpec { gauge: Gauge::DeTurck, background: bg.clone(), track_diffeo: false, pull_back: false, control };
        let tr = run(&pullback(g0, &d)?, &p, &spec)?;
        let b = tr.diagnostics.last().map(|d| d.b_axis).unwrap_or(0.0);
        Ok((tr, b))
    };

    let (first, mut f0) = match flow_from(e_start, None) {
        Ok(r) => r,
        // too far from the root for the unstable mode: continue from T/2
        Err(e) if breakdown(&e) && t_end >= 1.0 => {
            let half = optimal_gauge_from(g0, bg, 0.5 * t_end, params, start)?;
            return optimal_gauge_from(g0, bg, t_end, params, Some(half.eps.axis_value()));
        }
        Err(e) => return Err(e),
    };
    let replay = Some(StepControl::Replay(first.steps.clone()));
    let mut e0 = e_start;
    let mut best = (e0, f0, first);
    let mut evaluations = 1;
    let done = |best: (f64, f64, Trajectory), evaluations, converged| GaugeSolve {
        eps: GaugeVector::axis(n, best.0),
        terminal_b: best.1,
        traj: best.2,
        converged,
        evaluations,
    };
    if f0.abs() <= B_TOL {
        return Ok(done(best, evaluations, true));
    }

    let mut e1 = e0 + if e0 > 0.0 { -SECANT_OFFSET } else { SECANT_OFFSET };
    let mut bracket: Option<(f64, f64)> = None;
    for _ in 0..MAX_SECANT {
        let (tr, f1) = match flow_from(e1, replay.clone()) {
            Ok(r) => r,
            Err(e) if breakdown(&e) => {
                evaluations += 1;
                e1 = 0.5 * (e1 + best.0);
                continue;
            }
            Err(e) => return Err(e),
        };
        evaluations += 1;
        if f1.abs() < best.1.abs() {
            best = (e1, f1, tr);
        }
        if best.1.abs() <= B_TOL {
            return Ok(done(best, evaluations, true));
        }
        // bracket endpoints keep opposite signs of b(T)
        bracket = match bracket {
            _ if f0.signum() != f1.signum() && bracket.is_none() => Some(if f0 < 0.0 { (e0, e1) } else { (e1, e0) }),
            Some((neg, pos)) => Some(if f1 < 0.0 { (e1, pos) } else { (neg, e1) }),
            None => None,
        };
        let mut next = e1 - f1 * (e1 - e0) / (f1 - f0);
        if let Some((neg, pos)) = bracket {
            let (lo, hi) = (neg.min(pos), neg.max(pos));
            if hi - lo <= RESOLUTION * hi.abs().max(1e-3) {
                return Ok(done(best, evaluations, false));
            }
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
        }
        if !next.is_finite() || next.abs() > EPS_MAX {
            return Err(Error::NoAdmissibleGauge(format!("root finder left |eps| <= {EPS_MAX} (next iterate {next})")));
        }
        if next == e1 {
            return Ok(done(best, evaluations, false));
        }
        (e0, f0) = (e1, f1);
        e1 = next;
    }
    Err(Error::NoAdmissibleGauge(format!("no convergence in {MAX_SECANT} iterations (best |b(T)| = {:e})", best.1.abs())))
}

/// Failures of a single flow run that a smaller gauge step can avoid.
fn breakdown(e: &Error) -> bool {
    matches!(e, Error::Stiffness { .. } | Error::DegenerateMetric(_) | Error::DiffeoBreakdown(_))
}

/// Amplitudes at or below this are excluded from exponential fits.
const FIT_FLOOR: f64 = 1e-12;

/// Least-squares slope of ln|v| against t over entries above the fit floor.
pub(crate) fn log_slope(ts: &[f64], vs: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = ts.iter().zip(vs).filter(|(_, v)| v.abs() > FIT_FLOOR).map(|(t, v)| (*t, v.abs().ln())).collect();
    if pts.len() < 3 {
        return None;
    }
    let m = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let ml = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let den: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    if den == 0.0 {
        return None;
    }
    Some(pts.iter().map(|p| (p.0 - mt) * (p.1 - ml)).sum::<f64>() / den)
}

#[derive(Debug, Clone, Serialize)]
pub struct DecayReport {
    /// fitted decay rate of |b_axis(t)|, if it rises above the fit floor
    pub rate_b: Option<f64>,
    /// fitted decay rate of Σ_{j≤2n}‖∇ʲǧ(t)‖₂
    pub rate_check: Option<f64>,
    /// smallest c with |b| ≤ cδ₀²e^{−t} and the ǧ norm ≤ cδ₀e^{−t} along the run
    pub c1_measured: f64,
    pub b_bound: bool,
    pub check_bound: bool,
    /// ‖ε_T‖ ≤ δ₀^{9/10}
    pub eps_bound: bool,
}

/// Exponential fits and the bound checks against a given constant `c1`.
pub fn decay_monitor(traj: &Trajectory, delta0: f64, eps: &GaugeVector, c1: f64) -> Result<DecayReport> {
    if traj.diagnostics.len() < 3 {
        return Err(Error::Diagnostics(format!("{} samples are too few for a fit", traj.diagnostics.len())));
    }
    if !(delta0 >= 0.0) {
        return Err(Error::Precondition(format!("delta0 = {delta0} must be non-negative")));
    }
    let ts: Vec<f64> = traj.diagnostics.iter().map(|d| d.t).collect();
    let bs: Vec<f64> = traj.diagnostics.iter().map(|d| d.b_axis).collect();
    let cs: Vec<f64> = traj.diagnostics.iter().map(|d| d.check_sobolev).collect();
    let ratio = |v: f64, t: f64, scale: f64| if v.abs() <= FIT_FLOOR { 0.0 } else { v.abs() * t.exp() / scale };
    let mut c_b: f64 = 0.0;
    let mut c_check: f64 = 0.0;
    for k in 0..ts.len() {
        c_b = c_b.max(ratio(bs[k], ts[k], delta0 * delta0));
        c_check = c_check.max(ratio(cs[k], ts[k], delta0));
    }
    Ok(DecayReport {
        rate_b: log_slope(&ts, &bs).map(|r| -r),
        rate_check: log_slope(&ts, &cs).map(|r| -r),
        c1_measured: c_b.max(c_check),
        b_bound: c_b <= c1,
        check_bound: c_check <= c1,
        eps_bound: eps.norm() <= delta0.powf(0.9),
    })
}

/// Measured quantities of one stored time on the last re-gauged run.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SeriesRow {
    pub t: f64,
    pub b_axis: f64,
    pub check_sobolev: f64,
    pub dist_to_limit: f64,
}

fn serialize_metric<S: serde::Serializer>(g: &Option<ReducedMetric>, s: S) -> std::result::Result<S::Ok, S::Error> {
    g.as_ref().map(|g| g.to_file()).serialize(s)
}

#[derive(Debug, Clone, Serialize)]
pub struct GaugeRunReport {
    pub schedule: Vec<f64>,
    pub eps_per_t: Vec<GaugeVector>,
    /// ‖φ*_{T_j}g₀ − φ*_{T_i}g₀‖_∞
    pub cauchy_gaps: Vec<Vec<f64>>,
    /// max over shared stored times of ‖ǧ(t, T_{i+1}) − ǧ(t, T_i)‖_∞
    pub check_gaps: Vec<f64>,
    /// fitted decay rate of consecutive gaps above CAUCHY_FLOOR
    pub cauchy_rate: Option<f64>,
    /// every consecutive gap from T ≥ 2 on shrinks by e^{−CAUCHY_RATE_MIN·ΔT} or is at the floor
    pub cauchy_ok: bool,
    /// max over i < j of gap(T_i, T_j)·e^{T_i}/δ₀²
    pub gap_constant: f64,
    pub delta0: f64,
    pub decay: Option<DecayReport>,
    pub limit_eps: GaugeVector,
    #[serde(serialize_with = "serialize_metric")]
    pub limit_metric: Option<ReducedMetric>,
    pub limit_defect: f64,
    pub limit_certified: bool,
    /// fitted decay rate of ‖g(t) − ĝ‖_∞ along the last run, t ≤ T_last − 2
    pub limit_rate: Option<f64>,
    /// attained b(T, T) per schedule entry
    pub terminal_b: Vec<f64>,
    /// whether |b(T, T)| ≤ B_TOL was reached per schedule entry
    pub converged: Vec<bool>,
    pub monitor_violation: bool,
    pub failure_index: Option<usize>,
    pub failure: Option<String>,
    pub series: Vec<SeriesRow>,
}

/// Tolerance of the roundness certificate of the limit metric.
pub const LIMIT_TOL: f64 = 1e-6;
/// Least accepted Cauchy rate.
pub const CAUCHY_RATE_MIN: f64 = 0.9;
/// Gaps at or below this are at the ε-resolution of the root finder.
pub const CAUCHY_FLOOR: f64 = 1e-9;
/// Default value of the constant in the decay bounds.
pub const DEFAULT_C1: f64 = 10.0;

impl GaugeRunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,b_axis,check_sobolev,dist_to_limit\n");
        for r in &self.series {
            out.push_str(&format!("{:.10},{:.6e},{:.6e},{:.6e}\n", r.t, r.b_axis, r.check_sobolev, r.dist_to_limit));
        }
        out
    }
}

/// Aitken Δ² on the last three terms; the last term if the tail is not geometric.
fn aitken(v: &[f64]) -> f64 {
    match v {
        [.., a, b, c] => {
            let den = (c - b) - (b - a);
            if den.abs() <= 1e-14 * (c.abs() + 1e-300) || (c - b) * (b - a) <= 0.0 {
                *c
            } else {
                c - (c - b).powi(2) / den
            }
        }
        [.., c] => *c,
        [] => 0.0,
    }
}

/// Optimal gauges for every T in `schedule`, with Cauchy monitoring and the limit.
pub fn gauge_iteration(g0: &ReducedMetric, bg: &ReducedMetric, schedule: &[f64], params: &FlowParams, c1: f64) -> Result<GaugeRunReport> {
    if schedule.first() != Some(&0.0) || schedule.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Precondition("schedule must start at 0 and increase".into()));
    }
    let n = g0.dim();
    let delta0 = delta0(g0, bg)?;
    // each T starts from ε at the previous T
    let mut solved: Vec<GaugeSolve> = Vec::with_capacity(schedule.len());
    let (mut failure_index, mut failure) = (None, None);
    for (i, t) in schedule.iter().enumerate() {
        let start = solved.last().map(|s| s.eps.axis_value());
        match optimal_gauge_from(g0, bg, *t, params, start) {
            Ok(s) => solved.push(s),
            Err(e) => {
                failure_index = Some(i);
                failure = Some(e.to_string());
                break;
            }
        }
    }
    let times = &schedule[..solved.len()];

    let pulled: Vec<ReducedMetric> =
        solved.iter().map(|s| pullback(g0, &admissible_diffeo(&s.eps, bg)?)).collect::<Result<_>>()?;
    let m = solved.len();
    let mut gaps = vec![vec![0.0; m]; m];
    let mut gap_constant: f64 = 0.0;
    for i in 0..m {
        for j in 0..m {
            gaps[i][j] = pulled[j].sup_distance(&pulled[i]);
            if i < j && delta0 > 0.0 {
                gap_constant = gap_constant.max(gaps[i][j] * times[i].exp() / (delta0 * delta0));
            }
        }
    }
    let mut check_gaps = Vec::new();
    for w in solved.windows(2) {
        let mut worst: f64 = 0.0;
        for (k, t) in w[0].traj.times.iter().enumerate() {
            if let Some(l) = w[1].traj.times.iter().position(|s| (s - t).abs() < 1e-12) {
                let a = decompose(&w[0].traj.metrics[k], bg)?.check;
                let b = decompose(&w[1].traj.metrics[l], bg)?.check;
                worst = worst.max(sup_norm(&a.sub(&b), n));
            }
        }
        check_gaps.push(worst);
    }
    let consecutive: Vec<f64> = (1..m).map(|i| gaps[i - 1][i]).collect();
    let (fit_t, fit_g): (Vec<f64>, Vec<f64>) =
        consecutive.iter().enumerate().filter(|(_, g)| **g > CAUCHY_FLOOR).map(|(i, g)| (times[i], *g)).unzip();
    let cauchy_rate = log_slope(&fit_t, &fit_g).map(|r| -r);
    let cauchy_ok = (1..consecutive.len()).filter(|i| times[*i - 1] >= 2.0).all(|i| {
        let shrink = (-CAUCHY_RATE_MIN * (times[i] - times[i - 1])).exp();
        consecutive[i] <= (shrink * consecutive[i - 1]).max(CAUCHY_FLOOR)
    });

    let eps_axis: Vec<f64> = solved.iter().map(|s| s.eps.axis_value()).collect();
    let limit_eps = GaugeVector::axis(n, aitken(&eps_axis));

    let (mut decay, mut limit_metric, mut limit_defect, mut limit_rate, mut series) = (None, None, f64::INFINITY, None, Vec::new());
    if let Some(last) = solved.last() {
        decay = if last.traj.diagnostics.len() >= 3 { Some(decay_monitor(&last.traj, delta0, &last.eps, c1)?) } else { None };
        let limit = last.traj.final_metric().clone();
        limit_defect = crate::metric::curvature(&limit)?.round_defect();
        let t_last = *last.traj.times.last().unwrap();
        let mut fit_t = Vec::new();
        let mut fit_d = Vec::new();
        for (t, g) in last.traj.times.iter().zip(&last.traj.metrics) {
            let dec = decompose(g, bg)?;
            let dist = g.sup_distance(&limit);
            series.push(SeriesRow {
                t: *t,
                b_axis: dec.b_axis(),
                check_sobolev: sobolev_norm(&dec.check, max_sobolev_order(n), g.grid())?,
                dist_to_limit: dist,
            });
            if *t <= t_last - 2.0 {
                fit_t.push(*t);
                fit_d.push(dist);
            }
        }
        limit_rate = log_slope(&fit_t, &fit_d).map(|r| -r);
        limit_metric = Some(limit);
    }
    let limit_certified = limit_defect <= LIMIT_TOL;
    let monitor_violation = !cauchy_ok;

    Ok(GaugeRunReport {
        schedule: times.to_vec(),
        eps_per_t: solved.iter().map(|s| s.eps.clone()).collect(),
        cauchy_gaps: gaps,
        check_gaps,
        cauchy_rate,
        cauchy_ok,
        gap_constant,
        delta0,
        decay,
        limit_eps,
        limit_metric,
        limit_defect,
        limit_certified,
        limit_rate,
        terminal_b: solved.iter().map(|s| s.terminal_b).collect(),
        converged: solved.iter().map(|s| s.converged).collect(),
        monitor_violation,
        failure_index,
        failure,
        series,
    })
}
