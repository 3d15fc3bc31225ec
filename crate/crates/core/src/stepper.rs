//! ESDIRK time integration for stiff method-of-lines systems.
//!
//! Kværno's 4-stage, 3rd-order, stiffly accurate and L-stable scheme with an
//! embedded 2nd-order solution. Stage equations are solved by simplified
//! Newton with a finite-difference Jacobian that is reused across steps and
//! refreshed only when Newton stalls.

use nalgebra::{DMatrix, DVector, LU};

use crate::error::{Error, Result};

pub trait OdeSystem {
    fn dim(&self) -> usize;
    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]) -> Result<()>;
}

/// Formal order of the propagated solution.
pub const ORDER: usize = 3;

struct Tableau {
    gamma: f64,
    c: [f64; 4],
    a: [[f64; 4]; 4],
    /// weights of the 2nd-order embedded solution
    b_low: [f64; 4],
}

fn kvaerno_3_2() -> Tableau {
    // γ is the middle root of 6γ³ − 18γ² + 9γ − 1 = 0.
    let g: f64 = 0.435_866_521_508_458_999_416_019_451_193_556_843;
    let a31 = (-4.0 * g * g + 6.0 * g - 1.0) / (4.0 * g);
    let a32 = (1.0 - 2.0 * g) / (4.0 * g);
    let a41 = (6.0 * g - 1.0) / (12.0 * g);
    let a42 = -1.0 / ((24.0 * g - 12.0) * g);
    let a43 = (-6.0 * g * g + 6.0 * g - 1.0) / (6.0 * g - 3.0);
    Tableau {
        gamma: g,
        c: [0.0, 2.0 * g, 1.0, 1.0],
        a: [
            [0.0, 0.0, 0.0, 0.0],
            [g, g, 0.0, 0.0],
            [a31, a32, g, 0.0],
            [a41, a42, a43, g],
        ],
        b_low: [a31, a32, g, 0.0],
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StepControl {
    /// Embedded error control with the configured tolerances.
    Adaptive,
    /// Constant step, shortened only to land on sample times.
    Fixed(f64),
    /// Replay an explicit list of step sizes (as recorded by a previous run).
    Replay(Vec<f64>),
}

#[derive(Debug, Clone)]
pub struct StepperConfig {
    pub dt_init: f64,
    pub dt_max: f64,
    pub dt_min: f64,
    pub rtol: f64,
    pub atol: f64,
    /// Newton stops once the update is this small
    pub newton_tol: f64,
    /// ... or once it stops contracting below this level
    pub newton_accept: f64,
    pub max_newton: usize,
    pub control: StepControl,
}

impl Default for StepperConfig {
    fn default() -> Self {
        Self {
            dt_init: 1e-3,
            dt_max: 0.5,
            dt_min: 1e-12,
            rtol: 1e-8,
            atol: 1e-10,
            newton_tol: 1e-15,
            newton_accept: 1e-11,
            max_newton: 16,
            control: StepControl::Adaptive,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Solution {
    /// requested sample times, with the state at each
    pub sample_times: Vec<f64>,
    pub samples: Vec<Vec<f64>>,
    /// accepted step sizes, in order
    pub steps: Vec<f64>,
    pub jacobian_evaluations: usize,
    pub rejected: usize,
}

struct Jacobian {
    matrix: DMatrix<f64>,
    lu: Option<(f64, LU<f64, nalgebra::Dyn, nalgebra::Dyn>)>,
    fresh: bool,
    /// ‖J‖_∞
    norm: f64,
}

pub struct Integrator<'a, S: OdeSystem> {
    sys: &'a S,
    cfg: StepperConfig,
    tab: Tableau,
    jac: Option<Jacobian>,
    jac_evals: usize,
}

impl<'a, S: OdeSystem> Integrator<'a, S> {
    pub fn new(sys: &'a S, cfg: StepperConfig) -> Self {
        Self { sys, cfg, tab: kvaerno_3_2(), jac: None, jac_evals: 0 }
    }

    fn eval(&self, t: f64, y: &[f64]) -> Result<Vec<f64>> {
        let mut dy = vec![0.0; y.len()];
        self.sys.rhs(t, y, &mut dy)?;
        Ok(dy)
    }

    fn refresh_jacobian(&mut self, t: f64, y: &[f64], _f0: &[f64]) -> Result<()> {
        let m = y.len();
        let mut matrix = DMatrix::<f64>::zeros(m, m);
        let mut yp = y.to_vec();
        for k in 0..m {
            // central differences: the forward error term is large near the poles
            let delta = 1e-5 * y[k].abs().max(1e-1);
            yp[k] = y[k] + delta;
            let fp = self.eval(t, &yp)?;
            yp[k] = y[k] - delta;
            let fm = self.eval(t, &yp)?;
            yp[k] = y[k];
            for i in 0..m {
                matrix[(i, k)] = (fp[i] - fm[i]) / (2.0 * delta);
            }
        }
        self.jac_evals += 1;
        let norm = matrix.row_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
        self.jac = Some(Jacobian { matrix, lu: None, fresh: true, norm });
        Ok(())
    }

    fn iteration_matrix(&mut self, h: f64) -> Result<()> {
        let hg = h * self.tab.gamma;
        let jac = self.jac.as_mut().expect("jacobian is computed before use");
        if let Some((cached, _)) = &jac.lu {
            if *cached == hg {
                return Ok(());
            }
        }
        let m = jac.matrix.nrows();
        let mut it = DMatrix::<f64>::identity(m, m);
        it -= &jac.matrix * hg;
        jac.lu = Some((hg, it.lu()));
        Ok(())
    }

    /// Solve Y − hγ f(t, Y) = base by simplified Newton. Returns None if it stalls.
    fn solve_stage(&mut self, t: f64, h: f64, base: &[f64], guess: Vec<f64>) -> Result<Option<(Vec<f64>, Vec<f64>)>> {
        self.iteration_matrix(h)?;
        let hg = h * self.tab.gamma;
        // stagnation below the rounding level of the residual is convergence
        let accept = self.cfg.newton_accept.max(f64::EPSILON * hg * self.jac.as_ref().unwrap().norm);
        let mut y = guess;
        let mut prev_norm = f64::INFINITY;
        for _ in 0..self.cfg.max_newton {
            let f = match self.eval(t, &y) {
                Ok(f) => f,
                Err(Error::DegenerateMetric(_)) => return Ok(None),
                Err(e) => return Err(e),
            };
            let resid = DVector::from_iterator(y.len(), (0..y.len()).map(|i| base[i] + hg * f[i] - y[i]));
            let lu = &self.jac.as_ref().unwrap().lu.as_ref().unwrap().1;
            let delta = match lu.solve(&resid) {
                Some(d) => d,
                None => return Ok(None),
            };
            let mut norm = 0.0_f64;
            for i in 0..y.len() {
                y[i] += delta[i];
                norm = norm.max(delta[i].abs() / y[i].abs().max(1.0));
            }
            if !norm.is_finite() {
                return Ok(None);
            }
            if norm <= self.cfg.newton_tol {
                return self.finish_stage(t, y);
            }
            if norm > 0.9 * prev_norm {
                if norm <= accept {
                    return self.finish_stage(t, y);
                }
                return Ok(None);
            }
            prev_norm = norm;
        }
        if prev_norm <= accept {
            return self.finish_stage(t, y);
        }
        Ok(None)
    }

    fn finish_stage(&self, t: f64, y: Vec<f64>) -> Result<Option<(Vec<f64>, Vec<f64>)>> {
        match self.eval(t, &y) {
            Ok(f) => Ok(Some((y, f))),
            Err(Error::DegenerateMetric(_)) => Ok(None),
            Err(e) => Err(e),
        }
    }

    /// Attempt one step; returns (y_new, f(y_new), error norm) or None on Newton failure.
    fn try_step(&mut self, t: f64, y: &[f64], f0: &[f64], h: f64) -> Result<Option<(Vec<f64>, Vec<f64>, f64)>> {
        let m = y.len();
        let mut k: Vec<Vec<f64>> = vec![f0.to_vec()];
        let mut last = y.to_vec();
        for i in 1..4 {
            let mut base = y.to_vec();
            for (j, kj) in k.iter().enumerate() {
                let a = self.tab.a[i][j];
                if a != 0.0 {
                    for r in 0..m {
                        base[r] += h * a * kj[r];
                    }
                }
            }
            let guess = last.clone();
            match self.solve_stage(t + self.tab.c[i] * h, h, &base, guess)? {
                Some((yi, fi)) => {
                    last = yi;
                    k.push(fi);
                }
                None => return Ok(None),
            }
        }
        // stiffly accurate: the last stage is the solution
        let y_new = last;
        let raw = DVector::from_iterator(
            m,
            (0..m).map(|r| h * k.iter().enumerate().map(|(j, kj)| (self.tab.a[3][j] - self.tab.b_low[j]) * kj[r]).sum::<f64>()),
        );
        // damp stiff components of the estimate
        let lu = &self.jac.as_ref().unwrap().lu.as_ref().unwrap().1;
        let filtered = lu.solve(&raw).unwrap_or(raw);
        let mut err = 0.0;
        for r in 0..m {
            let e = filtered[r];
            let sc = self.cfg.atol + self.cfg.rtol * y[r].abs().max(y_new[r].abs());
            err += (e / sc).powi(2);
        }
        let err = (err / m as f64).sqrt();
        Ok(Some((y_new, k[3].clone(), err)))
    }

    /// Integrate from `t0` to the last of `sample_times` (sorted, ≥ t0),
    /// calling `on_step(t, y)` after every accepted step and at t0.
    pub fn integrate<F>(&mut self, t0: f64, y0: &[f64], sample_times: &[f64], mut on_step: F) -> Result<Solution>
    where
        F: FnMut(f64, &[f64]) -> Result<()>,
    {
        let mut sol = Solution {
            sample_times: Vec::new(),
            samples: Vec::new(),
            steps: Vec::new(),
            jacobian_evaluations: 0,
            rejected: 0,
        };
        let mut t = t0;
        let mut y = y0.to_vec();
        on_step(t, &y)?;
        let mut next_sample = 0;
        while next_sample < sample_times.len() && sample_times[next_sample] <= t0 {
            sol.sample_times.push(sample_times[next_sample]);
            sol.samples.push(y.clone());
            next_sample += 1;
        }
        if next_sample == sample_times.len() {
            return Ok(sol);
        }
        let t_end = *sample_times.last().unwrap();
        let mut f = self.eval(t, &y)?;
        let mut h = match &self.cfg.control {
            StepControl::Adaptive => self.cfg.dt_init,
            StepControl::Fixed(dt) => *dt,
            StepControl::Replay(list) => *list.first().unwrap_or(&self.cfg.dt_init),
        };
        let mut replay_idx = 0;
        let mut steps_since_jac = usize::MAX;

        while t < t_end {
            let target = sample_times[next_sample];
            let mut h_try = h.min(self.cfg.dt_max);
            if let StepControl::Replay(list) = &self.cfg.control {
                h_try = *list.get(replay_idx).unwrap_or(&(target - t));
            }
            let mut lands = false;
            if t + h_try >= target - 1e-12 * target.abs().max(1.0) {
                h_try = target - t;
                lands = true;
            }
            if h_try < self.cfg.dt_min {
                return Err(Error::Stiffness { t, dt: h_try });
            }
            if self.jac.is_none() || steps_since_jac > 50 {
                self.refresh_jacobian(t, &y, &f)?;
                steps_since_jac = 0;
            }
            let attempt = self.try_step(t, &y, &f, h_try)?;
            let (y_new, f_new, err) = match attempt {
                Some(v) => v,
                None => {
                    // Newton stalled: refresh the Jacobian first, then shrink.
                    if !self.jac.as_ref().map(|j| j.fresh).unwrap_or(false) {
                        self.refresh_jacobian(t, &y, &f)?;
                        steps_since_jac = 0;
                    } else {
                        if !matches!(self.cfg.control, StepControl::Adaptive) {
                            return Err(Error::Stiffness { t, dt: h_try });
                        }
                        h = 0.25 * h_try;
                        sol.rejected += 1;
                    }
                    continue;
                }
            };
            let adaptive = matches!(self.cfg.control, StepControl::Adaptive);
            if adaptive && err > 1.0 {
                sol.rejected += 1;
                h = h_try * (0.9 * err.powf(-1.0 / 3.0)).clamp(0.2, 0.9);
                continue;
            }
            t = if lands { target } else { t + h_try };
            y = y_new;
            f = f_new;
            sol.steps.push(h_try);
            replay_idx += 1;
            steps_since_jac = steps_since_jac.saturating_add(1);
            if let Some(j) = self.jac.as_mut() {
                j.fresh = false;
            }
            on_step(t, &y)?;
            if adaptive {
                let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-1.0 / 3.0)).clamp(0.2, 5.0) };
                // a landing step is often artificially short; don't let it shrink h
                let base = if lands { h.max(h_try) } else { h_try };
                h = (base * factor).min(self.cfg.dt_max);
            }
            if lands {
                while next_sample < sample_times.len() && sample_times[next_sample] <= t + 1e-14 {
                    sol.sample_times.push(sample_times[next_sample]);
                    sol.samples.push(y.clone());
                    next_sample += 1;
                }
                if next_sample == sample_times.len() {
                    break;
                }
            }
        }
        sol.jacobian_evaluations = self.jac_evals;
        Ok(sol)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Decay {
        rates: Vec<f64>,
    }

    impl OdeSystem for Decay {
        fn dim(&self) -> usize {
            self.rates.len()
        }
        fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
            for i in 0..y.len() {
                dy[i] = -self.rates[i] * y[i];
            }
            Ok(())
        }
    }

    /// y' = −y² + cos t, nonautonomous and nonlinear
    struct Riccati;

    impl OdeSystem for Riccati {
        fn dim(&self) -> usize {
            1
        }
        fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
            dy[0] = -y[0] * y[0] + t.cos();
            Ok(())
        }
    }

    #[test]
    fn tableau_is_consistent() {
        let tab = kvaerno_3_2();
        for i in 0..4 {
            let row: f64 = tab.a[i].iter().sum();
            assert!((row - tab.c[i]).abs() < 1e-15);
        }
        let b = tab.a[3];
        let c = tab.c;
        assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        assert!((b.iter().zip(&c).map(|(b, c)| b * c).sum::<f64>() - 0.5).abs() < 1e-14);
        assert!((b.iter().zip(&c).map(|(b, c)| b * c * c).sum::<f64>() - 1.0 / 3.0).abs() < 1e-14);
    }

    /// y' = −λ(y − cos t) − sin t, exact solution cos t
    struct ProtheroRobinson(f64);

    impl OdeSystem for ProtheroRobinson {
        fn dim(&self) -> usize {
            1
        }
        fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
            dy[0] = -self.0 * (y[0] - t.cos()) - t.sin();
            Ok(())
        }
    }

    #[test]
    fn stiff_problem_takes_large_steps() {
        let sys = ProtheroRobinson(1e6);
        let cfg = StepperConfig { rtol: 1e-7, atol: 1e-9, ..Default::default() };
        let mut integ = Integrator::new(&sys, cfg);
        let sol = integ.integrate(0.0, &[1.0], &[5.0], |_, _| Ok(())).unwrap();
        assert!((sol.samples[0][0] - 5.0f64.cos()).abs() < 1e-6);
        assert!(sol.steps.len() < 200, "{} steps", sol.steps.len());
    }

    #[test]
    fn decay_modes_are_damped() {
        let sys = Decay { rates: vec![1.0, 1e4] };
        let mut integ = Integrator::new(&sys, StepperConfig { rtol: 1e-6, atol: 1e-9, ..Default::default() });
        let sol = integ.integrate(0.0, &[1.0, 1.0], &[2.0], |_, _| Ok(())).unwrap();
        assert!((sol.samples[0][0] - (-2.0f64).exp()).abs() < 1e-5);
        assert!(sol.samples[0][1].abs() < 1e-8);
    }

    #[test]
    fn fixed_steps_converge_at_third_order() {
        let errs: Vec<f64> = [0.1, 0.05, 0.025]
            .iter()
            .map(|&dt| {
                let cfg = StepperConfig { control: StepControl::Fixed(dt), ..Default::default() };
                let mut integ = Integrator::new(&Riccati, cfg);
                let sol = integ.integrate(0.0, &[0.5], &[2.0], |_, _| Ok(())).unwrap();
                let reference = {
                    let cfg = StepperConfig { control: StepControl::Fixed(1e-4), ..Default::default() };
                    let mut integ = Integrator::new(&Riccati, cfg);
                    integ.integrate(0.0, &[0.5], &[2.0], |_, _| Ok(())).unwrap().samples[0][0]
                };
                (sol.samples[0][0] - reference).abs()
            })
            .collect();
        let o1 = (errs[0] / errs[1]).log2();
        let o2 = (errs[1] / errs[2]).log2();
        assert!(o1 > 2.7 && o2 > 2.7, "orders {o1} {o2}");
    }

    #[test]
    fn replay_reproduces_adaptive_run() {
        let cfg = StepperConfig { rtol: 1e-7, ..Default::default() };
        let mut integ = Integrator::new(&Riccati, cfg.clone());
        let first = integ.integrate(0.0, &[0.5], &[3.0], |_, _| Ok(())).unwrap();
        let replay = StepperConfig { control: StepControl::Replay(first.steps.clone()), ..cfg };
        let mut integ = Integrator::new(&Riccati, replay);
        let second = integ.integrate(0.0, &[0.5], &[3.0], |_, _| Ok(())).unwrap();
        assert_eq!(first.steps.len(), second.steps.len());
        assert!((first.samples[0][0] - second.samples[0][0]).abs() < 1e-12);
    }
}
