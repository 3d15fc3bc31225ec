mod common;

use std::f64::consts::PI;
use std::sync::Arc;

use common::*;
use proptest::prelude::*;
use ricci_lab::flow::*;
use ricci_lab::metric::*;
use ricci_lab::sample::{perturbed_round, sample_pinched};
use ricci_lab::spectral::decompose;
use ricci_lab::sphere::Quadrature;

fn params(t_end: f64, resolution: usize) -> FlowParams {
    FlowParams { t_end, sample_every: t_end / 4.0, resolution, adapt_tol: 1e-10, ..Default::default() }
}

fn drift(tr: &Trajectory) -> f64 {
    let g0 = &tr.metrics[0];
    tr.metrics.iter().map(|g| g.sup_distance(g0)).fold(0.0, f64::max) / tr.times.last().unwrap()
}

fn conformal(q: &Arc<Quadrature>, f: impl Fn(f64) -> f64) -> ReducedMetric {
    let c: Vec<f64> = q.cos_nodes().iter().map(|t| f(*t).sqrt()).collect();
    ReducedMetric::from_warp(q, c.clone(), c).unwrap()
}

#[test]
fn round_metrics_are_fixed_points() {
    for n in [3, 4, 5] {
        let q = Quadrature::new(n, 32).unwrap();
        for c in [1.0, 2.5] {
            let g = ReducedMetric::round_scaled(&q, c);
            let nrf = run_nrf(&g, &params(10.0, 32)).unwrap();
            assert!(drift(&nrf) <= 1e-10, "nrf n={n} c={c}: {}", drift(&nrf));
            let nrdf = run_nrdf(&g, &ReducedMetric::round(&q), &params(5.0, 32)).unwrap();
            if c == 1.0 {
                assert!(drift(&nrdf) <= 1e-10, "nrdf n={n}: {}", drift(&nrdf));
            }
        }
    }
}

#[test]
fn volume_is_conserved() {
    let q = Quadrature::new(3, 64).unwrap();
    let g0 = sample_pinched(&q, 7, 0.05).unwrap();
    let tr = run_nrf(&g0, &FlowParams { sample_every: 1.0, ..params(20.0, 64) }).unwrap();
    for (t, g) in tr.times.iter().zip(&tr.metrics) {
        let err = (volume(g) - q.omega_n()).abs();
        assert!(err <= 1e-6 * q.omega_n(), "t={t}: {err:e}");
    }
}

#[test]
fn reflection_commutes_with_flow() {
    let q = Quadrature::new(3, 64).unwrap();
    let g0 = sample_pinched(&q, 11, 0.05).unwrap();
    let p = FlowParams { fixed_dt: Some(0.01), ..params(1.0, 64) };
    let a = run_nrf(&g0.reflected(), &p).unwrap();
    let b = run_nrf(&g0, &p).unwrap();
    for (x, y) in a.metrics.iter().zip(&b.metrics) {
        let d = x.sup_distance(&y.reflected());
        assert!(d <= 1e-10, "{d:e}");
    }
}

#[test]
fn short_time_rate_matches_ricci_tensor() {
    let q = Quadrature::new(3, 64).unwrap();
    let phi = |x: f64| 1.04 + 0.03 * x.sin().powi(2);
    let psi = |x: f64| x.sin() * (1.0 + 0.04 * (2.0 * x).cos());
    let prof = Profiles { n: 3, phi: &phi, psi: &psi };
    let at = |f: &dyn Fn(f64) -> f64| q.nodes().iter().map(|x| f(*x)).collect::<Vec<_>>();
    let g0 = ReducedMetric::from_profiles(&q, at(&phi), at(&psi)).unwrap();
    let r_avg = prof.scalar_avg();
    assert!((r_avg - curvature(&g0).unwrap().scalar_avg).abs() < 1e-6);

    let mut errs = Vec::new();
    for dt in [4e-3, 2e-3, 1e-3] {
        let p = FlowParams { t_end: dt, sample_every: dt, resolution: 64, adapt_tol: 1e-12, dt_init: dt / 8.0, ..Default::default() };
        let g = run_nrf(&g0, &p).unwrap().final_metric().clone();
        let psi_t = g.psi();
        let psi_0 = g0.psi();
        let mut worst: f64 = 0.0;
        for (i, x) in q.nodes().iter().enumerate() {
            let (df, dp) = prof.nrf_rates(*x, r_avg);
            worst = worst.max(((g.phi()[i] - g0.phi()[i]) / dt - df).abs());
            worst = worst.max(((psi_t[i] - psi_0[i]) / dt - dp).abs());
        }
        errs.push(worst);
    }
    assert!(errs[2] < 2e-3, "{errs:?}");
    for w in errs.windows(2) {
        let ratio = w[0] / w[1];
        assert!((1.8..2.2).contains(&ratio), "{errs:?}");
    }
}

#[test]
fn deturck_field_matches_christoffel_oracle() {
    let q = Quadrature::new(3, 64).unwrap();
    let phi = |_: f64| 1.01;
    let psi = |x: f64| x.sin() * (1.0 + 0.01 * (2.0 * x).cos());
    let at = |f: &dyn Fn(f64) -> f64| q.nodes().iter().map(|x| f(*x)).collect::<Vec<_>>();
    let g = ReducedMetric::from_profiles(&q, at(&phi), at(&psi)).unwrap();
    let w = deturck_field(&g, &ReducedMetric::round(&q)).unwrap();
    for (i, x) in q.nodes().iter().enumerate() {
        let want = deturck_oracle(3, &phi, &psi, *x);
        assert!((w[i] - want).abs() < 1e-6, "x={x}: {} vs {want}", w[i]);
    }
}

#[test]
fn field_flow_matches_rk4() {
    let q = Quadrature::new(3, 48).unwrap();
    let omega = |t: f64| 0.3 + 0.2 * t - 0.1 * t * t;
    let profile: Vec<f64> = q.cos_nodes().iter().map(|t| omega(*t)).collect();
    let d = integrate_field(&q, |_| profile.clone(), &[0.0, 1.5], 1e-12).unwrap();
    let theta = d[1].theta();
    for (i, x) in q.nodes().iter().enumerate() {
        let want = rk4_axis_flow(&omega, *x, 1.5, 4000);
        assert!((theta[i] - want).abs() < 1e-8, "x={x}: {} vs {want}", theta[i]);
    }
}

#[test]
fn deturck_diffeo_is_bounded_by_field_integral() {
    let q = Quadrature::new(3, 64).unwrap();
    let g0 = sample_pinched(&q, 7, 0.05).unwrap();
    let bg = ReducedMetric::round(&q);
    let p = FlowParams { sample_every: 0.05, ..params(2.0, 64) };
    let tr = run_nrdf(&g0, &bg, &p).unwrap();
    let ds = integrate_diffeo(&tr, &bg).unwrap();
    let sups: Vec<f64> = tr.metrics.iter().map(|g| sup_abs(&deturck_field(g, &bg).unwrap())).collect();
    let mut integral = 0.0;
    for k in 1..tr.times.len() {
        integral += 0.5 * (tr.times[k] - tr.times[k - 1]) * (sups[k] + sups[k - 1]);
        assert!(ds[k].distance_from_identity() <= 1.02 * integral + 1e-12, "t={}", tr.times[k]);
    }
}

#[test]
fn linearized_rates() {
    let p = FlowParams { sample_every: 0.25, ..params(2.0, 48) };
    for n in [3, 4] {
        let q = Quadrature::new(n, 48).unwrap();
        let bg = ReducedMetric::round(&q);
        let tilt = conformal(&q, |t| 1.0 + 1e-4 * t);
        let tr = run_nrdf(&tilt, &bg, &p).unwrap();
        let b: Vec<f64> = tr.metrics.iter().map(|g| decompose(g, &bg).unwrap().b_axis()).collect();
        let rate = fit_rate(&tr.times, &b);
        assert!((rate - (n as f64 - 2.0)).abs() <= 0.05, "n={n}: b rate {rate}");
    }

    let q = Quadrature::new(3, 48).unwrap();
    let bg = ReducedMetric::round(&q);

    let quad = conformal(&q, |t| 1.0 + 1e-3 * (t * t - 0.25));
    let tr = run_nrdf(&quad, &bg, &p).unwrap();
    let c: Vec<f64> = tr.metrics.iter().map(|g| decompose(g, &bg).unwrap().check_l2().unwrap()).collect();
    let rate = -fit_rate(&tr.times, &c);
    assert!(rate >= 3.9, "trace j=2 rate {rate}");
}

#[test]
fn conjugacy_residual_refines() {
    let mut worst = Vec::new();
    for (n_res, dt) in [(64, 0.08), (128, 0.04), (256, 0.02)] {
        let q = Quadrature::new(3, n_res).unwrap();
        let g0 = sample_pinched(&q, 7, 0.05).unwrap();
        let p = FlowParams { fixed_dt: Some(dt), sample_every: 0.5, adapt_tol: 1e-9, ..params(2.0, n_res) };
        let res = conjugacy_residual(&g0, &ReducedMetric::round(&q), &p).unwrap();
        worst.push(res.iter().map(|r| r.1).fold(0.0, f64::max));
    }
    for w in worst.windows(2) {
        let order = (w[0] / w[1]).log2();
        assert!(order >= 2.5, "{worst:?}");
    }
}

#[test]
fn entry_time_cases() {
    let q = Quadrature::new(3, 48).unwrap();
    let round = run_nrf(&ReducedMetric::round(&q), &params(1.0, 48)).unwrap();
    assert_eq!(entry_time(&round, &[1e-8, 1e-8], 1e-8).unwrap(), 0.0);

    let g0 = sample_pinched(&q, 7, 0.05).unwrap();
    let tr = run_nrf(&g0, &FlowParams { sample_every: 0.25, ..params(3.0, 48) }).unwrap();
    let loose = entry_time(&tr, &[0.05, 0.1], 1.0).unwrap();
    assert!(loose.is_finite() && loose > 0.0);
    for (t, g) in tr.times.iter().zip(&tr.metrics) {
        let devs = curvature_deviation_profile(g, 1).unwrap();
        if *t >= loose {
            assert!(devs[0] <= 0.05 && devs[1] <= 0.1);
        }
    }
    let tight = entry_time(&tr, &[0.01, 0.1], 1.0).unwrap();
    assert!(tight >= loose);
    assert_eq!(entry_time(&tr, &[1e-13], 1.0).unwrap(), f64::INFINITY);
    assert!(entry_time(&tr, &[], 1.0).is_err());
    assert!(entry_time(&tr, &[0.1, 0.1, 0.1, 0.1], 1.0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 6, ..ProptestConfig::default() })]

    #[test]
    fn short_flow_keeps_volume_and_symmetry(c2 in -0.03f64..0.03, c3 in -0.03f64..0.03, c4 in -0.03f64..0.03) {
        let q = Quadrature::new(3, 32).unwrap();
        let g0 = perturbed_round(&q, &[c2, c3, c4]).unwrap();
        let p = FlowParams { fixed_dt: Some(0.005), ..params(0.4, 32) };
        let a = run_nrf(&g0, &p).unwrap();
        let b = run_nrf(&g0.reflected(), &p).unwrap();
        for (x, y) in a.metrics.iter().zip(&b.metrics) {
            let dv = (volume(x) - q.omega_n()).abs();
            prop_assert!(dv <= 1e-7, "{dv:e}");
            prop_assert!(x.sup_distance(&y.reflected()) <= 1e-10);
        }
        let d0 = curvature(&g0).unwrap().round_defect();
        let d1 = curvature(a.final_metric()).unwrap().round_defect();
        prop_assert!(d1 <= d0 + 1e-12);
    }

    #[test]
    fn field_flow_fixes_poles_and_stays_monotone(a in -0.5f64..0.5, b in -0.5f64..0.5) {
        let q = Quadrature::new(3, 24).unwrap();
        let profile: Vec<f64> = q.cos_nodes().iter().map(|t| a + b * t).collect();
        let d = integrate_field(&q, |_| profile.clone(), &[0.0, 1.0], 1e-10).unwrap();
        let theta = d[1].theta();
        prop_assert!(theta.windows(2).all(|w| w[1] > w[0]));
        prop_assert!(theta[0] > 0.0 && *theta.last().unwrap() < PI);
        prop_assert!(d[1].derivative().iter().all(|v| *v > 0.0));
    }
}
