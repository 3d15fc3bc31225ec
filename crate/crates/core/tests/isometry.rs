use std::sync::Arc;

use proptest::prelude::*;
use ricci_lab::diffeo::{pullback, DiffeoProfile};
use ricci_lab::gauge::{admissible_diffeo, GaugeVector};
use ricci_lab::isometry::*;
use ricci_lab::metric::*;
use ricci_lab::sample::sample_pinched;
use ricci_lab::sphere::Quadrature;

fn trig_diffeo(q: &Arc<Quadrature>, b: &[f64]) -> DiffeoProfile {
    let theta: Vec<f64> = q
        .nodes()
        .iter()
        .map(|x| x + b.iter().enumerate().map(|(k, c)| c * ((k + 1) as f64 * x).sin()).sum::<f64>())
        .collect();
    DiffeoProfile::from_theta(q, &theta).unwrap()
}

fn mobius(q: &Arc<Quadrature>, e: f64) -> DiffeoProfile {
    admissible_diffeo(&GaugeVector::axis(q.dim(), e), &ReducedMetric::round(q)).unwrap()
}

#[test]
fn round_metric_maps_to_identity() {
    for n in [3, 4] {
        let q = Quadrature::new(n, 48).unwrap();
        let r = build_isometry(&ReducedMetric::round(&q)).unwrap();
        assert!(r.residual <= 1e-12, "{:e}", r.residual);
        assert!(r.diffeo.distance_from_identity() <= 1e-12);
    }
}

#[test]
fn pulled_back_round_metric_recovers_the_map() {
    let mut residuals = Vec::new();
    for res in [64, 128, 256] {
        let q = Quadrature::new(3, res).unwrap();
        let rho = mobius(&q, 0.05);
        let g = pullback(&ReducedMetric::round(&q), &rho).unwrap();
        let r = build_isometry(&g).unwrap();
        assert!(r.diffeo.distance(&rho) <= 1e-8, "{:e}", r.diffeo.distance(&rho));
        residuals.push(r.residual);
    }
    assert!(residuals[1] <= 1e-6);
    // spectrally converged: the residual sits at a rounding floor that grows
    // with the differentiation matrix, so halving is asked above that floor
    for w in residuals.windows(2) {
        assert!(w[1] <= (0.5 * w[0]).max(1e-10), "{residuals:?}");
    }
}

#[test]
fn composing_with_the_inverse_is_a_round_isometry() {
    let q = Quadrature::new(3, 96).unwrap();
    let rho = trig_diffeo(&q, &[0.1, -0.05, 0.02]);
    let g = pullback(&ReducedMetric::round(&q), &rho).unwrap();
    let r = build_isometry(&g).unwrap();
    let iso = r.diffeo.compose(&rho.inverse().unwrap());
    let back = pullback(&ReducedMetric::round(&q), &iso).unwrap();
    assert!(back.sup_distance(&ReducedMetric::round(&q)) <= 1e-8);
}

#[test]
fn non_round_input_is_rejected() {
    let q = Quadrature::new(3, 48).unwrap();
    let g = sample_pinched(&q, 7, 0.05).unwrap();
    assert!(matches!(build_isometry(&g), Err(ricci_lab::Error::Precondition(_))));
}

#[test]
fn nearly_round_residual_tracks_the_defect() {
    let q = Quadrature::new(3, 64).unwrap();
    let p: Vec<f64> = q.cos_nodes().iter().map(|t| 1.0 + 1e-6 * (t * t - 0.2)).collect();
    let g = normalize(&ReducedMetric::from_warp(&q, p.clone(), p).unwrap()).unwrap();
    let defect = curvature(&g).unwrap().round_defect();
    let r = build_isometry(&g).unwrap();
    assert!(r.residual <= 10.0 * defect, "{:e} vs {defect:e}", r.residual);
}

#[test]
fn frame_at_the_pole() {
    let q = Quadrature::new(3, 32).unwrap();
    let f = gram_schmidt_frame(&ReducedMetric::round(&q)).unwrap();
    for (i, v) in f.vectors.iter().enumerate() {
        for (j, a) in v.iter().enumerate() {
            assert!((a - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
        }
    }
    let f = gram_schmidt_frame(&ReducedMetric::round_scaled(&q, 2.0)).unwrap();
    assert!(f.vectors.iter().enumerate().all(|(i, v)| (v[i] - 0.5).abs() < 1e-12));

    // ρ*σ at the pole is ρ'(0)² times the flat metric
    let rho = mobius(&q, 0.1);
    let g = pullback(&ReducedMetric::round(&q), &rho).unwrap();
    let f = gram_schmidt_frame(&g).unwrap();
    let expected = (-0.05f64).exp();
    assert!(f.vectors.iter().enumerate().all(|(i, v)| (v[i] - expected).abs() < 1e-8));

    let bad = ReducedMetric::round(&q).scaled(0.0);
    assert!(gram_schmidt_frame(&bad).is_err());
}

#[test]
fn continuity_modulus_is_stable_under_refinement() {
    let q = Quadrature::new(3, 64).unwrap();
    let path = |k: usize| -> Vec<ReducedMetric> {
        (0..=k)
            .map(|i| pullback(&ReducedMetric::round(&q), &mobius(&q, 0.1 * i as f64 / k as f64)).unwrap())
            .collect()
    };
    let coarse = continuity_modulus(&path(4)).unwrap();
    let fine = continuity_modulus(&path(8)).unwrap();
    assert!(coarse > 0.0);
    assert!((fine / coarse - 1.0).abs() <= 0.2, "{coarse} {fine}");

    let same = vec![ReducedMetric::round(&q); 3];
    assert_eq!(continuity_modulus(&same).unwrap(), 0.0);
    assert!(continuity_modulus(&same[..1]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]
    #[test]
    fn random_axis_maps_are_recovered(b1 in -0.2f64..0.2, b2 in -0.1f64..0.1, b3 in -0.05f64..0.05) {
        let q = Quadrature::new(3, 64).unwrap();
        let rho = trig_diffeo(&q, &[b1, b2, b3]);
        let g = pullback(&ReducedMetric::round(&q), &rho).unwrap();
        let r = build_isometry(&g).unwrap();
        prop_assert!(r.residual <= 1e-9);
        prop_assert!(r.diffeo.distance(&rho) <= 1e-9);
    }
}
