use proptest::prelude::*;
use wishart_ldp::laplace::log_laplace_y;
use wishart_ldp::ldp::{regime_constants, LaplaceExponent};
use wishart_ldp::model::ModelParams;
use wishart_ldp::smile::smile_point;

fn interior(p: &ModelParams, raw: (f64, f64), shrink: f64) -> Option<Vec<f64>> {
    let r = p.domain_bounding_radius();
    let th = vec![raw.0 * r * shrink, raw.1 * r * shrink];
    (p.in_domain(&th).min_eig_phi > 1e-3).then_some(th)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn long_time_error_decreases(raw in (-1.0..1.0f64, -1.0..1.0f64)) {
        let p = ModelParams::smile_example();
        let Some(th) = interior(&p, raw, 1.0) else { return Ok(()); };
        let l1 = LaplaceExponent::new(&p, 1.0).value(&th).finite().unwrap();
        let errs: Vec<f64> = [25.0, 50.0, 100.0, 200.0]
            .iter()
            .map(|&t| (log_laplace_y(&p, &th, t).value().unwrap() / t - l1).abs())
            .collect();
        prop_assert!(errs.windows(2).all(|w| w[1] <= w[0]), "{errs:?}");
    }

    #[test]
    fn legendre_duality_at_gradient_points(raw in (-1.0..1.0f64, -1.0..1.0f64)) {
        let p = ModelParams::smile_example();
        let Some(th) = interior(&p, raw, 0.5) else { return Ok(()); };
        let lam = LaplaceExponent::new(&p, 1.0);
        let y = lam.gradient(&th).unwrap();
        let expected = th[0] * y[0] + th[1] * y[1] - lam.value(&th).finite().unwrap();
        let rate = lam.rate(&y, None).unwrap();
        prop_assert!((rate.value - expected).abs() <= 1e-7 * (1.0 + expected.abs()),
            "rate {} vs {}", rate.value, expected);
    }

    #[test]
    fn smile_identity_holds(y in -0.4..0.5f64) {
        let p = ModelParams::smile_example();
        let rc = regime_constants(&p).unwrap();
        if let Ok(sp) = smile_point(&p, &rc, y) {
            let s = sp.sigma_inf;
            prop_assert!(s > 0.0);
            prop_assert!((0.5 * (s / 2.0 - y / s).powi(2) - sp.l).abs() <= 1e-8);
        }
    }
}
