use ddlab_core::experiments::{bound_rhs, verify_bound, BoundStatus, Scenario};
use ddlab_core::model::ModelConstants;
use proptest::prelude::*;

fn constants(m: f64, q: f64, c0: f64) -> ModelConstants {
    ModelConstants {
        m_minus_half: m / 2.0,
        m_n: vec![0.0, m / 4.0, m / 2.0],
        m,
        c0,
        opnorm_q: q,
        opnorm_hs: 0.0,
        sup_hc: c0 - 1.0,
        l: 0,
    }
}

proptest! {
    #[test]
    fn tight_bound_never_exceeds_simple_bound(
        m in 0.0f64..50.0, q in 0.0f64..3.0, c0 in 1.0f64..100.0,
        g in 0.0f64..0.01, period in 0.001f64..1.0, t in 0.0f64..5.0,
    ) {
        let k = constants(m, q, c0);
        if let Ok((tight, simple)) = bound_rhs(&k, g, period, t) {
            prop_assert!(tight <= simple);
        }
    }

    #[test]
    fn bound_grows_with_each_parameter(
        m in 1.0f64..20.0, c0 in 1.0f64..50.0, g in 1e-5f64..1e-3, period in 0.01f64..0.2, k in 1u32..20,
    ) {
        let kc = constants(m, 1.0, c0);
        let t = k as f64 * period;
        let base = bound_rhs(&kc, g, period, t).unwrap().0;
        prop_assert!(bound_rhs(&kc, g * 1.1, period, t).unwrap().0 > base);
        prop_assert!(bound_rhs(&kc, g, period, t + 0.5 * period).unwrap().0 > base);
        // growing T at a fixed number of periods
        prop_assert!(bound_rhs(&kc, g, period * 1.1, t * 1.1).unwrap().0 > base);
    }
}

/// Measured deviations of the default scenario, kept as regression values
/// with 5% tolerance.
#[test]
fn default_scenario_regression_values() {
    let sc = Scenario::default();
    for (t, want) in [(0.1, 3.1814e-6), (0.5, 1.5749e-5), (1.0, 3.0518e-5)] {
        let r = verify_bound(&sc, t).unwrap();
        assert_eq!(r.status, BoundStatus::Pass);
        assert!((r.lhs_fine - want).abs() <= 0.05 * want, "t = {t}: {}", r.lhs_fine);
        let (tight, simple) = r.recompute_rhs().unwrap();
        assert!((tight - r.rhs_tight.unwrap()).abs() <= 1e-12 * tight);
        assert!((simple - r.rhs_simple.unwrap()).abs() <= 1e-12 * simple);
    }
}

#[test]
fn deviation_grows_along_period_multiples() {
    let sc = Scenario::default();
    let mut prev = 0.0;
    for k in 1..=6 {
        let r = verify_bound(&sc, 0.1 * k as f64).unwrap();
        assert!(r.lhs_fine >= prev);
        prev = r.lhs_fine;
    }
}
