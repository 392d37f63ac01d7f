use proptest::prelude::*;

use udp_core::mechanisms::{
    calibrate_sigma, compare_group_accounting, els_mechanism, event_delta, event_epsilon,
    uls_mechanism, ElsEventSpec, EventFamily, EventSpec, GroupPrivacyRule, UlsEventSpec,
    CALIBRATION_TOLERANCE,
};
use udp_core::pld::{
    build_pld, composed_pair, symmetric_delta, AccountantConfig, Direction, MoGMechanism,
    PrivacyLossDistribution, PrivacyParams,
};
use udp_core::Error;

fn phi(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

fn density(x: f64, mean: f64, sigma: f64) -> f64 {
    let d = (x - mean) / sigma;
    (-0.5 * d * d).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
}

/// `∫ (p - e^ε q)₊` by the trapezoid rule.
fn hockey_stick(p: impl Fn(f64) -> f64, q: impl Fn(f64) -> f64, eps: f64, lo: f64, hi: f64) -> f64 {
    let n = 200_000;
    let h = (hi - lo) / n as f64;
    let e = eps.exp();
    (0..=n)
        .map(|i| {
            let x = lo + i as f64 * h;
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            w * (p(x) - e * q(x)).max(0.0)
        })
        .sum::<f64>()
        * h
}

fn mixture(sigma: f64, comps: &[(f64, f64)]) -> impl Fn(f64) -> f64 + '_ {
    move |x| comps.iter().map(|&(c, w)| w * density(x, c, sigma)).sum()
}

#[test]
fn single_round_matches_quadrature() {
    let sigma = 1.3;
    let comps = [(0.0, 0.5), (1.0, 0.3), (2.0, 0.2)];
    let mech = MoGMechanism::new(sigma, vec![0.0, 1.0, 2.0], vec![0.5, 0.3, 0.2]).unwrap();
    let pair = composed_pair(&mech, 1, &AccountantConfig::default()).unwrap();
    let p = mixture(sigma, &comps);
    let q = |x: f64| density(x, 0.0, sigma);
    for eps in [0.0, 0.3, 1.0, 1.7] {
        let add = hockey_stick(&p, q, eps, -15.0, 17.0);
        let remove = hockey_stick(q, &p, eps, -15.0, 17.0);
        assert!((pair.add.delta_at_epsilon(eps) - add).abs() < 1e-8, "add at {eps}");
        assert!((pair.remove.delta_at_epsilon(eps) - remove).abs() < 1e-8, "remove at {eps}");
    }
}

#[test]
fn gaussian_closed_form_on_fine_grid() {
    let cfg = AccountantConfig::fine();
    for sigma in [0.7, 3.0] {
        let mech = MoGMechanism::gaussian(sigma, 1.0).unwrap();
        let pld = build_pld(&mech, Direction::Add, &cfg).unwrap();
        for eps in [0.0, 0.25, 1.5] {
            let expected = phi(0.5 / sigma - eps * sigma) - eps.exp() * phi(-0.5 / sigma - eps * sigma);
            assert!((pld.delta_at_epsilon(eps) - expected).abs() < 1e-10);
        }
    }
}

#[test]
fn huge_noise_is_nearly_private() {
    let spec = EventSpec::Uls(UlsEventSpec {
        sigma: 1e9,
        q: 0.1,
        steps: 100,
    });
    let d = event_delta(&spec, 1.0, &AccountantConfig::default()).unwrap();
    assert!(d < 1e-12, "{d}");
}

#[test]
fn single_example_els_is_uls() {
    let els = els_mechanism(&ElsEventSpec {
        sigma: 1.1,
        p: 0.3,
        group_size: 1,
        steps: 1,
    })
    .unwrap();
    let uls = uls_mechanism(&UlsEventSpec {
        sigma: 1.1,
        q: 0.3,
        steps: 1,
    })
    .unwrap();
    assert_eq!(els, uls);
}

#[test]
fn epsilon_and_delta_are_inverse() {
    let cfg = AccountantConfig::default();
    let spec = EventSpec::Els(ElsEventSpec {
        sigma: 2.0,
        p: 0.02,
        group_size: 4,
        steps: 300,
    });
    let eps = event_epsilon(&spec, 1e-6, &cfg).unwrap();
    assert!(event_delta(&spec, eps, &cfg).unwrap() <= 1e-6);
    assert!(event_delta(&spec, eps - 1e-3, &cfg).unwrap() > 1e-6);
}

#[test]
fn pld_json_round_trip() {
    let mech = MoGMechanism::new(1.0, vec![0.0, 1.0], vec![0.9, 0.1]).unwrap();
    let pld = build_pld(&mech, Direction::Remove, &AccountantConfig::default())
        .unwrap()
        .compose(5, &AccountantConfig::default())
        .unwrap();
    let back = PrivacyLossDistribution::from_json(&pld.to_json()).unwrap();
    assert_eq!(pld, back);
}

#[test]
fn calibration_round_trip() {
    let cfg = AccountantConfig::default();
    let target = PrivacyParams::new(1.0, 1e-6).unwrap();
    for family in [
        EventFamily::Uls { q: 0.05, steps: 200 },
        EventFamily::Els {
            p: 0.01,
            group_size: 8,
            steps: 200,
        },
    ] {
        let sigma = calibrate_sigma(&family, target, &cfg).unwrap();
        let at = |s: f64| symmetric_delta(&family.with_sigma(s).mechanism().unwrap(), 200, 1.0, &cfg).unwrap();
        assert!(at(sigma) <= target.delta);
        assert!(at(sigma / (1.0 + 2.0 * CALIBRATION_TOLERANCE)) > target.delta);
    }
}

#[test]
fn calibration_reports_exhausted_bracket() {
    let target = PrivacyParams::new(0.0, 1e-300).unwrap();
    let err = calibrate_sigma(&EventFamily::Uls { q: 1.0, steps: 1 }, target, &AccountantConfig::default());
    assert!(matches!(err, Err(Error::BracketExhausted { .. })), "{err:?}");
}

#[test]
fn dominance_by_point_mass() {
    // Bin(K, p) is stochastically dominated by the point mass at K
    let cfg = AccountantConfig::default();
    let (k, sigma) = (4, 2.0);
    let bin = els_mechanism(&ElsEventSpec {
        sigma,
        p: 0.2,
        group_size: k,
        steps: 1,
    })
    .unwrap();
    let point = MoGMechanism::gaussian(sigma, k as f64).unwrap();
    let a = composed_pair(&bin, 3, &cfg).unwrap();
    let b = composed_pair(&point, 3, &cfg).unwrap();
    for i in 0..40 {
        let eps = i as f64 * 0.1;
        assert!(a.delta_at_epsilon(eps) <= b.delta_at_epsilon(eps) + 1e-12, "eps {eps}");
    }
}

#[test]
fn quasi_convexity_of_mixtures() {
    // P = λ P1 + (1-λ) P2 against the shared Q
    let sigma = 1.0;
    let q = |x: f64| density(x, 0.0, sigma);
    let p1 = [(0.0, 0.6), (1.0, 0.4)];
    let p2 = [(0.0, 0.9), (3.0, 0.1)];
    let lambda = 0.35;
    let mix: Vec<(f64, f64)> = p1
        .iter()
        .map(|&(c, w)| (c, lambda * w))
        .chain(p2.iter().map(|&(c, w)| (c, (1.0 - lambda) * w)))
        .collect();
    for eps in [0.0, 0.5, 1.0, 2.0] {
        let h_mix = hockey_stick(mixture(sigma, &mix), q, eps, -12.0, 15.0);
        let h1 = hockey_stick(mixture(sigma, &p1), q, eps, -12.0, 15.0);
        let h2 = hockey_stick(mixture(sigma, &p2), q, eps, -12.0, 15.0);
        assert!(h_mix <= h1.max(h2) + 1e-12);
    }
}

#[test]
fn tight_accounting_beats_tuned_black_box() {
    let cfg = AccountantConfig::default();
    let rows = compare_group_accounting(2.0, 0.02, 200, 1e-6, &[1, 2, 4, 8], GroupPrivacyRule::GeometricSum, &cfg)
        .unwrap();
    for r in &rows {
        if let Some(tuned) = r.blackbox_tuned_epsilon {
            assert!(r.mog_epsilon <= tuned + 1e-9, "G={}: {} > {tuned}", r.group_size, r.mog_epsilon);
        }
    }
}

#[test]
fn epsilon_monotone_in_event_parameters() {
    let cfg = AccountantConfig::default();
    let eps = |sigma: f64, p: f64, k: u32, t: u64| {
        event_epsilon(
            &EventSpec::Els(ElsEventSpec {
                sigma,
                p,
                group_size: k,
                steps: t,
            }),
            1e-6,
            &cfg,
        )
        .unwrap()
    };
    let base = eps(2.0, 0.01, 4, 100);
    assert!(eps(2.0, 0.01, 8, 100) >= base);
    assert!(eps(2.0, 0.02, 4, 100) >= base);
    assert!(eps(2.0, 0.01, 4, 200) >= base);
    assert!(eps(3.0, 0.01, 4, 100) <= base);
}

fn els_strategy() -> impl Strategy<Value = (f64, f64, u32)> {
    (0.5f64..6.0, 0.001f64..0.5, 1u32..=8)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn mass_is_conserved((sigma, p, k) in els_strategy(), t in 1u64..50) {
        let cfg = AccountantConfig::default();
        let mech = els_mechanism(&ElsEventSpec { sigma, p, group_size: k, steps: t }).unwrap();
        let pair = composed_pair(&mech, t, &cfg).unwrap();
        for pld in [&pair.add, &pair.remove] {
            prop_assert!((pld.total_mass() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn delta_non_increasing_in_epsilon((sigma, p, k) in els_strategy(), mut eps in prop::collection::vec(0.0f64..5.0, 12)) {
        let cfg = AccountantConfig::default();
        let mech = els_mechanism(&ElsEventSpec { sigma, p, group_size: k, steps: 4 }).unwrap();
        let pair = composed_pair(&mech, 4, &cfg).unwrap();
        eps.sort_by(f64::total_cmp);
        for w in eps.windows(2) {
            prop_assert!(pair.delta_at_epsilon(w[1]) <= pair.delta_at_epsilon(w[0]));
        }
    }

    #[test]
    fn delta_non_increasing_in_sigma((sigma, p, k) in els_strategy(), eps in 0.0f64..3.0) {
        let cfg = AccountantConfig::default();
        let d = |s: f64| {
            let mech = els_mechanism(&ElsEventSpec { sigma: s, p, group_size: k, steps: 5 }).unwrap();
            symmetric_delta(&mech, 5, eps, &cfg).unwrap()
        };
        prop_assert!(d(sigma * 1.25) <= d(sigma) + 1e-12);
    }

    #[test]
    fn delta_non_decreasing_in_steps((sigma, p, k) in els_strategy(), eps in 0.0f64..3.0, t in 1u64..30) {
        let cfg = AccountantConfig::default();
        let mech = els_mechanism(&ElsEventSpec { sigma, p, group_size: k, steps: t }).unwrap();
        prop_assert!(symmetric_delta(&mech, t + 1, eps, &cfg).unwrap() + 1e-12 >= symmetric_delta(&mech, t, eps, &cfg).unwrap());
    }

    #[test]
    fn refinement_does_not_increase_delta((sigma, p, k) in els_strategy(), i in 0u32..300, t in 1u64..6) {
        let coarse = AccountantConfig::default().with_grid_spacing(2e-2);
        let fine = AccountantConfig::default().with_grid_spacing(1e-2);
        let eps = i as f64 * 1e-2;
        let mech = els_mechanism(&ElsEventSpec { sigma, p, group_size: k, steps: t }).unwrap();
        let a = symmetric_delta(&mech, t, eps, &coarse).unwrap();
        let b = symmetric_delta(&mech, t, eps, &fine).unwrap();
        prop_assert!(b <= a + 1e-12, "fine {} > coarse {}", b, a);
    }
}
