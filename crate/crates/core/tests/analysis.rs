use udp_core::heuristics::{estimate_and_double, feasible_allocations, Decision, DoublingConfig};
use udp_core::pld::{AccountantConfig, MoGMechanism, PrivacyParams};
use udp_core::rdp::{check_group_scaling, renyi_mog, renyi_mog_reverse};
use udp_core::sim::{generate_synthetic, SyntheticSpec};
use udp_core::variance::{
    els_variance_at, uls_variance_at, variance_curves, BudgetSetting, LUlsRule,
};

fn bernoulli(q: f64, sigma: f64) -> MoGMechanism {
    MoGMechanism::new(sigma, vec![0.0, 1.0], vec![1.0 - q, q]).unwrap()
}

#[test]
fn renyi_matches_quadrature() {
    // direct quadrature of E_Q[(P/Q)^α]
    let sigma: f64 = 0.9;
    let mech = MoGMechanism::new(sigma, vec![0.0, 1.0, 2.0], vec![0.6, 0.3, 0.1]).unwrap();
    for alpha in [2u32, 3, 5] {
        let n = 400_000;
        let (lo, hi) = (-30.0, 40.0);
        let h = (hi - lo) / n as f64;
        let mut s = 0.0;
        for i in 0..=n {
            let x = lo + i as f64 * h;
            let q = (-x * x / (2.0 * sigma * sigma)).exp();
            let ratio: f64 = [(0.0, 0.6), (1.0, 0.3), (2.0, 0.1)]
                .iter()
                .map(|&(c, w): &(f64, f64)| w * ((2.0 * x * c - c * c) / (2.0 * sigma * sigma)).exp())
                .sum();
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            s += w * q * ratio.powi(alpha as i32);
        }
        let integral = s * h / (sigma * (2.0 * std::f64::consts::PI).sqrt());
        let expected = integral.ln() / (alpha - 1) as f64;
        let got = renyi_mog(&mech, alpha).unwrap();
        assert!((got - expected).abs() < 1e-9 * expected.max(1.0), "alpha {alpha}: {got} vs {expected}");
    }
}

#[test]
fn renyi_is_ordered() {
    for (q, sigma) in [(0.1, 0.5), (0.5, 1.0), (0.01, 2.0)] {
        let mech = bernoulli(q, sigma);
        let values: Vec<f64> = (2..=8).map(|a| renyi_mog(&mech, a).unwrap()).collect();
        assert!(values[0] >= 0.0);
        assert!(values.windows(2).all(|w| w[1] >= w[0]));
        let noisier = renyi_mog(&bernoulli(q, sigma * 1.5), 4).unwrap();
        assert!(noisier < values[2]);
    }
}

#[test]
fn reverse_direction_is_non_negative() {
    let r = renyi_mog_reverse(&bernoulli(0.3, 1.0), 3).unwrap();
    assert!(r > 0.0);
}

#[test]
fn group_scaling_spot_checks() {
    for (alpha, k, p, sigma) in [(2, 2, 0.5, 0.5), (8, 16, 0.01, 1.0), (3, 4, 0.1, 2.0)] {
        let c = check_group_scaling(alpha, k, p, sigma).unwrap();
        assert!(c.holds, "{c:?}");
    }
}

fn setting(epsilon: f64, budget: u64) -> BudgetSetting {
    BudgetSetting {
        users: 1024,
        examples_per_user: 32,
        steps: 100,
        budget,
        cohort: 16,
        g_els: 32,
        dim: 3,
        l_els: 10.0,
        l_uls: 10.0,
        target: PrivacyParams::new(epsilon, 1e-6).unwrap(),
    }
}

#[test]
fn variance_identity_is_algebraic() {
    let s = BudgetSetting {
        l_uls: 4.0,
        ..setting(1.0, 64)
    };
    for (se, su) in [(1.0, 0.5), (3.0, 0.7), (0.2, 2.0)] {
        let lhs = els_variance_at(&s, se) <= uls_variance_at(&s, su);
        let rhs = s.l_els * se <= s.g_uls() * s.l_uls * su;
        assert_eq!(lhs, rhs);
    }
}

#[test]
fn variance_decreases_with_epsilon() {
    let cfg = AccountantConfig::default();
    let grid: Vec<_> = [0.25, 1.0, 4.0].iter().map(|&e| setting(e, 64)).collect();
    let rows = variance_curves(&grid, &cfg).unwrap();
    for w in rows.windows(2) {
        assert!(w[1].var_els <= w[0].var_els);
        assert!(w[1].var_uls_equal <= w[0].var_uls_equal);
        assert!(w[1].var_uls_diverse <= w[0].var_uls_diverse);
    }
}

#[test]
fn diverse_users_shrink_the_bound() {
    assert_eq!(LUlsRule::Equal.apply(10.0, 16.0), 10.0);
    assert_eq!(LUlsRule::InverseSqrt.apply(10.0, 16.0), 2.5);
}

#[test]
fn doubling_reaches_the_budget() {
    let data = generate_synthetic(&SyntheticSpec {
        seed: 4,
        users: 64,
        ..SyntheticSpec::default()
    })
    .unwrap();
    let theta = vec![0.0; data.dim()];
    for (budget, g0, m0) in [(256, 1, 1), (64, 2, 4), (8, 8, 1)] {
        let cfg = DoublingConfig {
            g0,
            m0,
            budget,
            target: PrivacyParams::new(2.0, 1e-6).unwrap(),
            steps: 50,
            probe_users: 32,
            seed: 9,
        };
        let out = estimate_and_double(&data, &theta, &cfg, &AccountantConfig::default()).unwrap();
        assert_eq!(out.group_size * out.cohort, budget);
        assert!(out.cohort <= data.num_users());
        assert_eq!(out.trace.len() as u32, (budget / (g0 * m0)).trailing_zeros());
        for step in &out.trace {
            if step.decision == Decision::ForcedDoubleGroup {
                assert!(2 * step.cohort > data.num_users());
            }
        }
    }
}

#[test]
fn doubling_is_deterministic() {
    let data = generate_synthetic(&SyntheticSpec::default()).unwrap();
    let cfg = DoublingConfig {
        g0: 1,
        m0: 1,
        budget: 128,
        target: PrivacyParams::new(1.0, 1e-6).unwrap(),
        steps: 64,
        probe_users: 128,
        seed: 3,
    };
    let theta = vec![0.0; data.dim()];
    let a = estimate_and_double(&data, &theta, &cfg, &AccountantConfig::default()).unwrap();
    let b = estimate_and_double(&data, &theta, &cfg, &AccountantConfig::default()).unwrap();
    assert_eq!(a, b);
    assert!(feasible_allocations(128, 16, 256).contains(&(a.group_size, a.cohort)));
}
