use super::*;
use crate::ambiguity::membership;
use crate::rng;
use alloc::vec;
use proptest::prelude::*;
use rand::Rng as _;

fn random_gmm(r: &mut crate::rng::Rng, k: usize) -> Gmm {
    let raw: Vec<f64> = (0..k).map(|_| r.random_range(0.05..1.0)).collect();
    let s: f64 = raw.iter().sum();
    Gmm::new(
        raw.iter().map(|w| w / s).collect(),
        (0..k).map(|_| r.random_range(-2.0..2.0)).collect(),
        (0..k).map(|_| r.random_range(0.1..1.5)).collect(),
    )
    .unwrap()
}

#[test]
fn var_spec_bounds() {
    assert!(VarSpec::new(0.0).is_err());
    assert!(VarSpec::new(0.5).is_err());
    let v = VarSpec::new(0.05).unwrap();
    assert!((v.z() - 1.644_853_626_951_472_2).abs() < 1e-9);
    let json = serde_json::to_string(&v).unwrap();
    assert_eq!(serde_json::from_str::<VarSpec>(&json).unwrap(), v);
    assert!(serde_json::from_str::<VarSpec>(r#"{"alpha":0.7}"#).is_err());
}

#[test]
fn exact_icdf_examples() {
    let g = Gmm::single(0.3, 2.0).unwrap();
    for p in [0.01, 0.2, 0.5, 0.95, 0.999] {
        let x = exact_icdf(&g, p).unwrap();
        assert!((x - (0.3 + 2.0 * normal_quantile(p))).abs() < 1e-10);
        assert_eq!(approx_icdf(&g, p), 0.3 + 2.0 * normal_quantile(p));
    }
    let sym = Gmm::new(vec![0.5, 0.5], vec![-1.5, 1.5], vec![0.4, 0.4]).unwrap();
    assert!(exact_icdf(&sym, 0.5).unwrap().abs() < 1e-10);
    assert!(exact_icdf(&sym, 1.0).is_err());
}

#[test]
fn exact_icdf_round_trip() {
    let mut r = rng::from_seed(9);
    for _ in 0..50 {
        let g = random_gmm(&mut r, 4);
        let mut prev = f64::NEG_INFINITY;
        for p in [0.01, 0.05, 0.3, 0.5, 0.8, 0.95, 0.99] {
            let x = exact_icdf(&g, p).unwrap();
            assert!((g.cdf(x) - p).abs() < 1e-12);
            assert!(x > prev);
            prev = x;
        }
    }
}

#[test]
fn approx_icdf_split_components() {
    let a = Gmm::new(vec![0.3, 0.7], vec![0.0, 1.0], vec![0.5, 0.2]).unwrap();
    let b = Gmm::new(
        vec![0.1, 0.2, 0.7],
        vec![0.0, 0.0, 1.0],
        vec![0.5, 0.5, 0.2],
    )
    .unwrap();
    assert!((approx_icdf(&a, 0.9) - approx_icdf(&b, 0.9)).abs() < 1e-15);
}

#[test]
fn zero_radius_returns_reference() {
    let reference = Gmm::new(
        vec![0.2, 0.5, 0.3],
        vec![-0.01, 0.0, 0.02],
        vec![0.003, 0.004, 0.005],
    )
    .unwrap();
    let var = VarSpec::new(0.05).unwrap();
    let res = worst_case_margin(&AmbiguitySet::new(reference.clone(), 0.0).unwrap(), &var).unwrap();
    assert_eq!(res.zeta, approx_icdf(&reference, 0.95));
    assert_eq!(res.worst, reference);
    assert_eq!(res.active_distance, 0.0);
    assert!(!res.non_improving);
}

fn closed_form(m: f64, s: f64, gamma: f64, z: f64) -> f64 {
    m + s * z + libm::sqrt(gamma * (1.0 + z * z))
}

#[test]
fn single_component_matches_closed_form_and_grid() {
    for &(m, s, gamma, alpha) in &[
        (0.0, 1.0, 0.25, 0.05),
        (-0.01, 0.004, 1e-5, 0.1),
        (2.0, 0.5, 0.01, 0.01),
    ] {
        let var = VarSpec::new(alpha).unwrap();
        let set = AmbiguitySet::new(Gmm::single(m, s).unwrap(), gamma).unwrap();
        let res = worst_case_margin(&set, &var).unwrap();
        let z = var.z();
        assert!((res.zeta - closed_form(m, s, gamma, z)).abs() < 1e-12);
        // Polar grid over the disc (m̂, σ̂); the maximum is on the rim.
        let r = gamma.sqrt();
        let mut grid = f64::NEG_INFINITY;
        for i in 0..200 {
            let rho = r * (i as f64 + 1.0) / 200.0;
            for j in 0..20_000 {
                let th = j as f64 * core::f64::consts::TAU / 20_000.0;
                let sh = s + rho * th.sin();
                if sh > 0.0 {
                    grid = grid.max(m + rho * th.cos() + z * sh);
                }
            }
        }
        assert!(res.zeta >= grid - 1e-12);
        assert!(
            res.zeta - grid < 1e-8 * (1.0 + res.zeta.abs()),
            "{} vs {}",
            res.zeta,
            grid
        );
        assert!((res.active_distance - gamma).abs() < 1e-6 * gamma.max(1e-300) + 1e-15);
    }
}

#[test]
fn beats_rejection_sampled_candidates() {
    let reference = Gmm::new(vec![0.4, 0.6], vec![-0.5, 0.5], vec![0.3, 0.6]).unwrap();
    let gamma = 0.04;
    let var = VarSpec::new(0.05).unwrap();
    let set = AmbiguitySet::new(reference.clone(), gamma).unwrap();
    let res = worst_case_margin(&set, &var).unwrap();
    let mut r = rng::from_seed(77);
    let rad = 1.2 * gamma.sqrt();
    let mut best = f64::NEG_INFINITY;
    let mut accepted = 0;
    for _ in 0..100_000 {
        let w0: f64 = 0.4 + r.random_range(-0.05..0.05);
        let base = |k: usize| k;
        let means: Vec<f64> = (0..2)
            .map(|k| reference.means()[base(k)] + r.random_range(-rad..rad))
            .collect();
        let stds: Vec<f64> = (0..2)
            .map(|k| (reference.stddevs()[base(k)] + r.random_range(-rad..rad)).max(1e-3))
            .collect();
        let cand = Gmm::new(vec![w0, 1.0 - w0], means, stds).unwrap();
        if membership(&set, &cand).unwrap().0 {
            accepted += 1;
            best = best.max(approx_icdf(&cand, 0.95));
        }
    }
    assert!(accepted > 1000, "{accepted}");
    assert!(res.zeta >= best - 1e-8, "{} < {}", res.zeta, best);
    assert!((res.active_distance - gamma).abs() < 1e-6);
}

#[test]
fn result_invariants() {
    let mut r = rng::from_seed(3);
    for case in 0..30 {
        let l = 1 + case % 5;
        let reference = random_gmm(&mut r, l);
        let gamma = r.random_range(0.0..0.5);
        let var = VarSpec::new(r.random_range(0.01..0.3)).unwrap();
        let set = AmbiguitySet::new(reference.clone(), gamma).unwrap();
        let res = worst_case_margin(&set, &var).unwrap();
        let (inside, d) = membership(&set, &res.worst).unwrap();
        assert!(inside, "distance {d} > {gamma}");
        assert!((d - gamma).abs() < 1e-6, "{d} vs {gamma}");
        assert!((res.zeta - approx_icdf(&res.worst, var.level())).abs() < 1e-10);
        assert!(res.objective_trace.windows(2).all(|p| p[1] >= p[0]));
        assert!(res.coupling.is_valid(1e-10));
        assert!(!res.non_improving);
        assert!(res.converged);
        // Translating the whole reference is always available.
        let shift =
            approx_icdf(&reference, var.level()) + (gamma * (1.0 + var.z() * var.z())).sqrt();
        assert!(res.zeta >= shift - 1e-10);
    }
}

#[test]
fn smaller_budget_than_reference() {
    let reference = Gmm::new(
        vec![0.3, 0.3, 0.4],
        vec![-1.0, -0.9, 1.0],
        vec![0.2, 0.25, 0.3],
    )
    .unwrap();
    let var = VarSpec::new(0.05).unwrap();
    let tight = AmbiguitySet::with_budget(reference.clone(), 0.01, 2).unwrap();
    let res = worst_case_margin(&tight, &var).unwrap();
    assert_eq!(res.worst.k(), 2);
    assert!(membership(&tight, &res.worst).unwrap().0);
    let empty = AmbiguitySet::with_budget(reference, 0.01, 1).unwrap();
    assert_eq!(
        worst_case_margin(&empty, &var),
        Err(Error::EmptyAmbiguitySet)
    );
}

fn arb_gmm() -> impl Strategy<Value = Gmm> {
    (1usize..5, any::<u64>()).prop_map(|(k, seed)| random_gmm(&mut rng::from_seed(seed), k))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn margin_monotone_in_radius(g in arb_gmm(), a in 0.0f64..0.3, b in 0.0f64..0.3) {
        let var = VarSpec::new(0.05).unwrap();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let zl = worst_case_margin(&AmbiguitySet::new(g.clone(), lo).unwrap(), &var).unwrap().zeta;
        let zh = worst_case_margin(&AmbiguitySet::new(g, hi).unwrap(), &var).unwrap().zeta;
        prop_assert!(zh >= zl - 1e-12);
    }

    #[test]
    fn margin_monotone_in_confidence(g in arb_gmm(), gamma in 0.0f64..0.3, a in 0.01f64..0.4, b in 0.01f64..0.4) {
        let set = AmbiguitySet::new(g, gamma).unwrap();
        let (small, large) = if a <= b { (a, b) } else { (b, a) };
        let z_small_alpha = worst_case_margin(&set, &VarSpec::new(small).unwrap()).unwrap().zeta;
        let z_large_alpha = worst_case_margin(&set, &VarSpec::new(large).unwrap()).unwrap().zeta;
        prop_assert!(z_small_alpha >= z_large_alpha - 1e-12);
    }

    #[test]
    fn icdf_cdf_inverse(g in arb_gmm(), p in 0.001f64..0.999) {
        let x = exact_icdf(&g, p).unwrap();
        prop_assert!((g.cdf(x) - p).abs() < 1e-12);
        let y = exact_icdf(&g, g.cdf(x)).unwrap();
        prop_assert!((x - y).abs() < 1e-10 * (1.0 + x.abs()) / g.pdf(x).max(1e-3));
    }
}
