use super::*;
use crate::rng;
use alloc::vec;
use nalgebra::DVector;
use proptest::prelude::*;
use rand::Rng as _;

/// Minimum over every basic feasible solution of the transportation
/// polytope, found by brute-force enumeration of column subsets.
fn vertex_enumeration(a: &[f64], b: &[f64], cost: &DMatrix<f64>) -> f64 {
    let (k, l) = (a.len(), b.len());
    let n = k * l;
    let m = k + l - 1;
    let mut eq = DMatrix::<f64>::zeros(m, n);
    let mut rhs = DVector::<f64>::zeros(m);
    for i in 0..k {
        for j in 0..l {
            eq[(i, i * l + j)] = 1.0;
        }
        rhs[i] = a[i];
    }
    for j in 0..l - 1 {
        for i in 0..k {
            eq[(k + j, i * l + j)] = 1.0;
        }
        rhs[k + j] = b[j];
    }
    let mut best = f64::INFINITY;
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != m {
            continue;
        }
        let cols: Vec<usize> = (0..n).filter(|c| mask >> c & 1 == 1).collect();
        let sub = DMatrix::from_fn(m, m, |r, c| eq[(r, cols[c])]);
        let lu = sub.lu();
        if lu.determinant().abs() < 1e-12 {
            continue;
        }
        let x = lu.solve(&rhs).unwrap();
        if x.iter().all(|&v| v >= -1e-12) {
            let c: f64 = cols
                .iter()
                .zip(x.iter())
                .map(|(&c, &v)| v * cost[(c / l, c % l)])
                .sum();
            best = best.min(c);
        }
    }
    best
}

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
fn w2_gaussian_examples() {
    assert_eq!(w2_gaussian(0.0, 1.0, 0.0, 1.0), 0.0);
    assert_eq!(w2_gaussian(0.0, 1.0, 1.0, 1.0), 1.0);
    assert_eq!(w2_gaussian(0.0, 1.0, 0.0, 3.0), 4.0);
    assert_eq!(
        w2_gaussian(0.3, 0.2, -1.0, 2.0),
        w2_gaussian(-1.0, 2.0, 0.3, 0.2)
    );
}

#[test]
fn mw2_self_is_zero_with_diagonal_plan() {
    let g = Gmm::new(
        vec![0.2, 0.5, 0.3],
        vec![-1.0, 0.0, 2.0],
        vec![0.3, 0.4, 0.5],
    )
    .unwrap();
    let (d, c) = mw2(&g, &g).unwrap();
    assert_eq!(d, 0.0);
    assert!(c.is_valid(1e-10));
    for k in 0..3 {
        assert!((c.w[(k, k)] - g.weights()[k]).abs() < 1e-12);
    }
}

#[test]
fn mw2_single_components_is_w2() {
    let a = Gmm::single(0.4, 0.7).unwrap();
    let b = Gmm::single(-0.1, 1.3).unwrap();
    assert_eq!(mw2(&a, &b).unwrap().0, w2_gaussian(0.4, 0.7, -0.1, 1.3));
}

#[test]
fn mw2_matches_vertex_enumeration() {
    let mut r = rng::from_seed(21);
    for (ka, kb) in [(2, 2), (2, 2), (2, 2), (2, 3), (3, 2), (3, 3), (1, 4)] {
        for _ in 0..5 {
            let (a, b) = (random_gmm(&mut r, ka), random_gmm(&mut r, kb));
            let (d, c) = mw2(&a, &b).unwrap();
            let oracle = vertex_enumeration(a.weights(), b.weights(), &cost_matrix(&a, &b));
            assert!((d - oracle).abs() < 1e-12, "{d} vs {oracle}");
            assert!(c.is_valid(1e-10));
            assert!((c.cost(&cost_matrix(&a, &b)) - d).abs() < 1e-12);
        }
    }
}

#[test]
fn mw2_on_larger_instances_matches_enumeration() {
    let mut r = rng::from_seed(4);
    for _ in 0..3 {
        let (a, b) = (random_gmm(&mut r, 3), random_gmm(&mut r, 5));
        let oracle = vertex_enumeration(a.weights(), b.weights(), &cost_matrix(&a, &b));
        assert!((mw2(&a, &b).unwrap().0 - oracle).abs() < 1e-12);
    }
    let (a, b) = (random_gmm(&mut r, 10), random_gmm(&mut r, 10));
    let (_, c) = mw2(&a, &b).unwrap();
    assert!(c.is_valid(1e-10));
}

#[test]
fn zero_weight_components_are_dropped() {
    let a = Gmm::new(
        vec![0.5, 0.0, 0.5],
        vec![0.0, 50.0, 1.0],
        vec![1.0, 1.0, 1.0],
    )
    .unwrap();
    let b = Gmm::new(vec![0.5, 0.5], vec![0.0, 1.0], vec![1.0, 1.0]).unwrap();
    let (d, c) = mw2(&a, &b).unwrap();
    assert!(d.abs() < 1e-15);
    assert_eq!(c.w.nrows(), 3);
    assert_eq!(c.w.row(1).sum(), 0.0);
    assert!(c.is_valid(1e-10));
}

#[test]
fn membership_examples() {
    let reference = Gmm::new(vec![0.4, 0.6], vec![0.0, 1.0], vec![0.5, 0.3]).unwrap();
    let set = AmbiguitySet::new(reference.clone(), 0.0).unwrap();
    assert!(membership(&set, &reference).unwrap().0);

    let set = AmbiguitySet::new(Gmm::single(0.2, 0.5).unwrap(), 0.09).unwrap();
    for (d, inside) in [(0.29, true), (0.3, true), (0.31, false), (-0.31, false)] {
        let cand = Gmm::single(0.2 + d, 0.5).unwrap();
        assert_eq!(membership(&set, &cand).unwrap().0, inside, "d = {d}");
    }
    assert!(AmbiguitySet::new(reference.clone(), -1.0).is_err());
    assert!(AmbiguitySet::with_budget(reference, 1.0, 0).is_err());
}

#[test]
fn coupling_json_is_row_major() {
    let c = Coupling::product(&[0.25, 0.75], &[0.5, 0.25, 0.25]);
    let json = serde_json::to_string(&c).unwrap();
    assert!(
        json.contains("[[0.125,0.0625,0.0625],[0.375,0.1875,0.1875]]"),
        "{json}"
    );
    let back: Coupling = serde_json::from_str(&json).unwrap();
    assert_eq!(back, c);
}

fn arb_gmm() -> impl Strategy<Value = Gmm> {
    (1usize..5, any::<u64>()).prop_map(|(k, seed)| random_gmm(&mut rng::from_seed(seed), k))
}

proptest! {
    #[test]
    fn mw2_is_a_metric(a in arb_gmm(), b in arb_gmm(), c in arb_gmm()) {
        let d = |x: &Gmm, y: &Gmm| mw2(x, y).unwrap().0;
        let (ab, ba) = (d(&a, &b), d(&b, &a));
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!(d(&a, &a) < 1e-15);
        prop_assert!(ab.sqrt() <= d(&a, &c).sqrt() + d(&c, &b).sqrt() + 1e-8);
    }

    #[test]
    fn optimal_plan_reproduces_marginals(a in arb_gmm(), b in arb_gmm()) {
        let (_, c) = mw2(&a, &b).unwrap();
        prop_assert!(c.is_valid(1e-10));
    }

    #[test]
    fn moving_toward_coupled_component_never_increases(a in arb_gmm(), b in arb_gmm(), step in 0.0f64..1.0) {
        let (d0, c) = mw2(&a, &b).unwrap();
        // Move candidate component 0 along the mean axis toward the
        // barycentre of the reference components it is coupled to.
        let target = (0..b.k()).map(|l| c.w[(0, l)] * b.means()[l]).sum::<f64>() / a.weights()[0];
        let mut means = a.means().to_vec();
        means[0] += step * (target - means[0]);
        let moved = Gmm::new(a.weights().to_vec(), means, a.stddevs().to_vec()).unwrap();
        prop_assert!(mw2(&moved, &b).unwrap().0 <= d0 + 1e-12);
    }
}
