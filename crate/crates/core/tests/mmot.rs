use nalgebra::DMatrix;
use proptest::prelude::*;
use sce_core::mmot::{solve_exact_mmot, MarginalSet, PairwiseCost};

/// Every pair repels with unit strength when both sites are occupied.
fn uniform_repulsion(l: usize) -> PairwiseCost {
    let mut c = PairwiseCost::zeros(&vec![2; l]);
    for p in 0..l {
        for q in p + 1..l {
            c.set_block(p, q, DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0])).unwrap();
        }
    }
    c
}

/// For exchangeable costs the optimum only sees the particle-number
/// distribution, whose best choice interpolates `k(k−1)` between the two
/// integers around the mean.
fn uniform_repulsion_value(mean: f64) -> f64 {
    let f = |k: f64| k * (k - 1.0);
    let k = mean.floor();
    f(k) + (mean - k) * (f(k + 1.0) - f(k))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn equal_densities_under_uniform_repulsion(l in 2usize..=6, rho in 0.01f64..0.99) {
        let m = MarginalSet::from_density(&vec![rho; l]).unwrap();
        let r = solve_exact_mmot(&uniform_repulsion(l), &m).unwrap();
        let expect = uniform_repulsion_value(rho * l as f64);
        prop_assert!((r.value - expect).abs() < 1e-9, "{} vs {expect}", r.value);
        prop_assert!((r.dual_value - r.value).abs() < 1e-9);
        prop_assert!(r.min_dual_slack > -1e-9);
    }

    #[test]
    fn plan_reproduces_the_marginals(rho in prop::collection::vec(0.0f64..1.0, 2..=6)) {
        let m = MarginalSet::from_density(&rho).unwrap();
        let r = solve_exact_mmot(&uniform_repulsion(rho.len()), &m).unwrap();
        prop_assert!(r.complementary_slackness.abs() < 1e-9);
        let w = r.plan.weights();
        prop_assert!(w.iter().all(|&x| x >= -1e-12));
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let l = rho.len();
        for (p, &target) in rho.iter().enumerate() {
            // last site varies fastest
            let occ: f64 = w.iter().enumerate().filter(|(k, _)| k >> (l - 1 - p) & 1 == 1).map(|(_, x)| x).sum();
            prop_assert!((occ - target).abs() < 1e-9);
            let m = r.plan.marginalize(&[p]).unwrap();
            prop_assert!((m.values[1] - target).abs() < 1e-9);
        }
        prop_assert!((r.plan.cost(&uniform_repulsion(l)) - r.value).abs() < 1e-9);
    }
}
