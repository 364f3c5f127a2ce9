use std::f64::consts::PI;

use proptest::prelude::*;
use sce_core::model::{build_spinful_lattice, build_spinless_chain, density_of, exact_ground_state, InteractionProfile};

/// Open tight-binding chain levels `2 cos(kπ/(L+1))`, lowest first.
fn chain_levels(l: usize) -> Vec<f64> {
    let mut e: Vec<f64> = (1..=l).map(|k| 2.0 * (k as f64 * PI / (l as f64 + 1.0)).cos()).collect();
    e.sort_by(f64::total_cmp);
    e
}

#[test]
fn free_chain_fills_the_lowest_levels() {
    for l in 2..=10 {
        let h = build_spinless_chain(l, 0.0, InteractionProfile::Nn).unwrap();
        let levels = chain_levels(l);
        for n in 0..=l {
            let r = exact_ground_state(&h, n).unwrap();
            let expect: f64 = levels[..n].iter().sum();
            assert!((r.energy - expect).abs() < 1e-9, "L={l} N={n}: {} vs {expect}", r.energy);
        }
    }
}

#[test]
fn hubbard_dimer_matches_the_two_level_formula() {
    for &(u, v) in &[(0.0, 0.0), (1.0, 0.0), (4.0, 0.0), (8.0, 0.4), (3.0, 1.5)] {
        let h = build_spinful_lattice(2, 1, u, v).unwrap();
        let r = exact_ground_state(&h, 2).unwrap();
        let expect = 0.5 * (u + v) - (0.25 * (u - v) * (u - v) + 4.0).sqrt();
        assert!((r.energy - expect).abs() < 1e-10, "U={u} V={v}: {} vs {expect}", r.energy);
    }
}

#[test]
fn full_chain_pays_every_bond() {
    let l = 7;
    let h = build_spinless_chain(l, 3.0, InteractionProfile::Nnnn).unwrap();
    let r = exact_ground_state(&h, l).unwrap();
    let expect = 3.0 * ((l - 1) as f64 + (l - 2) as f64 / 10.0 + (l - 3) as f64 / 100.0);
    assert!((r.energy - expect).abs() < 1e-10);
    assert!(r.density.iter().all(|&x| (x - 1.0).abs() < 1e-12));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn ground_state_density_is_normalized_and_mirror_symmetric(
        l in 3usize..=9,
        fill in 0.0f64..1.0,
        u in 0.0f64..10.0,
    ) {
        let n = ((l as f64 * fill).round() as usize).min(l);
        let h = build_spinless_chain(l, u, InteractionProfile::Nnn).unwrap();
        let r = exact_ground_state(&h, n).unwrap();
        let total: f64 = r.density.iter().sum();
        prop_assert!((total - n as f64).abs() < 1e-9);
        prop_assert!(r.density.iter().all(|&x| (-1e-12..=1.0 + 1e-12).contains(&x)));
        let again = density_of(&r.ground_state).unwrap();
        for (a, b) in r.density.iter().zip(&again) {
            prop_assert!((a - b).abs() < 1e-10);
        }
        // reflection symmetry holds whenever the ground state is unique
        if r.gap.is_some_and(|g| g > 1e-6) {
            for p in 0..l {
                prop_assert!((r.density[p] - r.density[l - 1 - p]).abs() < 1e-6);
            }
        }
    }
}
