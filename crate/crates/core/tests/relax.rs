mod common;

use common::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sce_core::conic::SolverConfig;
use sce_core::mmot::{solve_exact_mmot, JointMeasure, MarginalSet};
use sce_core::model::InteractionProfile;
use sce_core::relax::*;

fn cfg(tol: f64) -> SolverConfig {
    SolverConfig { tolerance: tol, ..Default::default() }
}

fn central_difference(
    c: &sce_core::mmot::PairwiseCost,
    rho: &[f64],
    order: RelaxationOrder,
    h: f64,
) -> Vec<f64> {
    let mut solver = RelaxationSolver::new(order, cfg(1e-11));
    (0..rho.len())
        .map(|r| {
            let mut up = rho.to_vec();
            let mut dn = rho.to_vec();
            up[r] += h;
            dn[r] -= h;
            let fu = solver.solve(c, &marginals(&up)).unwrap().value;
            let fd = solver.solve(c, &marginals(&dn)).unwrap().value;
            (fu - fd) / (2.0 * h)
        })
        .collect()
}

#[test]
fn two_marginal_gradient_matches_finite_differences() {
    let c = chain_cost(6, 2.0, InteractionProfile::Nnn);
    let rho = [0.45, 0.6, 0.35, 0.7, 0.5, 0.4];
    let r = solve_relaxation(&c, &marginals(&rho), RelaxationOrder::Two, &cfg(1e-11)).unwrap();
    let g = r.gradient.unwrap();
    let fd = central_difference(&c, &rho, RelaxationOrder::Two, 1e-5);
    assert!(rel_l2(&g, &fd) < 1e-3, "{g:?} vs {fd:?}");
}

#[test]
fn three_marginal_gradient_matches_finite_differences() {
    let c = chain_cost(6, 2.0, InteractionProfile::Nnnn);
    let rho = [0.45, 0.6, 0.35, 0.7, 0.5, 0.4];
    let r = solve_relaxation(&c, &marginals(&rho), RelaxationOrder::Three, &cfg(1e-11)).unwrap();
    let g = r.gradient.unwrap();
    let fd = central_difference(&c, &rho, RelaxationOrder::Three, 1e-5);
    assert!(rel_l2(&g, &fd) < 1e-3, "{g:?} vs {fd:?}");
}

#[test]
fn envelope_gradient_agrees_with_potential_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let c = random_binary_cost(&mut rng, 5);
    let rho = interior_density(&mut rng, 5);
    let m = marginals(&rho);
    let relax = assemble_two_marginal(&c, &m).unwrap();
    let sol = sce_core::conic::solve(relax.problem(), &cfg(1e-10)).unwrap();
    let cert = extract_certificate(&sol, &relax, &c, 1e-10).unwrap();
    let a = sdp_gradient(&cert).unwrap();
    let b = envelope_gradient(&sol, &relax).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-7 * (1.0 + x.abs()), "{x} vs {y}");
    }
}

#[test]
fn mirror_symmetric_chain_has_symmetric_potential() {
    let c = chain_cost(6, 3.0, InteractionProfile::Nnn);
    let rho = [0.4, 0.6, 0.55, 0.55, 0.6, 0.4];
    let r = solve_relaxation(&c, &marginals(&rho), RelaxationOrder::Two, &cfg(1e-10)).unwrap();
    let g = r.gradient.unwrap();
    for i in 0..3 {
        assert!((g[i] - g[5 - i]).abs() < 1e-5, "{g:?}");
    }
}

#[test]
fn three_sites_collapse_to_exact_transport() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..10 {
        let c = random_dense_cost(&mut rng, 3);
        let m = marginals(&interior_density(&mut rng, 3));
        let lp = solve_exact_mmot(&c, &m).unwrap();
        let r = solve_relaxation(&c, &m, RelaxationOrder::Three, &cfg(1e-9)).unwrap();
        assert!((r.value - lp.value).abs() < 1e-6, "{} vs {}", r.value, lp.value);
    }
}

#[test]
fn nearest_neighbour_chain_is_exact() {
    let c = chain_cost(14, 5.0, InteractionProfile::Nn);
    let rho: Vec<f64> = (0..14).map(|p| 0.6 + 0.25 * (p as f64 * 0.9).cos()).collect();
    let m = marginals(&rho);
    let lp = solve_exact_mmot(&c, &m).unwrap();
    let r = solve_relaxation(&c, &m, RelaxationOrder::Two, &cfg(1e-9)).unwrap();
    assert!((r.value - lp.value).abs() < 1e-6, "{} vs {}", r.value, lp.value);
}

#[test]
fn converged_moment_matrix_is_feasible_and_annihilates_differences() {
    let c = chain_cost(7, 4.0, InteractionProfile::Nnnn);
    let m = marginals(&[0.3, 0.5, 0.6, 0.45, 0.7, 0.55, 0.4]);
    for order in [RelaxationOrder::Two, RelaxationOrder::Three] {
        let r = solve_relaxation(&c, &m, order, &cfg(1e-7)).unwrap();
        let rep = check_primal_feasibility(&r.moments, r.three_marginals.as_ref(), &m).unwrap();
        assert!(rep.max_violation() <= 1e-6, "{order:?}: {rep:?}");
        assert!(rep.annihilation <= 1e-6 * rep.frobenius_norm, "{order:?}: {rep:?}");
        assert!(r.relative_gap() <= 1e-6);
    }
}

#[test]
fn certificate_objective_matches_primal() {
    let c = chain_cost(5, 3.0, InteractionProfile::Nnn);
    let m = marginals(&[0.35, 0.6, 0.5, 0.65, 0.3]);
    let r = solve_relaxation(&c, &m, RelaxationOrder::Two, &cfg(1e-9)).unwrap();
    let obj = r.moments.objective(&c);
    assert!((obj - r.value).abs() < 1e-12);
    assert!((r.certificate.dual_objective(&m) - obj).abs() <= 1e-6 * (1.0 + obj.abs()));
    assert!(r.certificate.min_eigenvalue() > -1e-7);
    assert!(r.certificate.potential_violation(&c) < 1e-7);
    let x = r.certificate.x_block(2);
    assert_eq!(x, -r.certificate.y_block(2, 2));
    let z = r.certificate.z_block(&c, 1, 3);
    assert!(z.min() > -1e-7);
}

#[test]
fn normalized_certificate_keeps_objective_and_feasibility() {
    let c = chain_cost(6, 5.0, InteractionProfile::Nnnn);
    let m = marginals(&[0.4, 0.65, 0.3, 0.55, 0.7, 0.45]);
    let r = solve_relaxation(&c, &m, RelaxationOrder::Two, &cfg(1e-10)).unwrap();
    let n = r.certificate.normalized(&c, &m).unwrap();
    assert!((n.dual_objective(&m) - r.dual_value).abs() < 1e-7);
    assert!(n.potential_violation(&c) < 1e-12);
    assert!(n.min_eigenvalue() > -1e-8);
    let p = MomentMatrix::difference_matrix(n.sizes());
    assert!((n.y() * p).amax() < 1e-10);
    for q in 1..6 {
        assert_eq!(n.phi(0, q)[0], 0.0);
    }
    let g0 = r.gradient.unwrap();
    let g1 = sdp_gradient(&n).unwrap();
    assert!(rel_l2(&g1, &g0) < 1e-4, "{g1:?} vs {g0:?}");
}

#[test]
fn representable_points_are_feasible_with_matching_objective() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let c = random_dense_cost(&mut rng, 4);
    let w: Vec<f64> = (0..16).map(|k| 1.0 + (k as f64 * 0.7).sin()).collect();
    let s: f64 = w.iter().sum();
    let mu = JointMeasure::new(vec![2; 4], w.iter().map(|x| x / s).collect()).unwrap();
    let m = MarginalSet::new((0..4).map(|p| mu.marginalize(&[p]).unwrap().values).collect()).unwrap();
    let mm = MomentMatrix::from_joint(&mu).unwrap();
    let k = ThreeMarginalTensor::from_joint(&mu).unwrap();
    let rep = check_primal_feasibility(&mm, Some(&k), &m).unwrap();
    assert!(rep.max_violation() < 1e-12);
    assert!((mm.objective(&c) - mu.cost(&c)).abs() < 1e-12);
}

#[test]
fn general_state_spaces_bound_the_exact_value() {
    use nalgebra::DMatrix;
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let sizes = [3usize, 2, 4, 3];
    let mut c = sce_core::mmot::PairwiseCost::zeros(&sizes);
    for p in 0..4 {
        for q in p + 1..4 {
            c.set_block(p, q, DMatrix::from_fn(sizes[p], sizes[q], |_, _| rng.gen::<f64>())).unwrap();
        }
    }
    let m = MarginalSet::new(
        sizes
            .iter()
            .map(|&n| {
                let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.2..1.0)).collect();
                let s: f64 = w.iter().sum();
                w.into_iter().map(|x| x / s).collect()
            })
            .collect(),
    )
    .unwrap();
    let lp = solve_exact_mmot(&c, &m).unwrap().value;
    let two = solve_relaxation(&c, &m, RelaxationOrder::Two, &cfg(1e-9)).unwrap();
    let three = solve_relaxation(&c, &m, RelaxationOrder::Three, &cfg(1e-9)).unwrap();
    assert!(two.value <= three.value + 1e-6);
    assert!(three.value <= lp + 1e-6);
    assert!(two.gradient.is_none());
    assert!(matches!(sdp_gradient(&two.certificate), Err(sce_core::Error::NonBinary)));
}

#[test]
fn unconverged_solution_has_no_certificate() {
    let c = chain_cost(5, 3.0, InteractionProfile::Nnn);
    let m = marginals(&[0.35, 0.6, 0.5, 0.65, 0.3]);
    let relax = assemble_two_marginal(&c, &m).unwrap();
    let sol = sce_core::conic::solve(relax.problem(), &SolverConfig { max_iterations: 3, ..cfg(1e-9) }).unwrap();
    assert!(matches!(
        extract_certificate(&sol, &relax, &c, 1e-9),
        Err(sce_core::Error::NotConverged { .. })
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn relaxations_bound_the_exact_value(seed in 0u64..10_000, l in 3usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = random_binary_cost(&mut rng, l);
        let m = marginals(&interior_density(&mut rng, l));
        let lp = solve_exact_mmot(&c, &m).unwrap().value;
        let two = solve_relaxation(&c, &m, RelaxationOrder::Two, &cfg(1e-8)).unwrap().value;
        let three = solve_relaxation(&c, &m, RelaxationOrder::Three, &cfg(1e-8)).unwrap().value;
        let slack = 1e-6 * (1.0 + lp.abs());
        prop_assert!(two <= three + slack, "{two} > {three}");
        prop_assert!(three <= lp + slack, "{three} > {lp}");
    }

    #[test]
    fn potential_shift_is_invisible(seed in 0u64..10_000, shift in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = random_binary_cost(&mut rng, 4);
        let m = marginals(&interior_density(&mut rng, 4));
        let r = solve_relaxation(&c, &m, RelaxationOrder::Two, &cfg(1e-8)).unwrap();
        let cert = &r.certificate;
        let (mut phi, mut psi) = (Vec::new(), Vec::new());
        for p in 0..4 {
            for q in p + 1..4 {
                phi.push(cert.phi(p, q).iter().map(|v| v + shift).collect());
                psi.push(cert.psi(p, q).iter().map(|v| v - shift).collect());
            }
        }
        let moved = DualCertificate::new(cert.sizes().to_vec(), cert.y().clone(), phi, psi, None).unwrap();
        prop_assert!((moved.dual_objective(&m) - cert.dual_objective(&m)).abs() < 1e-10);
        prop_assert!((moved.potential_violation(&c) - cert.potential_violation(&c)).abs() < 1e-10);
    }
}
