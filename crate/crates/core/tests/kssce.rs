mod common;

use nalgebra::{DMatrix, DVector};
use sce_core::kssce::*;
use sce_core::mmot::{cost_from_interaction, solve_exact_mmot, MarginalSet};
use sce_core::model::{build_spinless_chain, HamiltonianSpec, InteractionProfile};

fn chain_hopping(l: usize) -> DMatrix<f64> {
    DMatrix::from_fn(l, l, |i, j| if i.abs_diff(j) == 1 { 1.0 } else { 0.0 })
}

#[test]
fn vanishing_interaction_needs_one_update() {
    let l = 6;
    let w = DVector::from_vec(vec![0.2, -0.1, 0.4, 0.0, -0.3, 0.1]);
    let h = HamiltonianSpec::new(chain_hopping(l), w.clone(), DMatrix::zeros(l, l)).unwrap();
    let cfg = ScfConfig { mixing: MixingScheme::Simple, alpha: 1.0, ..Default::default() };
    let r = scf_iterate(&h, 3, &cfg).unwrap();
    assert!(r.converged);
    assert_eq!(r.iterations, 1);
    let o = effective_eigensolve(&chain_hopping(l), w.as_slice(), &[0.0; 6], 3).unwrap();
    let want: f64 = o.energies.iter().sum();
    assert!((r.total_energy - want).abs() < 1e-10);
}

#[test]
fn mirror_symmetric_chain_keeps_symmetry() {
    let h = build_spinless_chain(6, 3.0, InteractionProfile::Nnn).unwrap();
    let r = scf_iterate(&h, 4, &ScfConfig::with_backend(Backend::Sdp2)).unwrap();
    assert!(r.converged);
    for p in 0..3 {
        assert!((r.density[p] - r.density[5 - p]).abs() < 1e-5, "{:?}", r.density);
    }
}

#[test]
fn result_invariants_hold() {
    let h = build_spinless_chain(8, 5.0, InteractionProfile::Nnnn).unwrap();
    let r = scf_iterate(&h, 5, &ScfConfig::with_backend(Backend::Sdp2)).unwrap();
    assert!(r.converged);
    let gram = r.orbitals.transpose() * &r.orbitals;
    assert!((gram - DMatrix::identity(5, 5)).amax() < 1e-10);
    for p in 0..8 {
        let d: f64 = r.orbitals.row(p).iter().map(|x| x * x).sum();
        assert!((d - r.output_density[p]).abs() < 1e-10);
    }
    assert!((r.density.iter().sum::<f64>() - 5.0).abs() < 1e-10);
    assert!((r.output_density.iter().sum::<f64>() - 5.0).abs() < 1e-10);
    assert!(r.density.iter().all(|&x| (1e-6..=1.0 - 1e-6).contains(&x)));
    assert_eq!(r.trace.len(), r.iterations + 1);
}

#[test]
fn energy_decomposes_into_kinetic_onsite_and_sce() {
    let l = 6;
    let base = build_spinless_chain(l, 1.0, InteractionProfile::Nn).unwrap();
    let w = DVector::from_vec(vec![-1.0, 0.5, 0.0, 0.8, -0.6, 0.2]);
    let h = base.with_onsite(w.clone()).unwrap();
    let cfg = ScfConfig { tolerance: 1e-10, ..Default::default() };
    let r = scf_iterate(&h, 3, &cfg).unwrap();
    assert!(r.converged);
    let t = h.hopping();
    let kinetic: f64 = (0..3)
        .map(|k| {
            let phi = r.orbitals.column(k);
            (phi.transpose() * t * phi)[(0, 0)]
        })
        .sum();
    let onsite: f64 = w.iter().zip(&r.output_density).map(|(a, b)| a * b).sum();
    let c = cost_from_interaction(h.interaction()).unwrap();
    let e_sce = solve_exact_mmot(&c, &MarginalSet::from_density(&r.output_density).unwrap()).unwrap().value;
    assert!((kinetic + onsite + e_sce - r.total_energy).abs() < 1e-8);
}

#[test]
fn constant_potential_shift_leaves_energy_unchanged() {
    let t = chain_hopping(5);
    let w = [0.1, -0.2, 0.3, 0.0, 0.2];
    let v = [0.5, 1.0, 0.7, 0.2, 0.9];
    let rho = [0.4, 0.6, 0.5, 0.3, 0.2];
    let a = effective_eigensolve(&t, &w, &v, 2).unwrap();
    let e0 = total_energy(&a.energies, &v, &rho, 1.3);
    for shift in [-2.0, 0.5, 7.0] {
        let vs: Vec<f64> = v.iter().map(|x| x + shift).collect();
        let b = effective_eigensolve(&t, &w, &vs, 2).unwrap();
        for (x, y) in a.energies.iter().zip(&b.energies) {
            assert!((y - x - shift).abs() < 1e-12);
        }
        assert!((total_energy(&b.energies, &vs, &rho, 1.3) - e0).abs() < 1e-8);
    }
}

#[test]
fn anderson_tames_an_expanding_linear_map() {
    // ρ_out = A ρ_in + b with 1ᵀA = 0, spectral radius 1.5 and fixed point ρ*
    let star = DVector::from_vec(vec![0.4, 0.5, 0.6, 0.45, 0.55]);
    let basis = DMatrix::from_fn(5, 5, |i, j| if j == 0 { 1.0 } else { ((i * 7 + j * 3) % 5) as f64 + 0.1 * (i * j) as f64 });
    let q = basis.qr().q();
    let diag = DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, -1.5, 1.2, -0.8, 0.5]));
    let a = &q * diag * q.transpose();
    let radius = a.clone().symmetric_eigenvalues().amax();
    assert!((radius - 1.5).abs() < 1e-12);
    let b = &star - &a * &star;
    let n: f64 = star.sum();
    let step = |x: &[f64]| -> Vec<f64> { (&a * DVector::from_column_slice(x) + &b).iter().copied().collect() };

    // zero-sum perturbation, so the start keeps the particle number
    let kick = [0.01, -0.02, 0.005, 0.0, 0.005];
    let start: Vec<f64> = star.iter().zip(kick).map(|(x, k)| x + k).collect();

    let mut x = start.clone();
    for _ in 0..50 {
        x = step(&x);
    }
    let plain = x.iter().zip(star.iter()).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
    assert!(plain > 1.0, "undamped iteration should blow up ({plain})");

    let mut history = Vec::new();
    let mut x = start;
    let mut err = f64::INFINITY;
    for _ in 0..50 {
        let out = step(&x);
        history.push((x.clone(), out));
        x = mix(&history, MixingScheme::Anderson, 1.0, 3, n, 1e-6).unwrap();
        err = x.iter().zip(star.iter()).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        if err < 1e-8 {
            break;
        }
    }
    assert!(err < 1e-8, "Anderson error {err}");
}

#[test]
fn functionals_are_ordered_at_a_fixed_density() {
    let h = build_spinless_chain(7, 4.0, InteractionProfile::Nnnn).unwrap();
    let c = cost_from_interaction(h.interaction()).unwrap();
    let rho = [0.5, 0.7, 0.4, 0.6, 0.65, 0.35, 0.55];
    let cfg = ScfConfig::default().solver;
    let val = |b| SceFunctional::new(b, c.clone(), cfg.clone()).evaluate(&rho).unwrap().value;
    let (lp, s2, s3) = (val(Backend::Lp), val(Backend::Sdp2), val(Backend::Sdp3));
    assert!(s2 <= s3 + 1e-6 && s3 <= lp + 1e-6, "{s2} {s3} {lp}");
}

#[test]
fn invalid_particle_numbers_are_rejected() {
    let h = build_spinless_chain(4, 1.0, InteractionProfile::Nn).unwrap();
    assert!(scf_iterate(&h, 0, &ScfConfig::default()).is_err());
    assert!(scf_iterate(&h, 4, &ScfConfig::default()).is_err());
    let bad = ScfConfig { alpha: 0.0, ..Default::default() };
    assert!(scf_iterate(&h, 2, &bad).is_err());
}

#[test]
fn trace_lists_every_step() {
    let h = build_spinless_chain(5, 2.0, InteractionProfile::Nnn).unwrap();
    let mut buf = Vec::new();
    let r = scf_iterate_traced(&h, 2, &ScfConfig::default(), Some(&mut buf)).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "iteration,residual,density_change,e_sce,total_energy");
    assert_eq!(lines.len(), r.trace.len() + 1);
}
