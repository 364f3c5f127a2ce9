use log::warn;
use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Gaps at or below this (relative to `1 + |ε_N|`) count as a degenerate HOMO.
pub const DEGENERACY_TOL: f64 = 1e-10;

/// The `N` lowest orbitals of a one-body Hamiltonian and their density.
#[derive(Debug, Clone)]
pub struct Orbitals {
    /// `ε_1 ≤ … ≤ ε_N`.
    pub energies: Vec<f64>,
    /// `L × N`, orthonormal columns.
    pub orbitals: DMatrix<f64>,
    /// `ρ_p = Σ_k Φ_pk²`.
    pub density: Vec<f64>,
    /// `ε_{N+1} − ε_N`, absent when `N = L` or `N = 0`.
    pub homo_lumo_gap: Option<f64>,
}

impl Orbitals {
    /// HOMO and LUMO energies are equal within [`DEGENERACY_TOL`].
    pub fn is_degenerate(&self) -> bool {
        match (self.homo_lumo_gap, self.energies.last()) {
            (Some(g), Some(e)) => g <= DEGENERACY_TOL * (1.0 + e.abs()),
            _ => false,
        }
    }
}

/// Diagonalize `t + diag(w + v)` and occupy the `n` lowest eigenvectors.
///
/// Eigenvalues are sorted ascending and every eigenvector is signed so that
/// its largest-magnitude entry is positive. A degenerate HOMO is logged, not
/// rejected; callers decide what to do with [`Orbitals::is_degenerate`].
pub fn effective_eigensolve(t: &DMatrix<f64>, w: &[f64], v: &[f64], n: usize) -> Result<Orbitals> {
    let l = t.nrows();
    if t.ncols() != l || w.len() != l || v.len() != l {
        return Err(Error::DimensionMismatch(format!(
            "hopping is {}x{}, onsite has {} entries, potential has {}",
            t.nrows(),
            t.ncols(),
            w.len(),
            v.len()
        )));
    }
    if n > l {
        return Err(Error::ParticleNumber { n, sites: l });
    }
    let asym = (t - t.transpose()).amax();
    if asym > 1e-12 * (1.0 + t.amax()) {
        return Err(Error::NotSymmetric(asym));
    }
    let h = t + DMatrix::from_diagonal(&DVector::from_iterator(l, w.iter().zip(v).map(|(a, b)| a + b)));
    let eig = SymmetricEigen::new(h);
    let mut order: Vec<usize> = (0..l).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));

    let mut orbitals = DMatrix::zeros(l, n);
    for (k, &idx) in order.iter().take(n).enumerate() {
        let col = eig.eigenvectors.column(idx);
        let pivot = col.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        orbitals.set_column(k, &(col * sign));
    }
    let energies: Vec<f64> = order.iter().take(n).map(|&i| eig.eigenvalues[i]).collect();
    let density = (0..l).map(|p| orbitals.row(p).iter().map(|x| x * x).sum()).collect();
    let homo_lumo_gap = (n > 0 && n < l).then(|| eig.eigenvalues[order[n]] - eig.eigenvalues[order[n - 1]]);
    let out = Orbitals { energies, orbitals, density, homo_lumo_gap };
    if out.is_degenerate() {
        warn!("degenerate HOMO: gap {:.3e} at ε_N = {:.6}", out.homo_lumo_gap.unwrap_or(0.0), out.energies[n - 1]);
    }
    Ok(out)
}

/// `Σ_k ε_k − gradᵀρ + E_sce`.
pub fn total_energy(energies: &[f64], grad: &[f64], rho: &[f64], e_sce: f64) -> f64 {
    energies.iter().sum::<f64>() - grad.iter().zip(rho).map(|(g, r)| g * r).sum::<f64>() + e_sce
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain(l: usize) -> DMatrix<f64> {
        DMatrix::from_fn(l, l, |i, j| if i.abs_diff(j) == 1 { 1.0 } else { 0.0 })
    }

    #[test]
    fn dimer_bonding_orbital() {
        let o = effective_eigensolve(&chain(2), &[0.0; 2], &[0.0; 2], 1).unwrap();
        assert!((o.energies[0] + 1.0).abs() < 1e-14);
        assert!((o.density[0] - 0.5).abs() < 1e-14 && (o.density[1] - 0.5).abs() < 1e-14);
        assert!((o.homo_lumo_gap.unwrap() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn onsite_penalty_depletes_site() {
        let o = effective_eigensolve(&chain(4), &[0.0, 0.0, 0.0, 10.0], &[0.0; 4], 1).unwrap();
        assert!(o.density[3] < 0.05);
    }

    #[test]
    fn orbitals_are_orthonormal() {
        let t = chain(7);
        let w = [0.3, -0.2, 0.5, 0.0, 1.1, -0.7, 0.2];
        let v = [0.1, 0.4, -0.3, 0.2, 0.0, 0.6, -0.1];
        for n in 0..=7 {
            let o = effective_eigensolve(&t, &w, &v, n).unwrap();
            let gram = o.orbitals.transpose() * &o.orbitals;
            assert!((gram - DMatrix::identity(n, n)).amax() < 1e-10);
            assert!((o.density.iter().sum::<f64>() - n as f64).abs() < 1e-10);
        }
    }

    #[test]
    fn ring_shell_is_flagged() {
        let mut t = chain(4);
        t[(0, 3)] = 1.0;
        t[(3, 0)] = 1.0;
        let o = effective_eigensolve(&t, &[0.0; 4], &[0.0; 4], 2).unwrap();
        assert!(o.is_degenerate());
        let o = effective_eigensolve(&t, &[0.0; 4], &[0.0; 4], 1).unwrap();
        assert!(!o.is_degenerate());
    }

    #[test]
    fn energy_arithmetic() {
        assert!((total_energy(&[-1.0], &[1.0, 1.0], &[0.5, 0.5], 0.4) + 1.6).abs() < 1e-15);
        assert_eq!(total_energy(&[-1.0, 0.5], &[0.0; 3], &[0.2, 0.3, 0.5], 0.0), -0.5);
    }

    #[test]
    fn rejects_too_many_particles() {
        assert!(matches!(
            effective_eigensolve(&chain(3), &[0.0; 3], &[0.0; 3], 4),
            Err(Error::ParticleNumber { n: 4, sites: 3 })
        ));
    }
}
