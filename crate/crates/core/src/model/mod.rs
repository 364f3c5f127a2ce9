//! Second-quantized lattice Hamiltonians with density-density interactions and
//! an exact-diagonalization reference solver.
//!
//! The Hamiltonian is `Σ t_pq a†_p a_q + Σ w_p n_p + Σ_{p,q} v_pq n_p n_q`, where
//! the interaction sum runs over ordered pairs, so an off-diagonal pair
//! contributes `2 v_pq n_p n_q`.

mod ed;
mod lanczos;

pub use ed::{exact_ground_state, exact_ground_state_with, sector_dimension, EdOptions, EdResult};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const SYMMETRY_TOL: f64 = 1e-12;

/// Hopping matrix `t`, on-site potential `w` and interaction matrix `v`.
#[derive(Debug, Clone, PartialEq)]
pub struct HamiltonianSpec {
    t: DMatrix<f64>,
    w: DVector<f64>,
    v: DMatrix<f64>,
}

impl HamiltonianSpec {
    /// Validate and build a Hamiltonian. `t` and `v` must be symmetric with zero
    /// diagonal and all three inputs must agree on the number of sites.
    pub fn new(t: DMatrix<f64>, w: DVector<f64>, v: DMatrix<f64>) -> Result<Self> {
        let l = w.len();
        if l == 0 {
            return Err(Error::InvalidArgument("a Hamiltonian needs at least one site".into()));
        }
        for (name, m) in [("t", &t), ("v", &v)] {
            if m.nrows() != l || m.ncols() != l {
                return Err(Error::DimensionMismatch(format!(
                    "{name} is {}x{} but w has {l} entries",
                    m.nrows(),
                    m.ncols()
                )));
            }
            let asym = (m - m.transpose()).amax();
            if asym > SYMMETRY_TOL * m.amax().max(1.0) {
                return Err(Error::NotSymmetric(asym));
            }
            if m.diagonal().amax() != 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "{name} must have a zero diagonal; fold diagonal terms into w"
                )));
            }
        }
        if t.iter().chain(w.iter()).chain(v.iter()).any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("non-finite Hamiltonian entry".into()));
        }
        Ok(HamiltonianSpec { t, w, v })
    }

    pub fn num_sites(&self) -> usize {
        self.w.len()
    }

    pub fn hopping(&self) -> &DMatrix<f64> {
        &self.t
    }

    pub fn onsite(&self) -> &DVector<f64> {
        &self.w
    }

    pub fn interaction(&self) -> &DMatrix<f64> {
        &self.v
    }

    /// Same hopping and interaction with a different on-site potential.
    pub fn with_onsite(&self, w: DVector<f64>) -> Result<Self> {
        if w.len() != self.num_sites() {
            return Err(Error::DimensionMismatch(format!(
                "on-site potential of length {} for {} sites",
                w.len(),
                self.num_sites()
            )));
        }
        Ok(HamiltonianSpec { w, ..self.clone() })
    }
}

/// Range of the density-density interaction in the spinless chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InteractionProfile {
    /// `U/2` between nearest neighbours.
    Nn,
    /// `U/2`, `U/40` at distances 1 and 2.
    Nnn,
    /// `U/2`, `U/20`, `U/200` at distances 1, 2 and 3.
    Nnnn,
}

impl InteractionProfile {
    fn coefficients(self, u: f64) -> Vec<f64> {
        match self {
            InteractionProfile::Nn => vec![u / 2.0],
            InteractionProfile::Nnn => vec![u / 2.0, u / 40.0],
            InteractionProfile::Nnnn => vec![u / 2.0, u / 20.0, u / 200.0],
        }
    }
}

impl std::str::FromStr for InteractionProfile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "NN" => Ok(InteractionProfile::Nn),
            "NNN" => Ok(InteractionProfile::Nnn),
            "NNNN" => Ok(InteractionProfile::Nnnn),
            other => Err(Error::InvalidArgument(format!(
                "unknown interaction profile {other:?} (expected NN, NNN or NNNN)"
            ))),
        }
    }
}

/// Open spinless chain with unit nearest-neighbour hopping and a
/// distance-dependent interaction scaled by `u`.
pub fn build_spinless_chain(l: usize, u: f64, profile: InteractionProfile) -> Result<HamiltonianSpec> {
    if l < 2 {
        return Err(Error::InvalidArgument(format!("a chain needs at least 2 sites, got {l}")));
    }
    let coef = profile.coefficients(u);
    let mut t = DMatrix::zeros(l, l);
    let mut v = DMatrix::zeros(l, l);
    for p in 0..l {
        for q in 0..l {
            let d = p.abs_diff(q);
            if d == 1 {
                t[(p, q)] = 1.0;
            }
            if d >= 1 && d <= coef.len() {
                v[(p, q)] = coef[d - 1];
            }
        }
    }
    HamiltonianSpec::new(t, DVector::zeros(l), v)
}

/// Index of the spin orbital at grid position `(i, j)` (0-based, `i` along x)
/// in the flattened ordering used by [`build_spinful_lattice`]: all spin-up
/// orbitals first, then all spin-down orbitals.
pub fn spinful_index(lx: usize, ly: usize, i: usize, j: usize, spin_down: bool) -> usize {
    j * lx + i + if spin_down { lx * ly } else { 0 }
}

/// Extended Hubbard model on an open `lx × ly` grid: hopping `-1` between
/// neighbouring sites of equal spin, on-site repulsion `u` and
/// nearest-neighbour density repulsion `v_nn`.
pub fn build_spinful_lattice(lx: usize, ly: usize, u: f64, v_nn: f64) -> Result<HamiltonianSpec> {
    if lx == 0 || ly == 0 {
        return Err(Error::InvalidArgument(format!("grid dimensions must be positive, got {lx}x{ly}")));
    }
    let l = 2 * lx * ly;
    let mut t = DMatrix::zeros(l, l);
    let mut v = DMatrix::zeros(l, l);
    let mut bonds = Vec::new();
    for j in 0..ly {
        for i in 0..lx {
            if i + 1 < lx {
                bonds.push(((i, j), (i + 1, j)));
            }
            if j + 1 < ly {
                bonds.push(((i, j), (i, j + 1)));
            }
            let up = spinful_index(lx, ly, i, j, false);
            let dn = spinful_index(lx, ly, i, j, true);
            v[(up, dn)] = u / 2.0;
            v[(dn, up)] = u / 2.0;
        }
    }
    for ((i1, j1), (i2, j2)) in bonds {
        for s in [false, true] {
            let a = spinful_index(lx, ly, i1, j1, s);
            let b = spinful_index(lx, ly, i2, j2, s);
            t[(a, b)] = -1.0;
            t[(b, a)] = -1.0;
            for s2 in [false, true] {
                let c = spinful_index(lx, ly, i2, j2, s2);
                v[(a, c)] += v_nn / 2.0;
                v[(c, a)] += v_nn / 2.0;
            }
        }
    }
    HamiltonianSpec::new(t, DVector::zeros(l), v)
}

/// Amplitudes over the full occupation basis of `L` sites. Entry `k` belongs to
/// the configuration whose site `p` (0-based) is occupied iff bit `p` of `k` is set.
#[derive(Debug, Clone, PartialEq)]
pub struct FockVector {
    sites: usize,
    amplitudes: Vec<f64>,
}

impl FockVector {
    pub fn new(sites: usize, amplitudes: Vec<f64>) -> Result<Self> {
        if sites > 30 || amplitudes.len() != 1usize << sites {
            return Err(Error::DimensionMismatch(format!(
                "{} amplitudes for {sites} sites",
                amplitudes.len()
            )));
        }
        if amplitudes.iter().any(|a| !a.is_finite()) {
            return Err(Error::InvalidArgument("non-finite amplitude".into()));
        }
        Ok(FockVector { sites, amplitudes })
    }

    /// The single occupation configuration `occupied` (site `p` ↔ entry `p`).
    pub fn basis_state(occupied: &[bool]) -> Self {
        let mut amplitudes = vec![0.0; 1 << occupied.len()];
        let k = occupied.iter().enumerate().fold(0usize, |k, (p, &o)| k | (usize::from(o) << p));
        amplitudes[k] = 1.0;
        FockVector { sites: occupied.len(), amplitudes }
    }

    pub fn sites(&self) -> usize {
        self.sites
    }

    pub fn amplitudes(&self) -> &[f64] {
        &self.amplitudes
    }

    pub fn norm_squared(&self) -> f64 {
        self.amplitudes.iter().map(|a| a * a).sum()
    }
}

/// Site occupations `ρ_p = Σ_s |ψ(s)|² s_p` of a normalized state.
pub fn density_of(psi: &FockVector) -> Result<Vec<f64>> {
    let n2 = psi.norm_squared();
    if (n2 - 1.0).abs() > 1e-10 {
        return Err(Error::NotNormalized(n2));
    }
    let mut rho = vec![0.0; psi.sites];
    for (k, a) in psi.amplitudes.iter().enumerate() {
        if *a != 0.0 {
            let w = a * a;
            for (p, r) in rho.iter_mut().enumerate() {
                if k >> p & 1 == 1 {
                    *r += w;
                }
            }
        }
    }
    Ok(rho)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chain_profiles() {
        let h = build_spinless_chain(3, 20.0, InteractionProfile::Nnn).unwrap();
        assert_eq!(h.interaction()[(0, 1)], 10.0);
        assert_eq!(h.interaction()[(0, 2)], 0.5);
        assert_eq!(h.interaction()[(1, 2)], 10.0);
        assert_eq!(h.hopping()[(0, 1)], 1.0);
        assert_eq!(h.hopping()[(0, 2)], 0.0);

        let h = build_spinless_chain(4, 20.0, InteractionProfile::Nnnn).unwrap();
        assert!((h.interaction()[(0, 3)] - 0.1).abs() < 1e-15);

        let h = build_spinless_chain(2, 0.0, InteractionProfile::Nn).unwrap();
        assert_eq!(h.interaction().amax(), 0.0);
        assert_eq!(h.hopping(), &DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]));
        assert!(build_spinless_chain(1, 1.0, InteractionProfile::Nn).is_err());
    }

    #[test]
    fn single_spatial_site() {
        let h = build_spinful_lattice(1, 1, 4.0, 1.0).unwrap();
        assert_eq!(h.num_sites(), 2);
        assert_eq!(h.hopping().amax(), 0.0);
        // ordered-pair convention: 2·v_12 is the pair coefficient
        assert_eq!(2.0 * h.interaction()[(0, 1)], 4.0);
        assert!(build_spinful_lattice(0, 2, 1.0, 1.0).is_err());
    }

    #[test]
    fn three_by_three_has_all_open_bonds() {
        let h = build_spinful_lattice(3, 3, 10.0, 0.5).unwrap();
        assert_eq!(h.num_sites(), 18);
        let hops = h.hopping().iter().filter(|&&x| x != 0.0).count() / 2;
        // 12 spatial bonds, two spin species
        assert_eq!(hops, 24);
        let a = spinful_index(3, 3, 0, 0, false);
        let b = spinful_index(3, 3, 1, 0, true);
        assert!((2.0 * h.interaction()[(a, b)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn rejects_invalid_matrices() {
        let t = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.5, 0.0]);
        assert!(HamiltonianSpec::new(t, DVector::zeros(2), DMatrix::zeros(2, 2)).is_err());
        let v = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        assert!(HamiltonianSpec::new(DMatrix::zeros(2, 2), DVector::zeros(2), v).is_err());
    }

    #[test]
    fn densities_of_simple_states() {
        let psi = FockVector::basis_state(&[true, false]);
        assert_eq!(density_of(&psi).unwrap(), vec![1.0, 0.0]);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let psi = FockVector::new(2, vec![0.0, h, h, 0.0]).unwrap();
        let rho = density_of(&psi).unwrap();
        assert!((rho[0] - 0.5).abs() < 1e-15 && (rho[1] - 0.5).abs() < 1e-15);
        let bad = FockVector::new(1, vec![1.0, 1.0]).unwrap();
        assert!(matches!(density_of(&bad), Err(Error::NotNormalized(_))));
    }
}
