//! Exact diagonalization in a fixed particle-number sector.

use log::{debug, warn};
use nalgebra::{DMatrix, SymmetricEigen};

use super::lanczos::{lowest_eigenpair, LanczosOptions};
use super::{FockVector, HamiltonianSpec};
use crate::error::{Error, Result};

/// Controls for [`exact_ground_state_with`].
#[derive(Debug, Clone)]
pub struct EdOptions {
    /// Sectors up to this dimension are diagonalized densely.
    pub dense_limit: usize,
    /// Residual norm at which the iterative eigensolver stops.
    pub tolerance: f64,
    pub max_sites: usize,
    pub krylov_size: usize,
    pub max_restarts: usize,
    /// Seed of the iterative solver's start vector.
    pub seed: u64,
}

impl Default for EdOptions {
    fn default() -> Self {
        EdOptions {
            dense_limit: 4000,
            tolerance: 1e-10,
            max_sites: 20,
            krylov_size: 80,
            max_restarts: 400,
            seed: 0x5eed,
        }
    }
}

/// Ground state of a fixed-`N` sector.
#[derive(Debug, Clone)]
pub struct EdResult {
    pub energy: f64,
    pub ground_state: FockVector,
    pub density: Vec<f64>,
    pub particles: usize,
    pub sector_dim: usize,
    /// Distance to the next eigenvalue of the sector (`None` for a one-state sector).
    pub gap: Option<f64>,
}

/// Number of occupation configurations of `l` sites holding `n` particles.
pub fn sector_dimension(l: usize, n: usize) -> u128 {
    if n > l {
        return 0;
    }
    let k = n.min(l - n) as u128;
    let mut c: u128 = 1;
    for i in 0..k {
        c = c * (l as u128 - i) / (i + 1);
    }
    c
}

/// Lowest eigenpair of the `n`-particle sector with default options.
pub fn exact_ground_state(h: &HamiltonianSpec, n: usize) -> Result<EdResult> {
    exact_ground_state_with(h, n, &EdOptions::default())
}

struct Sector {
    states: Vec<u32>,
    binom: Vec<Vec<usize>>,
}

impl Sector {
    fn new(l: usize, n: usize) -> Self {
        let mut binom = vec![vec![0usize; n + 2]; l + 1];
        for (m, row) in binom.iter_mut().enumerate() {
            row[0] = 1;
            for k in 1..row.len() {
                row[k] = if k > m { 0 } else { sector_dimension(m, k) as usize };
            }
        }
        let mut states = Vec::with_capacity(sector_dimension(l, n) as usize);
        if n == 0 {
            states.push(0);
        } else {
            // Gosper's hack enumerates fixed-weight masks in increasing order
            let mut s: u64 = (1u64 << n) - 1;
            while s < 1u64 << l {
                states.push(s as u32);
                let c = s & s.wrapping_neg();
                let r = s + c;
                s = (((r ^ s) >> 2) / c) | r;
            }
        }
        Sector { states, binom }
    }

    /// Position of `mask` in increasing order among masks of equal weight.
    fn rank(&self, mask: u32) -> usize {
        let mut r = 0;
        let mut k = 0;
        let mut m = mask;
        while m != 0 {
            let pos = m.trailing_zeros() as usize;
            k += 1;
            r += self.binom[pos][k];
            m &= m - 1;
        }
        r
    }
}

/// Sparse symmetric sector Hamiltonian in compressed-row form.
struct SectorMatrix {
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SectorMatrix {
    fn build(h: &HamiltonianSpec, sector: &Sector) -> Self {
        let l = h.num_sites();
        let t = h.hopping();
        let w = h.onsite();
        let v = h.interaction();
        let hops: Vec<(usize, usize, f64)> = (0..l)
            .flat_map(|p| (0..l).map(move |q| (p, q)))
            .filter(|&(p, q)| t[(p, q)] != 0.0)
            .map(|(p, q)| (p, q, t[(p, q)]))
            .collect();
        let mut row_ptr = vec![0];
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        for (idx, &s) in sector.states.iter().enumerate() {
            let occ = |p: usize| s >> p & 1 == 1;
            let mut diag = 0.0;
            for p in (0..l).filter(|&p| occ(p)) {
                diag += w[p];
                for q in (0..l).filter(|&q| q != p && occ(q)) {
                    diag += v[(p, q)];
                }
            }
            cols.push(idx);
            vals.push(diag);
            for &(p, q, amp) in &hops {
                // a†_p a_q with signs (−1)^(occupied sites below the operator)
                if !occ(q) || occ(p) {
                    continue;
                }
                let below = |m: u32, k: usize| (m & ((1u32 << k) - 1)).count_ones();
                let after_q = s & !(1 << q);
                let parity = below(s, q) + below(after_q, p);
                let target = after_q | (1 << p);
                let sign = if parity % 2 == 0 { 1.0 } else { -1.0 };
                cols.push(sector.rank(target));
                vals.push(sign * amp);
            }
            row_ptr.push(cols.len());
        }
        SectorMatrix { row_ptr, cols, vals }
    }

    fn dim(&self) -> usize {
        self.row_ptr.len() - 1
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = (self.row_ptr[i]..self.row_ptr[i + 1]).map(|k| self.vals[k] * x[self.cols[k]]).sum();
        }
    }

    fn dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                m[(i, self.cols[k])] += self.vals[k];
            }
        }
        m
    }
}

/// Lowest eigenpair of the `n`-particle sector of `h`.
pub fn exact_ground_state_with(h: &HamiltonianSpec, n: usize, opts: &EdOptions) -> Result<EdResult> {
    let l = h.num_sites();
    if n > l {
        return Err(Error::ParticleNumber { n, sites: l });
    }
    if l > opts.max_sites.min(30) {
        return Err(Error::TooLarge { what: "exact diagonalization sites", size: l as u128, limit: opts.max_sites as u128 });
    }
    let sector = Sector::new(l, n);
    let mat = SectorMatrix::build(h, &sector);
    let dim = mat.dim();
    debug!("exact diagonalization: L={l}, N={n}, sector dimension {dim}");

    let (energy, mut vec, gap) = if dim == 1 {
        (mat.vals[0], vec![1.0], None)
    } else if dim <= opts.dense_limit {
        let eig = SymmetricEigen::new(mat.dense());
        let mut order: Vec<usize> = (0..dim).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let e0 = eig.eigenvalues[order[0]];
        let x: Vec<f64> = eig.eigenvectors.column(order[0]).iter().copied().collect();
        (e0, x, Some(eig.eigenvalues[order[1]] - e0))
    } else {
        let lopts = LanczosOptions {
            tolerance: opts.tolerance,
            krylov_size: opts.krylov_size,
            max_restarts: opts.max_restarts,
            seed: opts.seed,
        };
        let apply = |x: &[f64], y: &mut [f64]| mat.apply(x, y);
        let (e0, x0) = lowest_eigenpair(dim, &apply, &[], &lopts)?;
        let (e1, _) = lowest_eigenpair(dim, &apply, std::slice::from_ref(&x0), &lopts)?;
        (e0, x0, Some(e1 - e0))
    };
    if let Some(g) = gap {
        if g < 1e-8 {
            warn!("degenerate ground state (gap {g:.2e}); reporting one member of the eigenspace");
        }
    }
    // deterministic sign: largest-magnitude amplitude positive
    let imax = (0..dim).max_by(|&a, &b| vec[a].abs().total_cmp(&vec[b].abs())).unwrap_or(0);
    if vec[imax] < 0.0 {
        vec.iter_mut().for_each(|x| *x = -*x);
    }

    let mut amplitudes = vec![0.0; 1usize << l];
    let mut density = vec![0.0; l];
    for (&s, &a) in sector.states.iter().zip(&vec) {
        amplitudes[s as usize] = a;
        for (p, r) in density.iter_mut().enumerate() {
            if s >> p & 1 == 1 {
                *r += a * a;
            }
        }
    }
    Ok(EdResult {
        energy,
        ground_state: FockVector::new(l, amplitudes)?,
        density,
        particles: n,
        sector_dim: dim,
        gap,
    })
}

/// Dense matrix of `h` on the full `2^L` Fock space, built operator by operator.
#[cfg(test)]
pub(crate) fn full_fock_matrix(h: &HamiltonianSpec) -> DMatrix<f64> {
    let l = h.num_sites();
    let dim = 1usize << l;
    let mut m = DMatrix::zeros(dim, dim);
    let sign_below = |s: usize, p: usize| if (s & ((1 << p) - 1)).count_ones().is_multiple_of(2) { 1.0 } else { -1.0 };
    for s in 0..dim {
        for p in 0..l {
            for q in 0..l {
                let t = h.hopping()[(p, q)];
                if t == 0.0 || s >> q & 1 == 0 {
                    continue;
                }
                let s1 = s ^ (1 << q);
                let f1 = sign_below(s, q);
                if s1 >> p & 1 == 1 {
                    continue;
                }
                let s2 = s1 | (1 << p);
                m[(s2, s)] += t * f1 * sign_below(s1, p);
            }
            if s >> p & 1 == 1 {
                m[(s, s)] += h.onsite()[p];
                for q in 0..l {
                    if s >> q & 1 == 1 {
                        m[(s, s)] += h.interaction()[(p, q)];
                    }
                }
            }
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_spinful_lattice, build_spinless_chain, density_of, InteractionProfile};
    use nalgebra::DVector;

    #[test]
    fn two_site_hopping() {
        let t = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let h = HamiltonianSpec::new(t, DVector::zeros(2), DMatrix::zeros(2, 2)).unwrap();
        let r = exact_ground_state(&h, 1).unwrap();
        assert!((r.energy + 1.0).abs() < 1e-14);
        assert!((r.density[0] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn vacuum_sector() {
        let h = build_spinless_chain(5, 3.0, InteractionProfile::Nnn).unwrap();
        let r = exact_ground_state(&h, 0).unwrap();
        assert_eq!(r.energy, 0.0);
        assert!(r.density.iter().all(|&x| x == 0.0));
        assert!(exact_ground_state(&h, 6).is_err());
    }

    #[test]
    fn spinful_dimer_matches_closed_form() {
        for u in [0.0, 1.0, 4.0, 8.0, 16.0] {
            let h = build_spinful_lattice(2, 1, u, 0.0).unwrap();
            let r = exact_ground_state(&h, 2).unwrap();
            let exact = (u - (u * u + 16.0f64).sqrt()) / 2.0;
            assert!((r.energy - exact).abs() < 1e-10, "U={u}: {} vs {exact}", r.energy);
            assert_eq!(r.sector_dim, 6);
        }
        let h = build_spinful_lattice(2, 1, 0.0, 0.0).unwrap();
        assert!((exact_ground_state(&h, 1).unwrap().energy + 1.0).abs() < 1e-12);
    }

    #[test]
    fn sector_matches_full_fock_space() {
        for (l, prof) in [(4, InteractionProfile::Nn), (5, InteractionProfile::Nnn), (6, InteractionProfile::Nnnn)] {
            let mut h = build_spinless_chain(l, 2.5, prof).unwrap();
            let w = DVector::from_fn(l, |p, _| 0.3 * p as f64 - 0.4);
            h = h.with_onsite(w).unwrap();
            let full = full_fock_matrix(&h);
            assert!((&full - full.transpose()).amax() < 1e-14);
            for n in 0..=l {
                let sector = Sector::new(l, n);
                let mat = SectorMatrix::build(&h, &sector).dense();
                for (i, &a) in sector.states.iter().enumerate() {
                    for (j, &b) in sector.states.iter().enumerate() {
                        assert_eq!(mat[(i, j)], full[(a as usize, b as usize)]);
                    }
                }
            }
        }
    }

    #[test]
    fn particle_hole_symmetry_without_interaction() {
        let h = build_spinless_chain(7, 0.0, InteractionProfile::Nn).unwrap();
        for n in 0..=7 {
            let a = exact_ground_state(&h, n).unwrap().energy;
            let b = exact_ground_state(&h, 7 - n).unwrap().energy;
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn lanczos_path_agrees_with_dense() {
        let h = build_spinless_chain(12, 4.0, InteractionProfile::Nnnn).unwrap();
        let dense = exact_ground_state(&h, 6).unwrap();
        let opts = EdOptions { dense_limit: 10, ..Default::default() };
        let iter = exact_ground_state_with(&h, 6, &opts).unwrap();
        assert!((dense.energy - iter.energy).abs() < 1e-10);
        assert!((dense.gap.unwrap() - iter.gap.unwrap()).abs() < 1e-8);
        for (a, b) in dense.density.iter().zip(&iter.density) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn density_sums_to_particle_number() {
        let h = build_spinless_chain(4, 5.0, InteractionProfile::Nn).unwrap();
        let r = exact_ground_state(&h, 2).unwrap();
        let rho = density_of(&r.ground_state).unwrap();
        assert!((rho.iter().sum::<f64>() - 2.0).abs() < 1e-10);
        for (a, b) in rho.iter().zip(&r.density) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn sector_ranks_are_consistent() {
        let s = Sector::new(9, 4);
        assert_eq!(s.states.len(), 126);
        for (i, &m) in s.states.iter().enumerate() {
            assert_eq!(s.rank(m), i);
        }
    }
}
